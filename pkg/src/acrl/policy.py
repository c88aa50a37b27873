"""The trainable captioner: independent Bernoulli disclosure per attribute.

``theta[t, f]`` is the logit of disclosing attribute ``f`` when answering a
question of type ``t``.  The caption is therefore a binary mask whose
log-probability, score and KL divergence to a frozen reference all have
closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import Caption, ContractViolation, Question, Scene

P_MIN = 1e-12
P_MAX = 1.0 - 1e-12


def disclosure_probs(theta: np.ndarray, qtype: int) -> np.ndarray:
    if not 0 <= qtype < theta.shape[0]:
        raise ContractViolation(f"qtype {qtype} outside [0, {theta.shape[0]})")
    return expit(theta[qtype])


def batch_logprob(theta: np.ndarray, qtypes: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Row-wise log-probabilities of disclosure masks; shared by every caller
    so that sampling-time and update-time values agree bit for bit."""
    p = np.clip(expit(theta[qtypes]), P_MIN, P_MAX)
    return np.where(masks, np.log(p), np.log1p(-p)).sum(axis=1)


def logprob(theta: np.ndarray, question: Question, mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (theta.shape[1],):
        raise ContractViolation(f"mask must have length {theta.shape[1]}")
    if not 0 <= question.qtype < theta.shape[0]:
        raise ContractViolation(f"qtype {question.qtype} outside [0, {theta.shape[0]})")
    return float(batch_logprob(theta, np.array([question.qtype]), mask[None, :])[0])


def score(theta: np.ndarray, question: Question, mask) -> np.ndarray:
    """Gradient of ``logprob`` w.r.t. theta: ``d - p`` on the question's row."""
    g = np.zeros_like(theta)
    g[question.qtype] = np.asarray(mask, dtype=np.float64) - disclosure_probs(theta, question.qtype)
    return g


def sample_mask(theta: np.ndarray, qtype: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random(theta.shape[1]) < disclosure_probs(theta, qtype)


def sample_caption(
    theta: np.ndarray, scene: Scene, question: Question, rng: np.random.Generator
) -> tuple[Caption, float]:
    if len(scene.attributes) != theta.shape[1]:
        raise ContractViolation("scene length does not match theta")
    mask = sample_mask(theta, question.qtype, rng)
    return Caption.from_mask(scene, mask), logprob(theta, question, mask)


def sampler(theta: np.ndarray):
    """Bind a (read-only) parameter copy into a caption sampler for ``run_episode``."""
    frozen = np.array(theta, dtype=np.float64, copy=True)
    frozen.setflags(write=False)

    def _sample(scene: Scene, question: Question, rng: np.random.Generator):
        return sample_caption(frozen, scene, question, rng)

    return _sample


@dataclass(frozen=True)
class RefSnapshot:
    theta_ref: np.ndarray
    created_at_step: int = 0

    def __post_init__(self):
        # the snapshot owns a private read-only copy
        ref = np.array(self.theta_ref, dtype=np.float64, copy=True)
        ref.setflags(write=False)
        object.__setattr__(self, "theta_ref", ref)


def snapshot(theta: np.ndarray, step: int = 0) -> RefSnapshot:
    return RefSnapshot(theta, step)


def _bernoulli_kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p = np.clip(p, P_MIN, P_MAX)
    q = np.clip(q, P_MIN, P_MAX)
    return p * (np.log(p) - np.log(q)) + (1 - p) * (np.log1p(-p) - np.log1p(-q))


def kl_to_ref(theta: np.ndarray, snap: RefSnapshot, question_dist) -> float:
    """Closed-form KL(pi_theta || pi_ref), averaged over question types."""
    if theta.shape != snap.theta_ref.shape:
        raise ContractViolation("theta and snapshot shapes differ")
    w = np.asarray(question_dist, dtype=np.float64)
    per_cell = _bernoulli_kl(expit(theta), expit(snap.theta_ref))
    return float(max(0.0, np.dot(w, per_cell.sum(axis=1))))


def kl_grad(theta: np.ndarray, snap: RefSnapshot, question_dist) -> np.ndarray:
    # d/dtheta KL(Bern(p)||Bern(q)) = p(1-p) * (theta - theta_ref)
    p = expit(theta)
    w = np.asarray(question_dist, dtype=np.float64)[:, None]
    return w * p * (1 - p) * (theta - snap.theta_ref)
