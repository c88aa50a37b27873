"""Exact objective and gradient by enumeration, plus Monte-Carlo REINFORCE checks.

Reward only depends on which *required* attributes the caption discloses, so
``J(theta)`` is a finite sum over the ``2^|S|`` disclosure patterns of each
question type.  That sum is differentiated analytically and compared against
score-function estimates collected through the real episode machinery.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.special import expit

from . import rng as rngmod
from .core import BINARY, ContractViolation, RewardConfig
from .policy import disclosure_probs, sampler
from .synthenv import EnvConfig, run_episode, sample_prompt

MAX_ENUM = 20
MIN_MC_SAMPLES = 1000


@dataclass(frozen=True)
class AskCoupling:
    """Makes the reasoner's request probability depend on one policy logit.

    ``p_ask = logistic(scale * theta[coord] + bias)`` breaks the
    theta-independence of post-action randomness (a shared-trunk reasoner).
    """

    coord: tuple[int, int]
    scale: float = 1.0
    bias: float = 0.0

    def p_ask(self, theta: np.ndarray) -> float:
        return float(expit(self.scale * theta[self.coord] + self.bias))

    def dp_ask(self, theta: np.ndarray) -> float:
        pa = self.p_ask(theta)
        return self.scale * pa * (1.0 - pa)


def _patterns(s: int) -> np.ndarray:
    if s > MAX_ENUM:
        raise ContractViolation(f"required set of size {s} exceeds the enumeration bound {MAX_ENUM}")
    return np.array(list(itertools.product((False, True), repeat=s)), dtype=bool).reshape(-1, s)


def _pattern_rewards(missing: np.ndarray, env: EnvConfig, reward_cfg: RewardConfig, p_ask: float):
    """Expected reward of each pattern and its derivative w.r.t. p_ask."""
    clar_value = 1.0 if reward_cfg.mode == BINARY else reward_cfg.alpha
    g = env.p_guess
    asks = (missing >= 1) & (missing <= env.k_ask)
    # a clarified answer is correct only if the single reveal completes the required set
    on_ask = np.where(missing == 1, clar_value, 0.0)
    er = np.where(missing == 0, 1.0, np.where(asks, p_ask * on_ask + (1 - p_ask) * g, g))
    der = np.where(asks, on_ask - g, 0.0)
    return er, der


def _enumerate(theta: np.ndarray, env: EnvConfig, reward_cfg: RewardConfig, coupling):
    if theta.shape != (env.T_q, env.F):
        raise ContractViolation(f"theta shape {theta.shape} != ({env.T_q}, {env.F})")
    p_ask = env.p_ask if coupling is None else coupling.p_ask(theta)
    value = 0.0
    grad = np.zeros_like(theta, dtype=np.float64)
    dj_dpask = 0.0
    for t, required in enumerate(env.required_sets):
        w = env.question_dist[t]
        idx = sorted(required)
        p = disclosure_probs(theta, t)[idx]
        pats = _patterns(len(idx))
        prob = np.prod(np.where(pats, p, 1.0 - p), axis=1)
        er, der = _pattern_rewards(len(idx) - pats.sum(axis=1), env, reward_cfg, p_ask)
        value += w * float(prob @ er)
        # d prob / d theta_j = prob * (d_j - p_j)
        grad[t, idx] += w * ((prob * er) @ (pats - p))
        dj_dpask += w * float(prob @ der)
    if coupling is not None:
        grad[coupling.coord] += dj_dpask * coupling.dp_ask(theta)
    return value, grad


def exact_expected_reward(
    theta: np.ndarray, env: EnvConfig, reward_cfg: RewardConfig, coupling: Optional[AskCoupling] = None
) -> float:
    return _enumerate(np.asarray(theta, dtype=np.float64), env, reward_cfg, coupling)[0]


def exact_gradient(
    theta: np.ndarray, env: EnvConfig, reward_cfg: RewardConfig, coupling: Optional[AskCoupling] = None
) -> np.ndarray:
    return _enumerate(np.asarray(theta, dtype=np.float64), env, reward_cfg, coupling)[1]


def finite_difference_gradient(theta, env, reward_cfg, h=1e-5, coupling=None) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    out = np.zeros_like(theta)
    for ij in np.ndindex(theta.shape):
        up, down = theta.copy(), theta.copy()
        up[ij] += h
        down[ij] -= h
        out[ij] = (
            exact_expected_reward(up, env, reward_cfg, coupling)
            - exact_expected_reward(down, env, reward_cfg, coupling)
        ) / (2 * h)
    return out


@dataclass
class ScoreSamples:
    """Per-episode ingredients of a score-function estimate."""

    scores: np.ndarray  # (N, T_q, F) caption score
    rewards: np.ndarray  # (N,)
    extra_scores: np.ndarray  # (N,) score of the reasoner's ask decision w.r.t. the coupled logit


def collect_score_samples(
    theta: np.ndarray,
    env: EnvConfig,
    reward_cfg: RewardConfig,
    n: int,
    seed: int = 0,
    coupling: Optional[AskCoupling] = None,
) -> ScoreSamples:
    theta = np.asarray(theta, dtype=np.float64)
    sample = sampler(theta)
    p_ask = None if coupling is None else coupling.p_ask(theta)
    probs = np.vstack([disclosure_probs(theta, t) for t in range(env.T_q)])
    qtypes = np.empty(n, dtype=np.intp)
    masks = np.empty((n, env.F), dtype=bool)
    rewards = np.empty(n)
    extra = np.zeros(n)
    for i in range(n):
        key = rngmod.episode_key(seed, rngmod.ORACLE, i)
        scene, question = sample_prompt(key, env)
        ep = run_episode(sample, scene, question, reward_cfg, key, env, p_ask=p_ask)
        qtypes[i] = question.qtype
        masks[i] = ep.c0.mask(env.F)
        rewards[i] = ep.reward
        if coupling is not None:
            m = len(question.required - ep.c0.indices)
            if 1 <= m <= env.k_ask:
                # d/dtheta log Bernoulli(asked; p_ask)
                extra[i] = coupling.scale * ((1.0 - p_ask) if ep.clarified else -p_ask)
    scores = np.zeros((n, env.T_q, env.F))
    scores[np.arange(n), qtypes] = masks - probs[qtypes]
    return ScoreSamples(scores, rewards, extra)


Baseline = Union[None, str, float]


def _baseline_values(rewards: np.ndarray, baseline: Baseline) -> np.ndarray:
    if baseline is None or baseline == "none":
        return np.zeros_like(rewards)
    if baseline == "loo":
        n = rewards.size
        return (rewards.sum() - rewards) / (n - 1)
    if isinstance(baseline, str):
        raise ContractViolation(f"unknown baseline {baseline!r}")
    return np.full_like(rewards, float(baseline))


def reinforce_estimate(samples: ScoreSamples, baseline: Baseline = None):
    """Mean and per-entry standard error of score * (reward - baseline)."""
    adv = samples.rewards - _baseline_values(samples.rewards, baseline)
    terms = samples.scores * adv[:, None, None]
    n = adv.size
    return terms.mean(axis=0), terms.std(axis=0, ddof=1) / np.sqrt(n)


def mc_gradient_reinforce(
    theta: np.ndarray,
    env: EnvConfig,
    reward_cfg: RewardConfig,
    n: int,
    baseline: Baseline = None,
    seed: int = 0,
):
    if n < MIN_MC_SAMPLES:
        raise ContractViolation(f"need at least {MIN_MC_SAMPLES} Monte-Carlo episodes, got {n}")
    return reinforce_estimate(collect_score_samples(theta, env, reward_cfg, n, seed), baseline)


def compare_entries(exact: np.ndarray, estimate: np.ndarray, stderr: np.ndarray, z: float = 3.0):
    rows = []
    for t, f in np.ndindex(exact.shape):
        se = float(stderr[t, f])
        dev = abs(float(estimate[t, f]) - float(exact[t, f]))
        rows.append(
            {
                "qtype": t,
                "attr": f,
                "exact": float(exact[t, f]),
                "estimate": float(estimate[t, f]),
                "stderr": se,
                # zero-variance entries must match exactly
                "pass": dev <= z * se if se > 0 else dev <= 1e-12,
            }
        )
    return rows


def verify_unbiasedness(
    theta: np.ndarray,
    env: EnvConfig,
    reward_cfg: RewardConfig,
    n: int,
    seed: int = 0,
    z: float = 3.0,
) -> dict:
    """Score-function estimates (no baseline, constant baseline) against the exact gradient."""
    if n < MIN_MC_SAMPLES:
        raise ContractViolation(f"need at least {MIN_MC_SAMPLES} Monte-Carlo episodes, got {n}")
    theta = np.asarray(theta, dtype=np.float64)
    exact = exact_gradient(theta, env, reward_cfg)
    samples = collect_score_samples(theta, env, reward_cfg, n, seed)
    constant = exact_expected_reward(theta, env, reward_cfg)
    report = {"n": n, "seed": seed, "z": z, "expected_reward": constant, "baselines": {}}
    for name, b in (("none", None), ("constant", constant)):
        est, se = reinforce_estimate(samples, b)
        rows = compare_entries(exact, est, se, z)
        report["baselines"][name] = {
            "baseline_value": 0.0 if b is None else b,
            "entries": rows,
            "pass": all(r["pass"] for r in rows),
        }
    report["pass"] = all(v["pass"] for v in report["baselines"].values())
    return report


def bias_demo_theta_dependent(
    theta: np.ndarray,
    env: EnvConfig,
    reward_cfg: RewardConfig,
    n: int,
    coupling: AskCoupling,
    seed: int = 0,
) -> dict:
    """Naive vs corrected score-function estimates when the reasoner shares a logit with the policy."""
    theta = np.asarray(theta, dtype=np.float64)
    samples = collect_score_samples(theta, env, reward_cfg, n, seed, coupling)
    exact = float(exact_gradient(theta, env, reward_cfg, coupling)[coupling.coord])
    t, f = coupling.coord
    naive_terms = samples.scores[:, t, f] * samples.rewards
    corrected_terms = (samples.scores[:, t, f] + samples.extra_scores) * samples.rewards
    sqn = np.sqrt(n)
    naive, naive_se = float(naive_terms.mean()), float(naive_terms.std(ddof=1) / sqn)
    corr, corr_se = float(corrected_terms.mean()), float(corrected_terms.std(ddof=1) / sqn)
    naive_biased = abs(naive - exact) > 5 * naive_se
    corrected_ok = abs(corr - exact) <= 3 * corr_se
    return {
        "coord": [t, f],
        "p_ask": coupling.p_ask(theta),
        "exact": exact,
        "naive": {"estimate": naive, "stderr": naive_se, "z": abs(naive - exact) / naive_se},
        "corrected": {"estimate": corr, "stderr": corr_se, "z": abs(corr - exact) / corr_se},
        "naive_biased": bool(naive_biased),
        "corrected_ok": bool(corrected_ok),
        "n": n,
    }
