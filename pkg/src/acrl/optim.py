"""Group advantages and the clipped surrogate update.

All gradients here are *ascent* directions for the reward objective.  The
clipped loss is a minimisation target; it is negated exactly once, inside
``surrogate_gradient``.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .core import ContractViolation, Episode, GroupStats
from .policy import RefSnapshot, batch_logprob, kl_grad

VAR_EPS = 1e-12
MEAN_CLAMP = 1e-6
CONC_FLOOR = 1e-6
SIGMA_FLOOR = 1e-6

BNPO = "bnpo"
LEAVE_ONE_OUT = "loo"
BASELINES = (BNPO, LEAVE_ONE_OUT)


class NonFiniteError(FloatingPointError):
    pass


def _check_rewards(rewards) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ContractViolation("a group needs at least two rewards")
    if np.any(r < 0.0) or np.any(r > 1.0) or not np.all(np.isfinite(r)):
        raise ContractViolation("rewards must lie in [0, 1]")
    return r


def fit_beta(rewards) -> Optional[tuple[float, float]]:
    """Method-of-moments Beta fit; ``None`` marks a degenerate (zero-variance) group."""
    r = _check_rewards(rewards)
    m = float(r.mean())
    v = float(r.var())
    if v < VAR_EPS:
        return None
    m = min(max(m, MEAN_CLAMP), 1.0 - MEAN_CLAMP)
    c = max(m * (1.0 - m) / v - 1.0, CONC_FLOOR)
    return m * c, (1.0 - m) * c


def beta_moments(a: float, b: float) -> tuple[float, float]:
    s = a + b
    return a / s, float(np.sqrt(a * b / (s * s * (s + 1.0))))


def bnpo_advantages(rewards) -> np.ndarray:
    r = _check_rewards(rewards)
    fit = fit_beta(r)
    if fit is None:
        return np.zeros_like(r)
    mu, sigma = beta_moments(*fit)
    adv = (r - mu) / max(sigma, SIGMA_FLOOR)
    return adv - adv.mean()


def loo_advantages(rewards) -> np.ndarray:
    """``r_i - mean(r_{-i})``: a baseline that never sees episode i's own action."""
    r = _check_rewards(rewards)
    if np.all(r == r[0]):
        # exact zeros; the float expression leaves ~1e-16 residue for e.g. 0.7
        return np.zeros_like(r)
    n = r.size
    return r - (r.sum() - r) / (n - 1)


def group_stats(rewards, baseline: str = BNPO) -> GroupStats:
    r = _check_rewards(rewards)
    fit = fit_beta(r)
    if baseline == BNPO:
        adv = bnpo_advantages(r)
    elif baseline == LEAVE_ONE_OUT:
        adv = loo_advantages(r)
    else:
        raise ContractViolation(f"unknown baseline {baseline!r}")
    return GroupStats(
        rewards=r,
        mean=float(r.mean()),
        variance=float(r.var()),
        beta_alpha=None if fit is None else fit[0],
        beta_beta=None if fit is None else fit[1],
        advantages=adv,
    )


class RolloutBatch:
    """Flat arrays over every episode of an iteration, in fixed group order."""

    def __init__(self, groups: Sequence[tuple[Sequence[Episode], np.ndarray]], n_attributes: int):
        qtypes, masks, old_lp, adv = [], [], [], []
        for episodes, advantages in groups:
            if len(episodes) != len(advantages):
                raise ContractViolation("episodes and advantages differ in length")
            for ep, a in zip(episodes, advantages):
                qtypes.append(ep.question.qtype)
                masks.append(ep.c0.mask(n_attributes))
                old_lp.append(ep.caption_logprob)
                adv.append(a)
        self.qtypes = np.asarray(qtypes, dtype=np.intp)
        self.masks = np.asarray(masks, dtype=bool).reshape(-1, n_attributes)
        self.old_logprob = np.asarray(old_lp, dtype=np.float64)
        self.advantages = np.asarray(adv, dtype=np.float64)

    def __len__(self):
        return self.qtypes.size


def _batch_logprob_and_score(theta: np.ndarray, batch: RolloutBatch):
    lp = batch_logprob(theta, batch.qtypes, batch.masks)
    return lp, batch.masks - expit(theta[batch.qtypes])


def surrogate_gradient(
    theta: np.ndarray,
    theta_old: np.ndarray,
    kl_ref: RefSnapshot,
    groups,
    clip_eps: float,
    kl_beta: float,
    question_dist,
    *,
    clip: bool = True,
) -> np.ndarray:
    """Ascent gradient of ``-L_clip``: mean clipped policy-gradient minus ``kl_beta * grad KL``.

    ``groups`` is a list of ``(episodes, advantages)`` or a prebuilt
    ``RolloutBatch``.  Each episode's ``caption_logprob`` must have been
    evaluated under ``theta_old``; only the caption mask enters the gradient.
    """
    if theta.shape != theta_old.shape or theta.shape != kl_ref.theta_ref.shape:
        raise ContractViolation("theta, theta_old and the KL reference must share a shape")
    if clip_eps <= 0 or kl_beta < 0:
        raise ContractViolation("clip_eps must be > 0 and kl_beta >= 0")
    batch = groups if isinstance(groups, RolloutBatch) else RolloutBatch(groups, theta.shape[1])
    grad = -kl_beta * kl_grad(theta, kl_ref, question_dist)
    n = len(batch)
    if n == 0:
        return grad
    lp, sc = _batch_logprob_and_score(theta, batch)
    ratio = np.exp(lp - batch.old_logprob)
    adv = batch.advantages
    if clip:
        # d/dtheta min(rA, clip(r)A) vanishes where the clipped branch is the minimum
        clipped = ((adv > 0) & (ratio > 1 + clip_eps)) | ((adv < 0) & (ratio < 1 - clip_eps))
        coef = np.where(clipped, 0.0, ratio * adv)
    else:
        coef = ratio * adv
    contrib = np.zeros_like(theta)
    np.add.at(contrib, batch.qtypes, (coef / n)[:, None] * sc)
    return grad + contrib


def sgd_step(theta: np.ndarray, gradient: np.ndarray, learning_rate: float) -> np.ndarray:
    if theta.shape != gradient.shape:
        raise ContractViolation("gradient shape differs from theta")
    if not np.all(np.isfinite(gradient)):
        bad = np.argwhere(~np.isfinite(gradient))
        raise NonFiniteError(f"non-finite gradient at entries {bad.tolist()[:5]}")
    return theta + learning_rate * gradient
