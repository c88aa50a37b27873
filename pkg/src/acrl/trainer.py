"""Outer training loop: grouped rollouts, group advantages, K clipped updates."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .core import ContractViolation, Episode, PolicyParams, RewardConfig
from .optim import BASELINES, BNPO, NonFiniteError, RolloutBatch, group_stats, sgd_step, surrogate_gradient
from .policy import kl_to_ref, sampler, snapshot
from .synthenv import EnvConfig, run_episode, sample_prompt

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "acrl-checkpoint/1"


@dataclass(frozen=True)
class TrainConfig:
    env: EnvConfig
    reward: RewardConfig = field(default_factory=RewardConfig)
    group_size: int = 8
    inner_steps: int = 6
    batch_size: int = 32
    learning_rate: float = 0.05
    clip_eps: float = 0.2
    kl_beta: float = 0.001
    seed: int = 0
    iterations: int = 500
    init_logit: float = 0.0
    baseline: str = BNPO
    checkpoint_every: int = 100
    workers: int = 1
    record_wall_time: bool = False

    def __post_init__(self):
        if self.group_size < 2:
            raise ContractViolation("group_size must be >= 2")
        if self.inner_steps < 1:
            raise ContractViolation("inner_steps must be >= 1")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")
        if self.clip_eps <= 0:
            raise ContractViolation("clip_eps must be > 0")
        if self.kl_beta < 0:
            raise ContractViolation("kl_beta must be >= 0")
        if self.iterations < 0:
            raise ContractViolation("iterations must be >= 0")
        if self.baseline not in BASELINES:
            raise ContractViolation(f"baseline must be one of {BASELINES}")
        if self.workers < 1:
            raise ContractViolation("workers must be >= 1")

    def initial_theta(self) -> np.ndarray:
        return np.full((self.env.T_q, self.env.F), float(self.init_logit))


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, params: PolicyParams, iteration: int):
        super().__init__(message)
        self.params = params
        self.iteration = iteration


def uniform_reward_fraction(groups: Sequence[Sequence[float]]) -> float:
    """Fraction of groups whose rewards are all identical."""
    if len(groups) == 0:
        raise ContractViolation("uniform_reward_fraction needs at least one group")
    uniform = sum(1 for g in groups if np.all(np.asarray(g) == np.asarray(g)[0]))
    return uniform / len(groups)


def collect_groups(
    theta: np.ndarray, cfg: TrainConfig, iteration: int, workers: int = 1
) -> list[list[Episode]]:
    """M rollouts for each of B prompts; output order is independent of ``workers``."""
    sample = sampler(theta)

    def one_group(j: int) -> list[Episode]:
        scene, question = sample_prompt(rngmod.episode_key(cfg.seed, rngmod.PROMPT, iteration, j), cfg.env)
        return [
            run_episode(
                sample,
                scene,
                question,
                cfg.reward,
                rngmod.episode_key(cfg.seed, rngmod.TRAIN, iteration, j, i),
                cfg.env,
                episode_id=f"train-{iteration}-{j}-{i}",
            )
            for i in range(cfg.group_size)
        ]

    if workers == 1:
        return [one_group(j) for j in range(cfg.batch_size)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one_group, range(cfg.batch_size)))


def train(
    cfg: TrainConfig,
    *,
    theta0: Optional[np.ndarray] = None,
    on_checkpoint: Optional[Callable[[PolicyParams], None]] = None,
    on_episodes: Optional[Callable[[list[list[Episode]]], None]] = None,
) -> tuple[PolicyParams, list[dict]]:
    theta = cfg.initial_theta() if theta0 is None else np.array(theta0, dtype=np.float64)
    ref = snapshot(theta, 0)
    qdist = cfg.env.question_dist
    metrics: list[dict] = []
    for it in range(cfg.iterations):
        start = time.perf_counter()
        theta_old = theta.copy()
        groups = collect_groups(theta_old, cfg, it, cfg.workers)
        if on_episodes is not None:
            on_episodes(groups)
        stats = [group_stats([ep.reward for ep in g], cfg.baseline) for g in groups]
        batch = RolloutBatch([(g, s.advantages) for g, s in zip(groups, stats)], cfg.env.F)
        for _ in range(cfg.inner_steps):
            try:
                grad = surrogate_gradient(theta, theta_old, ref, batch, cfg.clip_eps, cfg.kl_beta, qdist)
                new = sgd_step(theta, grad, cfg.learning_rate)
            except NonFiniteError as exc:
                raise TrainingAborted(str(exc), PolicyParams(theta, it), it) from exc
            if not np.all(np.isfinite(new)):
                raise TrainingAborted("non-finite parameters after update", PolicyParams(theta, it), it)
            theta = new
        rewards = np.array([ep.reward for g in groups for ep in g])
        record = {
            "iter": it + 1,
            "mean_reward": float(rewards.mean()),
            "train_clar_rate": float(np.mean([ep.clarified for g in groups for ep in g])),
            "kl": kl_to_ref(theta, ref, qdist),
            "uniform_frac": uniform_reward_fraction([s.rewards for s in stats]),
            "wall_ms": round((time.perf_counter() - start) * 1e3, 3) if cfg.record_wall_time else None,
        }
        metrics.append(record)
        if on_checkpoint is not None and cfg.checkpoint_every > 0 and (it + 1) % cfg.checkpoint_every == 0:
            on_checkpoint(PolicyParams(theta.copy(), it + 1))
        if (it + 1) % 50 == 0:
            log.info("iter %d mean_reward %.4f clar %.4f", it + 1, record["mean_reward"], record["train_clar_rate"])
    return PolicyParams(theta, cfg.iterations), metrics


def env_digest(env: EnvConfig) -> str:
    blob = json.dumps(env.to_dict(), sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(blob.encode()).hexdigest()


class CheckpointError(ValueError):
    pass


class DigestMismatch(CheckpointError):
    pass


def save_checkpoint(params: PolicyParams, env: EnvConfig, path, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "shape": list(params.theta.shape),
        "theta": params.theta.tolist(),
        "step": int(params.step),
        "config_digest": env_digest(env),
    }
    if extra:
        doc.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def load_checkpoint(path, env: Optional[EnvConfig] = None, force: bool = False) -> PolicyParams:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot parse checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not an {CHECKPOINT_FORMAT} document")
    try:
        theta = np.array(doc["theta"], dtype=np.float64).reshape(doc["shape"])
        step = int(doc["step"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    if env is not None and doc.get("config_digest") != env_digest(env) and not force:
        raise DigestMismatch(
            f"checkpoint {path} was trained on a different environment "
            f"({doc.get('config_digest')} != {env_digest(env)}); pass force to override"
        )
    try:
        return PolicyParams(theta, step)
    except ContractViolation as exc:
        raise CheckpointError(str(exc)) from exc
