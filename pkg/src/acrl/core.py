"""Domain types shared across the lab: scenes, captions, episodes, rewards.

Everything here is an immutable value. Episodes serialize to a flat JSON
record whose field names are shared by the trainer, the evaluation harness,
the metrics command and the LLM bridge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

import numpy as np

TIERED = "tiered"
BINARY = "binary"
REWARD_MODES = (TIERED, BINARY)

EPISODE_FIELDS = (
    "episode_id",
    "scene",
    "qtype",
    "required",
    "disclosed",
    "clarified",
    "clar_request",
    "clar_response",
    "answer_correct",
    "reward",
    "caption_logprob",
    "post_action_seed",
)


class ContractViolation(ValueError):
    """A precondition of a lab operation was broken by the caller."""


@dataclass(frozen=True)
class Scene:
    attributes: tuple[int, ...]

    def validate(self, n_attributes: int, n_values: int) -> None:
        if len(self.attributes) != n_attributes:
            raise ContractViolation(
                f"scene has {len(self.attributes)} attributes, expected {n_attributes}"
            )
        for v in self.attributes:
            if not 0 <= v < n_values:
                raise ContractViolation(f"attribute value {v} outside [0, {n_values})")


@dataclass(frozen=True)
class Question:
    qtype: int
    required: frozenset[int]

    def __post_init__(self):
        if not self.required:
            raise ContractViolation("question must require at least one attribute")


@dataclass(frozen=True)
class Caption:
    """Truthful disclosure of a subset of scene attributes."""

    disclosed: tuple[tuple[int, int], ...]

    @classmethod
    def from_mask(cls, scene: Scene, mask: Iterable[bool]) -> "Caption":
        pairs = tuple(
            (f, scene.attributes[f]) for f, d in enumerate(mask) if d
        )
        return cls(pairs)

    @property
    def indices(self) -> frozenset[int]:
        return frozenset(f for f, _ in self.disclosed)

    def mask(self, n_attributes: int) -> np.ndarray:
        m = np.zeros(n_attributes, dtype=bool)
        for f, _ in self.disclosed:
            m[f] = True
        return m

    def validate(self, scene: Scene) -> None:
        seen = set()
        for f, v in self.disclosed:
            if f in seen:
                raise ContractViolation(f"attribute {f} disclosed twice")
            seen.add(f)
            if scene.attributes[f] != v:
                raise ContractViolation(f"untruthful disclosure of attribute {f}")


@dataclass(frozen=True)
class ClarificationExchange:
    request: int
    response: int


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.7
    mode: str = TIERED

    def __post_init__(self):
        if self.mode not in REWARD_MODES:
            raise ContractViolation(f"unknown reward mode {self.mode!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ContractViolation(f"alpha must lie in (0, 1), got {self.alpha}")


def assign_reward(answer_correct: bool, clarified: bool, cfg: RewardConfig) -> float:
    """Tiered reward: 1 for direct success, alpha for clarified success, 0 otherwise.

    Binary mode ignores the clarification flag.
    """
    if not answer_correct:
        return 0.0
    if cfg.mode == BINARY or not clarified:
        return 1.0
    return float(cfg.alpha)


@dataclass(frozen=True)
class Episode:
    scene: Scene
    question: Question
    c0: Caption
    clar: Optional[ClarificationExchange]
    clarified: bool
    answer_correct: bool
    reward: float
    post_action_seed: str
    caption_logprob: float
    episode_id: str = ""

    def to_record(self) -> dict[str, Any]:
        return {
            "episode_id": self.episode_id,
            "scene": list(self.scene.attributes),
            "qtype": self.question.qtype,
            "required": sorted(self.question.required),
            "disclosed": [[f, v] for f, v in self.c0.disclosed],
            "clarified": self.clarified,
            "clar_request": None if self.clar is None else self.clar.request,
            "clar_response": None if self.clar is None else self.clar.response,
            "answer_correct": self.answer_correct,
            "reward": self.reward,
            "caption_logprob": self.caption_logprob,
            "post_action_seed": self.post_action_seed,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Episode":
        missing = [k for k in EPISODE_FIELDS if k not in rec]
        if missing:
            raise ContractViolation(f"record missing fields: {', '.join(missing)}")
        clar = None
        if rec["clar_request"] is not None:
            clar = ClarificationExchange(int(rec["clar_request"]), int(rec["clar_response"]))
        return cls(
            scene=Scene(tuple(int(v) for v in rec["scene"])),
            question=Question(int(rec["qtype"]), frozenset(int(f) for f in rec["required"])),
            c0=Caption(tuple((int(f), int(v)) for f, v in rec["disclosed"])),
            clar=clar,
            clarified=bool(rec["clarified"]),
            answer_correct=bool(rec["answer_correct"]),
            reward=float(rec["reward"]),
            post_action_seed=str(rec["post_action_seed"]),
            caption_logprob=float(rec["caption_logprob"]),
            episode_id=str(rec["episode_id"]),
        )


def check_episode(ep: Episode, reward_cfg: Optional[RewardConfig] = None) -> list[str]:
    """Return the list of invariant violations for one episode (empty if clean)."""
    problems = []
    if (ep.clar is not None) != ep.clarified:
        problems.append("clar present must match clarified flag")
    if ep.clar is not None and ep.scene.attributes[ep.clar.request] != ep.clar.response:
        problems.append("clarification response differs from scene value")
    try:
        ep.c0.validate(ep.scene)
    except (ContractViolation, IndexError) as exc:
        problems.append(str(exc))
    if not math.isfinite(ep.caption_logprob) or ep.caption_logprob > 0:
        problems.append("caption_logprob must be finite and <= 0")
    if reward_cfg is not None:
        if reward_cfg.mode == TIERED:
            allowed = {0.0, reward_cfg.alpha, 1.0}
        else:
            allowed = {0.0, 1.0}
        if ep.reward not in allowed:
            problems.append(f"reward {ep.reward} not in {sorted(allowed)}")
        elif ep.reward != assign_reward(ep.answer_correct, ep.clarified, reward_cfg):
            problems.append("reward inconsistent with correctness and clarification flag")
    elif not 0.0 <= ep.reward <= 1.0:
        problems.append(f"reward {ep.reward} outside [0, 1]")
    return problems


@dataclass
class GroupStats:
    rewards: np.ndarray
    mean: float
    variance: float
    beta_alpha: Optional[float]
    beta_beta: Optional[float]
    advantages: np.ndarray = field(repr=False)

    @property
    def uniform(self) -> bool:
        # exact comparison: eight copies of 0.7 have a float variance of ~1e-32
        return bool(np.all(self.rewards == self.rewards[0]))


@dataclass
class PolicyParams:
    theta: np.ndarray
    step: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 2:
            raise ContractViolation("theta must be a (question types x attributes) matrix")
        if not np.all(np.isfinite(self.theta)):
            raise ContractViolation("theta contains non-finite entries")
