"""Enumerable synthetic captioner/reasoner world.

A scene is a vector of categorical attributes, a question needs a fixed set
of them, a caption truthfully discloses a subset, and a frozen stochastic
reasoner either answers or asks for exactly one missing attribute.  All
reasoner randomness is drawn from the episode's post-action substream, so
given the caption the outcome cannot depend on the policy parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import rng as rngmod
from .core import (
    Caption,
    ClarificationExchange,
    ContractViolation,
    Episode,
    Question,
    RewardConfig,
    Scene,
    assign_reward,
)


@dataclass(frozen=True)
class EnvConfig:
    F: int
    V: int
    T_q: int
    required_sets: tuple[frozenset[int], ...]
    k_ask: int = 1
    p_ask: float = 1.0
    p_guess: float = 0.0
    question_dist: tuple[float, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(
            self, "required_sets", tuple(frozenset(int(f) for f in s) for s in self.required_sets)
        )
        if not self.question_dist:
            object.__setattr__(self, "question_dist", tuple([1.0 / self.T_q] * self.T_q))
        else:
            object.__setattr__(self, "question_dist", tuple(float(w) for w in self.question_dist))
        self.validate()

    def validate(self) -> None:
        if self.F < 1 or self.V < 1 or self.T_q < 1:
            raise ContractViolation("F, V and T_q must all be >= 1")
        if len(self.required_sets) != self.T_q:
            raise ContractViolation(f"need {self.T_q} required sets, got {len(self.required_sets)}")
        for t, s in enumerate(self.required_sets):
            if not s:
                raise ContractViolation(f"required set for qtype {t} is empty")
            if any(not 0 <= f < self.F for f in s):
                raise ContractViolation(f"required set for qtype {t} has index outside [0, {self.F})")
        if len(self.question_dist) != self.T_q:
            raise ContractViolation("question_dist length must equal T_q")
        if any(w < 0 for w in self.question_dist) or abs(sum(self.question_dist) - 1.0) > 1e-12:
            raise ContractViolation("question_dist must be a probability vector")
        if self.k_ask < 0:
            raise ContractViolation("k_ask must be >= 0")
        for name in ("p_ask", "p_guess"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractViolation(f"{name} must lie in [0, 1], got {v}")

    def to_dict(self) -> dict:
        return {
            "F": self.F,
            "V": self.V,
            "T_q": self.T_q,
            "required_sets": {str(t): sorted(s) for t, s in enumerate(self.required_sets)},
            "k_ask": self.k_ask,
            "p_ask": self.p_ask,
            "p_guess": self.p_guess,
            "question_dist": list(self.question_dist),
        }


def gen_scene(rng: np.random.Generator, cfg: EnvConfig) -> Scene:
    return Scene(tuple(int(v) for v in rng.integers(0, cfg.V, size=cfg.F)))


def gen_question(rng: np.random.Generator, cfg: EnvConfig) -> Question:
    t = int(rng.choice(cfg.T_q, p=cfg.question_dist)) if cfg.T_q > 1 else 0
    return Question(t, cfg.required_sets[t])


@dataclass(frozen=True)
class Solved:
    correct: bool


@dataclass(frozen=True)
class NeedInfo:
    request: int


Decision = Union[Solved, NeedInfo]


def missing_required(question: Question, c0: Caption) -> list[int]:
    return sorted(question.required - c0.indices)


def reason_decide(
    question: Question,
    c0: Caption,
    rng: np.random.Generator,
    cfg: EnvConfig,
    p_ask: Optional[float] = None,
) -> Decision:
    """Frozen reasoner: answer directly or ask for one missing attribute.

    ``p_ask`` overrides the configured request probability; only the
    negative-control experiment uses it.
    """
    missing = missing_required(question, c0)
    m = len(missing)
    if m == 0:
        return Solved(True)
    if m <= cfg.k_ask:
        pa = cfg.p_ask if p_ask is None else p_ask
        if rng.random() < pa:
            return NeedInfo(missing[int(rng.integers(m))])
    return Solved(bool(rng.random() < cfg.p_guess))


def clarify(scene: Scene, request: int) -> int:
    if not 0 <= request < len(scene.attributes):
        raise ContractViolation(f"clarification request {request} out of range")
    return scene.attributes[request]


class CountingClarifier:
    """Wraps ``clarify`` and counts invocations."""

    def __init__(self):
        self.calls = 0

    def __call__(self, scene: Scene, request: int) -> int:
        self.calls += 1
        return clarify(scene, request)


def denied_outcome(key: str, cfg: EnvConfig) -> bool:
    """Correctness when a clarification request is refused (dedicated substream)."""
    return bool(rngmod.substream(key, rngmod.DENY).random() < cfg.p_guess)


CaptionSampler = Callable[[Scene, Question, np.random.Generator], "tuple[Caption, float]"]


def resolve_episode(
    scene: Scene,
    question: Question,
    c0: Caption,
    logprob: float,
    key: str,
    env: EnvConfig,
    reward_cfg: RewardConfig,
    *,
    allow_clarification: bool = True,
    clarifier: Callable[[Scene, int], int] = clarify,
    p_ask: Optional[float] = None,
    episode_id: str = "",
) -> Episode:
    """Everything after the caption: reasoner decision, clarifier, reward."""
    decision = reason_decide(question, c0, rngmod.substream(key, rngmod.POST_ACTION), env, p_ask)
    clar = None
    if isinstance(decision, Solved):
        correct = decision.correct
    elif allow_clarification:
        value = clarifier(scene, decision.request)
        clar = ClarificationExchange(decision.request, value)
        correct = question.required <= (c0.indices | {decision.request})
    else:
        correct = denied_outcome(key, env)
    clarified = clar is not None
    return Episode(
        scene=scene,
        question=question,
        c0=c0,
        clar=clar,
        clarified=clarified,
        answer_correct=bool(correct),
        reward=assign_reward(bool(correct), clarified, reward_cfg),
        post_action_seed=key,
        caption_logprob=logprob,
        episode_id=episode_id,
    )


def run_episode(
    sample_caption: CaptionSampler,
    scene: Scene,
    question: Question,
    reward_cfg: RewardConfig,
    key: str,
    env: EnvConfig,
    **kwargs,
) -> Episode:
    c0, logprob = sample_caption(scene, question, rngmod.substream(key, rngmod.CAPTION))
    if not math.isfinite(logprob):
        raise ContractViolation("caption sampler returned a non-finite log-probability")
    return resolve_episode(scene, question, c0, logprob, key, env, reward_cfg, **kwargs)


def sample_prompt(key: str, env: EnvConfig) -> tuple[Scene, Question]:
    g = rngmod.substream(key, rngmod.SCENE)
    return gen_scene(g, env), gen_question(g, env)
