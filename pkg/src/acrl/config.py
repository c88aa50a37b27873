"""Run configuration: one JSON document with ``env``, ``reward``, ``train`` and ``eval`` sections.

Unknown keys are rejected.  Errors name the offending field as
``section.key`` so the CLI can report them verbatim.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .core import REWARD_MODES, TIERED, ContractViolation, RewardConfig
from .optim import BASELINES
from .synthenv import EnvConfig
from .trainer import TrainConfig

SECTIONS = ("env", "reward", "train", "eval")


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


# key -> (checker, type name, default); a default of ... marks a required key
ENV_FIELDS = {
    "F": (_int, "integer", ...),
    "V": (_int, "integer", ...),
    "T_q": (_int, "integer", ...),
    "required_sets": (lambda v: isinstance(v, (dict, list)), "object or list", ...),
    "k_ask": (_int, "integer", 1),
    "p_ask": (_num, "number", 1.0),
    "p_guess": (_num, "number", 0.0),
    "question_dist": (lambda v: isinstance(v, list) and all(_num(x) for x in v), "list of numbers", None),
}
REWARD_FIELDS = {
    "mode": (lambda v: v in REWARD_MODES, f"one of {REWARD_MODES}", TIERED),
    "alpha": (_num, "number", None),
}
TRAIN_FIELDS = {
    "group_size": (_int, "integer", 8),
    "inner_steps": (_int, "integer", 6),
    "batch_size": (_int, "integer", 32),
    "learning_rate": (_num, "number", 0.05),
    "clip_eps": (_num, "number", 0.2),
    "kl_beta": (_num, "number", 0.001),
    "seed": (_int, "integer", 0),
    "iterations": (_int, "integer", 500),
    "init_logit": (_num, "number", 0.0),
    "baseline": (lambda v: v in BASELINES, f"one of {BASELINES}", "bnpo"),
    "checkpoint_every": (_int, "integer", 100),
    "workers": (_int, "integer", 1),
    "record_wall_time": (lambda v: isinstance(v, bool), "boolean", False),
}
EVAL_FIELDS = {
    "n": (_int, "integer", 20_000),
    "seed": (_int, "integer", 1),
}

HELP_DEFAULTS = """\
config sections and defaults (JSON):
  env:    F, V, T_q, required_sets (required); k_ask=1, p_ask=1.0, p_guess=0.0,
          question_dist=uniform
  reward: mode=tiered|binary; alpha required for tiered (0.7 recommended)
  train:  group_size=8, inner_steps=6, kl_beta=0.001 (recommended);
          clip_eps=0.2, learning_rate=0.05, batch_size=32, iterations=500,
          init_logit=0.0, baseline=bnpo|loo, checkpoint_every=100, workers=1,
          seed=0, record_wall_time=false (lab choices)
  eval:   n=20000, seed=1"""


def _section(raw: dict, name: str, fields: dict, required: bool) -> dict:
    if name not in raw:
        if required:
            raise ConfigError(name, "section is required")
        raw_sec: dict = {}
    else:
        raw_sec = raw[name]
        if not isinstance(raw_sec, dict):
            raise ConfigError(name, "must be an object")
    unknown = sorted(set(raw_sec) - set(fields))
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}", "unknown key")
    out = {}
    for key, (check, tname, default) in fields.items():
        if key in raw_sec:
            if not check(raw_sec[key]):
                raise ConfigError(f"{name}.{key}", f"expected {tname}, got {raw_sec[key]!r}")
            out[key] = raw_sec[key]
        elif default is ...:
            raise ConfigError(f"{name}.{key}", "is required")
        else:
            out[key] = default
    return out


def _required_sets(value, t_q: int) -> list[list[int]]:
    if isinstance(value, dict):
        try:
            items = {int(k): v for k, v in value.items()}
        except ValueError:
            raise ConfigError("env.required_sets", "keys must be question-type indices") from None
        if sorted(items) != list(range(t_q)):
            raise ConfigError("env.required_sets", f"needs exactly the keys 0..{t_q - 1}")
        value = [items[t] for t in range(t_q)]
    if len(value) != t_q or not all(isinstance(s, list) and all(_int(f) for f in s) for s in value):
        raise ConfigError("env.required_sets", f"needs {t_q} lists of attribute indices")
    return value


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig
    reward: RewardConfig
    train: TrainConfig
    eval_n: int
    eval_seed: int

    def to_dict(self) -> dict:
        t = self.train
        return {
            "env": self.env.to_dict(),
            "reward": {"mode": self.reward.mode, "alpha": self.reward.alpha},
            "train": {
                "group_size": t.group_size,
                "inner_steps": t.inner_steps,
                "batch_size": t.batch_size,
                "learning_rate": t.learning_rate,
                "clip_eps": t.clip_eps,
                "kl_beta": t.kl_beta,
                "seed": t.seed,
                "iterations": t.iterations,
                "init_logit": t.init_logit,
                "baseline": t.baseline,
                "checkpoint_every": t.checkpoint_every,
                "workers": t.workers,
                "record_wall_time": t.record_wall_time,
            },
            "eval": {"n": self.eval_n, "seed": self.eval_seed},
        }


def parse_config(raw: Any, reward_override: str | None = None, seed_override: int | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(unknown[0], "unknown section")
    env_raw = _section(raw, "env", ENV_FIELDS, True)
    reward_raw = _section(raw, "reward", REWARD_FIELDS, True)
    train_raw = _section(raw, "train", TRAIN_FIELDS, False)
    eval_raw = _section(raw, "eval", EVAL_FIELDS, False)

    if reward_override is not None:
        reward_raw["mode"] = reward_override
    if reward_raw["alpha"] is None:
        if reward_raw["mode"] == TIERED:
            raise ConfigError("reward.alpha", "is required when reward.mode is tiered")
        reward_raw["alpha"] = 0.7
    if seed_override is not None:
        train_raw["seed"] = seed_override

    try:
        env = EnvConfig(
            F=env_raw["F"],
            V=env_raw["V"],
            T_q=env_raw["T_q"],
            required_sets=_required_sets(env_raw["required_sets"], env_raw["T_q"]),
            k_ask=env_raw["k_ask"],
            p_ask=float(env_raw["p_ask"]),
            p_guess=float(env_raw["p_guess"]),
            question_dist=tuple(env_raw["question_dist"] or ()),
        )
    except ContractViolation as exc:
        raise ConfigError("env", str(exc)) from None
    try:
        reward = RewardConfig(alpha=float(reward_raw["alpha"]), mode=reward_raw["mode"])
    except ContractViolation as exc:
        field = "reward.alpha" if "alpha" in str(exc) else "reward.mode"
        raise ConfigError(field, str(exc)) from None
    try:
        train = TrainConfig(env=env, reward=reward, **{k: train_raw[k] for k in TRAIN_FIELDS})
    except ContractViolation as exc:
        key = next((k for k in TRAIN_FIELDS if str(exc).startswith(k)), "")
        raise ConfigError(f"train.{key}" if key else "train", str(exc)) from None
    if eval_raw["n"] < 1:
        raise ConfigError("eval.n", "must be >= 1")
    return RunConfig(env, reward, train, eval_raw["n"], eval_raw["seed"])


def load_config(path, reward_override: str | None = None, seed_override: int | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path} is not valid JSON: {exc}") from None
    return parse_config(raw, reward_override, seed_override)
