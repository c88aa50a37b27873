"""Deterministic RNG substreams.

Every random draw in the lab comes from a generator derived from
``(master seed, purpose, a, b, c, stream)``, so results do not depend on the
order in which episodes are scheduled.  An episode's substream key is
serialized as the ``post_action_seed`` string of its record.
"""

from __future__ import annotations

import numpy as np

# purposes
TRAIN = 0
EVAL = 1
ORACLE = 2
PROMPT = 3

# per-episode streams
CAPTION = 0
POST_ACTION = 1
DENY = 2
SCENE = 3


def episode_key(seed: int, purpose: int, a: int, b: int = 0, c: int = 0) -> str:
    return f"{seed}/{purpose}/{a}/{b}/{c}"


def parse_key(key: str) -> tuple[int, ...]:
    try:
        parts = tuple(int(x) for x in key.split("/"))
    except ValueError:
        raise ValueError(f"malformed substream key {key!r}") from None
    if len(parts) != 5 or any(p < 0 for p in parts):
        raise ValueError(f"malformed substream key {key!r}")
    return parts


def substream(key: str, stream: int) -> np.random.Generator:
    seed, *rest = parse_key(key)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(*rest, stream)))


def generator(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(path)))
