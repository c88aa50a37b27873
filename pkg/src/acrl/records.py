"""JSON Lines I/O for episode records and metrics logs."""

from __future__ import annotations

import json
import math
import re
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core import EPISODE_FIELDS


class SchemaError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def write_jsonl(path, rows: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
    return path


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _int_list(v):
    return isinstance(v, list) and all(_is_int(x) for x in v)


_CHECKS = {
    "episode_id": (lambda v: isinstance(v, str), "string"),
    "scene": (_int_list, "integer array"),
    "qtype": (_is_int, "integer"),
    "required": (_int_list, "integer array"),
    "disclosed": (lambda v: isinstance(v, list) and all(_int_list(p) and len(p) == 2 for p in v), "array of [index, value]"),
    "clarified": (lambda v: isinstance(v, bool), "boolean"),
    "clar_request": (lambda v: v is None or _is_int(v), "integer or null"),
    "clar_response": (lambda v: v is None or _is_int(v), "integer or null"),
    "answer_correct": (lambda v: isinstance(v, bool), "boolean"),
    "reward": (lambda v: _is_num(v) and 0.0 <= v <= 1.0, "number in [0, 1]"),
    "caption_logprob": (lambda v: v is None or _is_num(v), "number"),
    "post_action_seed": (lambda v: isinstance(v, str), "string"),
}


def validate_record(rec) -> Optional[str]:
    if not isinstance(rec, dict):
        return "record is not a JSON object"
    for key in EPISODE_FIELDS:
        if key not in rec:
            return f"missing field {key!r}"
        check, tname = _CHECKS[key]
        if not check(rec[key]):
            return f"field {key!r} must be {tname}"
    free_text = "caption_text" in rec
    if not free_text:
        if rec["caption_logprob"] is None:
            return "field 'caption_logprob' must be a number"
        if (rec["clar_request"] is not None) != rec["clarified"]:
            return "clar_request must be present exactly when clarified is true"
        if rec["clar_request"] is not None and rec["clar_response"] is None:
            return "clar_response missing for a clarified episode"
    if "protocol" in rec and rec["protocol"] not in ("single", "clar", "deny"):
        return f"unknown protocol {rec['protocol']!r}"
    return None


def read_episode_log(path) -> list[dict]:
    out = []
    with Path(path).open() as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(path, n, f"invalid JSON ({exc.msg})") from None
            problem = validate_record(rec)
            if problem:
                raise SchemaError(path, n, problem)
            out.append(rec)
    return out


_TRAIN_ID = re.compile(r"^train-(\d+)-(\d+)-(\d+)$")


def _acc(recs):
    return float(np.mean([r["answer_correct"] for r in recs])) if recs else None


def log_metrics(recs: list[dict]) -> dict:
    """Behavioural metrics recomputed from episode records alone."""
    from .evalharness import clarification_gap, deny_table_delta
    from .trainer import uniform_reward_fraction

    recs = [r for r in recs if not r.get("infra_failed", False)]
    by_proto: dict[str, list[dict]] = {}
    for r in recs:
        by_proto.setdefault(r.get("protocol", "unlabeled"), []).append(r)
    clar_pool = by_proto.get("clar") or by_proto.get("unlabeled") or by_proto.get("single") or []
    out = {
        "n_records": len(recs),
        "protocols": sorted(by_proto),
        "accuracy_single": _acc(by_proto.get("single", [])),
        "accuracy_clar": _acc(by_proto.get("clar", [])),
        "accuracy": _acc(recs),
        "clar_rate": float(np.mean([r["clarified"] for r in clar_pool])) if clar_pool else None,
        "gap_abs": None,
        "gap_rel": None,
        "n_requests": sum(r["clarified"] for r in clar_pool),
        "acc_on_requested_clar": None,
        "acc_on_requested_denied": None,
        "delta_deny": None,
        "delta_deny_table": None,
        "uniform_frac": None,
    }
    if out["accuracy_single"] is not None and out["accuracy_clar"] is not None:
        out["gap_abs"], out["gap_rel"] = clarification_gap(out["accuracy_clar"], out["accuracy_single"])
    requested = [r for r in clar_pool if r["clarified"]]
    denied = by_proto.get("deny", [])
    if requested:
        out["acc_on_requested_clar"] = _acc(requested)
        if denied:
            out["acc_on_requested_denied"] = _acc(denied)
            out["delta_deny"] = out["acc_on_requested_clar"] - out["acc_on_requested_denied"]
            if out["accuracy_single"] is not None:
                out["delta_deny_table"] = deny_table_delta(out["accuracy_single"], out["acc_on_requested_denied"])
    groups: dict[tuple, list[float]] = {}
    for r in recs:
        m = _TRAIN_ID.match(r["episode_id"])
        if m:
            groups.setdefault((int(m.group(1)), int(m.group(2))), []).append(r["reward"])
    if groups:
        out["uniform_frac"] = uniform_reward_fraction(list(groups.values()))
    return out
