"""Free-text episodes against real captioner/reasoner endpoints (no parameter updates)."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable

from ..core import RewardConfig, assign_reward
from .client import EndpointConfig, EndpointError, chat, image_data_url
from .parsing import MALFORMED, NEED_MORE_INFO, answers_match, parse_decision, parse_final
from .templates import render_prompt

log = logging.getLogger(__name__)

ChatFn = Callable[..., str]


def load_items(path) -> list[dict]:
    items = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            item = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{n}: {exc}") from exc
        for k in ("id", "question", "gold_answer"):
            if k not in item:
                raise ValueError(f"{path}:{n}: item missing {k!r}")
        items.append(item)
    return items


def _base_record(item: dict) -> dict:
    return {
        "episode_id": str(item["id"]),
        "scene": [],
        "qtype": 0,
        "required": [],
        "disclosed": [],
        "clarified": False,
        "clar_request": None,
        "clar_response": None,
        "answer_correct": False,
        "reward": 0.0,
        "caption_logprob": None,
        "post_action_seed": str(item["id"]),
        "caption_text": None,
        "clar_request_text": None,
        "clar_response_text": None,
        "answer_text": None,
        "parse_failed": False,
        "infra_failed": False,
    }


def collect_episode(
    item: dict,
    captioner: EndpointConfig,
    reasoner: EndpointConfig,
    reward_cfg: RewardConfig,
    allow_clarification: bool,
    *,
    chat_fn: ChatFn = chat,
) -> dict:
    rec = _base_record(item)
    ident = str(item["id"])
    attachments = [image_data_url(item["image_path"])] if item.get("image_path") else []
    question = item["question"]

    def ask(endpoint, prompt, stage, images=()):
        return chat_fn(
            endpoint,
            [{"role": "user", "content": prompt}],
            list(images),
            idempotency_key=f"{ident}-{stage}",
        )

    try:
        caption = ask(captioner, render_prompt("initial", question=question), "caption", attachments)
        rec["caption_text"] = caption
        if allow_clarification:
            decision = parse_decision(
                ask(reasoner, render_prompt("adaptive_decision", description=caption, question=question), "decide")
            )
            if decision.parsed_status == MALFORMED:
                rec["parse_failed"] = True
                return rec
            if decision.parsed_status == NEED_MORE_INFO:
                rec["clarified"] = True
                rec["clar_request_text"] = decision.parsed_request
                focus = render_prompt(
                    "focused",
                    question=question,
                    previous_descriptions=caption,
                    focus_request=decision.parsed_request,
                )
                response = ask(captioner, focus, "clarify", attachments)
                rec["clar_response_text"] = response
                final = ask(
                    reasoner,
                    render_prompt("final", description=f"{caption}\n\n{response}", question=question),
                    "final",
                )
                answer = parse_final(final)
            else:
                answer = decision.parsed_answer
        else:
            answer = parse_final(
                ask(reasoner, render_prompt("final", description=caption, question=question), "final")
            )
    except EndpointError as exc:
        log.warning("item %s: infrastructure failure: %s", ident, exc)
        rec["infra_failed"] = True
        return rec
    if answer is None:
        rec["parse_failed"] = True
        return rec
    rec["answer_text"] = answer
    rec["answer_correct"] = answers_match(answer, str(item["gold_answer"]))
    rec["reward"] = assign_reward(rec["answer_correct"], rec["clarified"], reward_cfg)
    return rec


def collect(
    items: Iterable[dict],
    captioner: EndpointConfig,
    reasoner: EndpointConfig,
    reward_cfg: RewardConfig,
    allow_clarification: bool,
    *,
    parallelism: int = 4,
    chat_fn: ChatFn = chat,
) -> list[dict]:
    """Collect episodes with bounded concurrency; output keeps the input order."""
    items = list(items)

    def one(item):
        return collect_episode(item, captioner, reasoner, reward_cfg, allow_clarification, chat_fn=chat_fn)

    if parallelism <= 1:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, items))


def summarize(records: list[dict]) -> dict:
    ok = [r for r in records if not r["infra_failed"]]
    n = len(ok)
    return {
        "n_items": len(records),
        "n_infra_failed": len(records) - n,
        "n_parse_failed": sum(r["parse_failed"] for r in ok),
        "accuracy": (sum(r["answer_correct"] for r in ok) / n) if n else None,
        "clar_rate": (sum(r["clarified"] for r in ok) / n) if n else None,
        "mean_reward": (sum(r["reward"] for r in ok) / n) if n else None,
    }
