"""Transcript parsing and answer normalization."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

SOLVED = "SOLVED"
NEED_MORE_INFO = "NEED_MORE_INFO"
MALFORMED = "MALFORMED"

_NA = {"n/a", "na", "none", ""}


@dataclass(frozen=True)
class Transcript:
    raw_text: str
    parsed_status: str
    parsed_answer: Optional[str] = None
    parsed_request: Optional[str] = None


def last_boxed(text: str) -> Optional[str]:
    """Content of the final ``\\boxed{...}``, honouring nested braces."""
    start = text.rfind("\\boxed{")
    while start != -1:
        i = start + len("\\boxed{")
        depth = 1
        j = i
        while j < len(text) and depth:
            if text[j] == "{":
                depth += 1
            elif text[j] == "}":
                depth -= 1
            j += 1
        if depth == 0:
            return text[i : j - 1].strip()
        start = text.rfind("\\boxed{", 0, start)
    return None


def _field_lines(text: str, name: str) -> list[str]:
    pat = re.compile(rf"^[\s*#>-]*{name}\s*\**\s*:\s*\**(.*)$", re.IGNORECASE)
    out = []
    for line in text.splitlines():
        m = pat.match(line)
        if m:
            out.append(m.group(1).strip())
    return out


def _clean(value: str) -> Optional[str]:
    value = value.strip().strip("[]").strip()
    return None if value.casefold() in _NA else value


def parse_decision(raw_text: str) -> Transcript:
    statuses = _field_lines(raw_text, "status")
    if not statuses:
        return Transcript(raw_text, MALFORMED)
    status = statuses[-1].lstrip("[* ").upper()
    if status.startswith(NEED_MORE_INFO) or status.startswith("NEED MORE INFO"):
        requests = [r for r in (_clean(x) for x in _field_lines(raw_text, "request")) if r]
        if not requests:
            return Transcript(raw_text, MALFORMED)
        return Transcript(raw_text, NEED_MORE_INFO, parsed_request=requests[-1])
    if status.startswith(SOLVED):
        answer = last_boxed(raw_text)
        if answer is None:
            answers = [a for a in (_clean(x) for x in _field_lines(raw_text, "answer")) if a]
            answer = answers[-1] if answers else None
        if not answer:
            return Transcript(raw_text, MALFORMED)
        return Transcript(raw_text, SOLVED, parsed_answer=answer)
    return Transcript(raw_text, MALFORMED)


_ANSWER_TAG = re.compile(r"<answer>(.*?)</answer>", re.IGNORECASE | re.DOTALL)


def parse_final(raw_text: str) -> Optional[str]:
    """Answer from a final-prompt completion, or ``None`` when none can be found."""
    boxed = last_boxed(raw_text)
    if boxed:
        return boxed
    tags = _ANSWER_TAG.findall(raw_text)
    if tags:
        body = re.sub(r"^\s*final answer\s*:\s*", "", tags[-1], flags=re.IGNORECASE).strip()
        if body:
            return body
    answers = [a for a in (_clean(x) for x in _field_lines(raw_text, "(?:final )?answer")) if a]
    return answers[-1] if answers else None


def _unbox(s: str) -> str:
    """Strip a ``\\boxed{...}`` wrapper only when it spans the whole string."""
    prefix = "\\boxed{"
    if not s.startswith(prefix):
        return s
    depth = 1
    for j in range(len(prefix), len(s)):
        depth += {"{": 1, "}": -1}.get(s[j], 0)
        if depth == 0:
            return s[len(prefix) : j] if j == len(s) - 1 else s
    return s


def normalize_answer(ans: str) -> str:
    s = ans.strip().casefold()
    if s.endswith("."):
        s = s[:-1].rstrip()
    s = _unbox(s).strip()
    if s.endswith("."):
        s = s[:-1].rstrip()
    return s


def answers_match(predicted: Optional[str], gold: str) -> bool:
    return predicted is not None and normalize_answer(predicted) == normalize_answer(gold)
