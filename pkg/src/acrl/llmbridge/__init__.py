"""Episode collection against OpenAI-compatible chat endpoints."""

from .client import EndpointConfig, EndpointError, chat
from .collect import collect, collect_episode, load_items, summarize
from .parsing import MALFORMED, NEED_MORE_INFO, SOLVED, Transcript, normalize_answer, parse_decision, parse_final
from .templates import TemplateError, render_prompt

__all__ = [
    "EndpointConfig",
    "EndpointError",
    "MALFORMED",
    "NEED_MORE_INFO",
    "SOLVED",
    "TemplateError",
    "Transcript",
    "chat",
    "collect",
    "collect_episode",
    "load_items",
    "normalize_answer",
    "parse_decision",
    "parse_final",
    "render_prompt",
    "summarize",
]
