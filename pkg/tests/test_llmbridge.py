import json
from pathlib import Path

import httpx
import pytest

from acrl.core import RewardConfig
from acrl.llmbridge import (
    MALFORMED,
    NEED_MORE_INFO,
    SOLVED,
    EndpointConfig,
    EndpointError,
    TemplateError,
    chat,
    collect,
    collect_episode,
    load_items,
    normalize_answer,
    parse_decision,
    parse_final,
    render_prompt,
    summarize,
)
from acrl.llmbridge.parsing import answers_match, last_boxed
from acrl.records import validate_record

from mockserver import MockEndpoint, completion, prompt_text, scripted_reply

GOLDEN = Path(__file__).parent / "golden"
QUESTION = "What is the area of triangle ABC?"
DESCRIPTION = "A right triangle with legs labeled 3 and {x}."


def golden(name):
    text = (GOLDEN / name).read_text()
    assert text.endswith("\n")
    return text[:-1]


@pytest.mark.parametrize(
    "template_id, slots",
    [
        ("initial", dict(question=QUESTION)),
        ("focused", dict(question=QUESTION, previous_descriptions=DESCRIPTION, focus_request="exact angle at vertex B")),
        ("adaptive_decision", dict(description=DESCRIPTION, question=QUESTION)),
        ("final", dict(description=DESCRIPTION, question=QUESTION)),
    ],
)
def test_prompt_renders_match_golden(template_id, slots):
    assert render_prompt(template_id, **slots) == golden(f"{template_id}.txt")


def test_prompt_examples():
    text = render_prompt("initial", question="Q1")
    assert text.startswith("I need your help analyzing this image")
    assert "DO NOT answer the question directly" in text
    assert "NEED_MORE_INFO" in render_prompt("adaptive_decision", description="D", question="Q")
    with pytest.raises(TemplateError, match="description"):
        render_prompt("final", question="Q")
    with pytest.raises(TemplateError):
        render_prompt("nonexistent", question="Q")


def test_fixture_transcripts():
    t = parse_decision((GOLDEN / "transcript_solved.txt").read_text())
    assert (t.parsed_status, t.parsed_answer, t.parsed_request) == (SOLVED, "6", None)
    t = parse_decision((GOLDEN / "transcript_need_more_info.txt").read_text())
    assert (t.parsed_status, t.parsed_answer, t.parsed_request) == (NEED_MORE_INFO, None, "exact angle at vertex B")
    assert parse_decision((GOLDEN / "transcript_malformed.txt").read_text()).parsed_status == MALFORMED


@pytest.mark.parametrize(
    "text, expected",
    [
        ("Status: SOLVED\nAnswer: \\boxed{42}", (SOLVED, "42", None)),
        ("Status: NEED_MORE_INFO\nRequest: exact angle at vertex B", (NEED_MORE_INFO, None, "exact angle at vertex B")),
        ("", (MALFORMED, None, None)),
        ("Status: SOLVED\nAnswer: N/A", (MALFORMED, None, None)),
        ("Status: NEED_MORE_INFO\nRequest: N/A", (MALFORMED, None, None)),
        ("Status: MAYBE", (MALFORMED, None, None)),
        ("status: solved\nanswer: 12 cm", (SOLVED, "12 cm", None)),
        ("Status: NEED_MORE_INFO\nStatus: SOLVED\nAnswer: \\boxed{\\frac{1}{2}}", (SOLVED, "\\frac{1}{2}", None)),
        ("**Status**: SOLVED\n**Answer**: \\boxed{B}", (SOLVED, "B", None)),
    ],
)
def test_parse_decision_cases(text, expected):
    t = parse_decision(text)
    assert (t.parsed_status, t.parsed_answer, t.parsed_request) == expected


def test_parse_final_and_normalization():
    assert parse_final("<answer> Final Answer: \\boxed{6} </answer>") == "6"
    assert parse_final("<answer> Final Answer: 7 </answer>") == "7"
    assert parse_final("no answer here") is None
    assert last_boxed("\\boxed{a} then \\boxed{\\sqrt{2}}") == "\\sqrt{2}"
    assert normalize_answer("  \\boxed{Yes}. ") == "yes"
    assert answers_match("B.", "b") and not answers_match(None, "b")


def _transport(script):
    """MockTransport replaying ``script`` (status codes, exceptions or text) in order."""
    calls = []

    def handler(request):
        calls.append(json.loads(request.content))
        step = script[min(len(calls) - 1, len(script) - 1)]
        if isinstance(step, Exception):
            raise step
        if isinstance(step, int):
            return httpx.Response(step, text="boom")
        return httpx.Response(200, json=completion(step))

    return httpx.Client(transport=httpx.MockTransport(handler)), calls


ENDPOINT = EndpointConfig("http://mock/v1", "m", max_retries=3, backoff_base_ms=1)


def test_chat_pass_through():
    client, calls = _transport(["fixed text"])
    assert chat(ENDPOINT, [{"role": "user", "content": "hi"}], client=client) == "fixed text"
    assert calls[0]["model"] == "m" and calls[0]["messages"][0]["content"] == "hi"


def test_chat_retries_then_succeeds():
    client, calls = _transport([500, httpx.ConnectTimeout("slow"), "ok"])
    sleeps = []
    out = chat(ENDPOINT, [{"role": "user", "content": "x"}], client=client, sleep=sleeps.append, jitter=lambda: 0.0)
    assert out == "ok" and len(calls) == 3
    assert sleeps == [0.001, 0.002]


def test_chat_gives_up():
    client, calls = _transport([500])
    ep = EndpointConfig("http://mock/v1", "m", max_retries=1)
    with pytest.raises(EndpointError) as exc:
        chat(ep, [{"role": "user", "content": "x"}], client=client, sleep=lambda s: None)
    assert len(calls) == 2 and exc.value.status == 500


def test_chat_client_error_not_retried():
    client, calls = _transport([404])
    with pytest.raises(EndpointError) as exc:
        chat(ENDPOINT, [{"role": "user", "content": "x"}], client=client, sleep=lambda s: None)
    assert len(calls) == 1 and exc.value.status == 404


def test_chat_api_key_from_environment(monkeypatch):
    seen = {}

    def handler(request):
        seen.update(request.headers)
        return httpx.Response(200, json=completion("ok"))

    monkeypatch.setenv("ACRL_TEST_KEY", "sk-test")
    ep = EndpointConfig("http://mock/v1", "m", api_key_env_var_name="ACRL_TEST_KEY")
    chat(ep, [{"role": "user", "content": "x"}], ["data:image/png;base64,AA=="],
         client=httpx.Client(transport=httpx.MockTransport(handler)))
    assert seen["authorization"] == "Bearer sk-test"


def test_endpoint_presets():
    cap = EndpointConfig.captioner("u", "m")
    rea = EndpointConfig.reasoner("u", "m")
    assert (cap.temperature, cap.max_tokens) == (1.0, 800)
    assert (rea.temperature, rea.top_p, rea.max_tokens) == (0.6, 0.95, 100_000)


def _scripted_chat(endpoint, messages, attachments=(), **kw):
    return scripted_reply(prompt_text({"messages": messages}))


RC = RewardConfig(0.7)
CAP = EndpointConfig.captioner("http://mock/v1", "cap")
REA = EndpointConfig.reasoner("http://mock/v1", "rea")


@pytest.mark.parametrize(
    "tag, allow, reward, clarified, parse_failed",
    [("[solve]", True, 1.0, False, False), ("[ask]", True, 0.7, True, False),
     ("[garbage]", True, 0.0, False, True), ("[ask]", False, 1.0, False, False)],
)
def test_collect_episode_outcomes(tag, allow, reward, clarified, parse_failed):
    item = {"id": "a", "question": f"{QUESTION} {tag}", "gold_answer": "6"}
    rec = collect_episode(item, CAP, REA, RC, allow, chat_fn=_scripted_chat)
    assert rec["reward"] == reward
    assert rec["clarified"] == clarified and rec["parse_failed"] == parse_failed
    assert validate_record(rec) is None
    if clarified:
        assert rec["clar_request_text"] == "exact angle at vertex B"


def test_collect_infra_failure_marks_record():
    def broken(*a, **k):
        raise EndpointError("down", 503)

    recs = collect([{"id": i, "question": "q", "gold_answer": "1"} for i in range(3)], CAP, REA, RC, True,
                   chat_fn=broken, parallelism=2)
    assert [r["infra_failed"] for r in recs] == [True] * 3
    assert summarize(recs)["accuracy"] is None


def test_collect_over_http_clarified_success(tmp_path):
    with MockEndpoint() as server:
        cap = EndpointConfig.captioner(server.url, "cap")
        rea = EndpointConfig.reasoner(server.url, "rea")
        img = tmp_path / "fig.png"
        img.write_bytes(b"\x89PNG\r\n")
        item = {"id": "x1", "question": f"{QUESTION} [ask]", "gold_answer": "6", "image_path": str(img)}
        rec = collect_episode(item, cap, rea, RC, True)
    assert rec["reward"] == 0.7 and rec["clarified"] and rec["answer_correct"]
    paths = {r["path"] for r in server.requests}
    assert paths == {"/v1/chat/completions"}
    stages = [r["headers"]["Idempotency-Key"] for r in server.requests]
    assert stages == ["x1-caption", "x1-decide", "x1-clarify", "x1-final"]
    # images go to the captioner only
    first = server.requests[0]["body"]["messages"][-1]["content"]
    assert first[1]["image_url"]["url"].startswith("data:image/png;base64,")
    assert isinstance(server.requests[1]["body"]["messages"][-1]["content"], str)


def test_load_items_errors(tmp_path):
    p = tmp_path / "items.jsonl"
    p.write_text('{"id": 1, "question": "q", "gold_answer": "a"}\n{"id": 2}\n')
    with pytest.raises(ValueError, match=":2:"):
        load_items(p)


def test_single_pass_skips_decision_prompt():
    prompts = []

    def recording(endpoint, messages, attachments=(), **kw):
        prompts.append(prompt_text({"messages": messages}))
        return scripted_reply(prompts[-1])

    item = {"id": "s", "question": f"{QUESTION} [ask]", "gold_answer": "6"}
    rec = collect_episode(item, CAP, REA, RC, False, chat_fn=recording)
    assert [p.split()[0:4] for p in prompts] == [
        ["I", "need", "your", "help"], ["You", "are", "an", "expert"]
    ]
    assert prompts[1].startswith("You are an expert mathematical")
    assert not rec["clarified"] and rec["reward"] == 1.0
