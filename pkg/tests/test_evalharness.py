import math

import numpy as np
import pytest

from acrl.evalharness import (
    clarification_gap,
    deny_table_delta,
    eval_clar_enabled,
    eval_single_pass,
    evaluate,
    reduction,
    report_csv,
)
from acrl.synthenv import EnvConfig

N = 4000


@pytest.fixture
def env():
    return EnvConfig(F=4, V=3, T_q=1, required_sets=[{0, 1}], p_ask=1.0, p_guess=0.0)


def _se(p, n):
    return 3 * math.sqrt(p * (1 - p) / n)


def test_single_pass_limits(env):
    acc, eps, calls = eval_single_pass(np.full((1, 4), 40.0), env, 500)
    assert acc == 1.0 and calls == 0
    acc, _, calls = eval_single_pass(np.full((1, 4), -40.0), env, 500)
    assert acc == 0.0 and calls == 0


def test_single_pass_half_disclosure(env):
    acc, _, _ = eval_single_pass(np.zeros((1, 4)), env, N, seed=2)
    assert abs(acc - 0.25) <= _se(0.25, N)


def test_clar_enabled(env):
    acc, rate, _ = eval_clar_enabled(np.full((1, 4), 40.0), env, 300)
    assert rate == 0.0 and acc == 1.0
    acc, rate, _ = eval_clar_enabled(np.zeros((1, 4)), env, N, seed=5)
    assert abs(rate - 0.5) <= _se(0.5, N)
    assert abs(acc - 0.75) <= _se(0.75, N)


def test_gap_fixtures():
    gap, rel = clarification_gap(0.3766, 0.3671)
    assert gap == pytest.approx(0.0095, abs=1e-12) and rel == pytest.approx(0.015, abs=1e-3)
    gap, rel = clarification_gap(0.3720, 0.3431)
    assert gap == pytest.approx(0.0289, abs=1e-12) and rel == pytest.approx(0.044, abs=1e-3)
    assert clarification_gap(0.4, 0.4) == (0.0, 0.0)


def test_reduction_fixtures():
    exact, pct = reduction(0.4069, 0.2895)
    assert pct == 29 and exact == pytest.approx(0.2885, abs=1e-4)
    exact, pct = reduction(0.4957, 0.3028)
    assert pct == 39 and exact == pytest.approx(0.3891, abs=1e-4)
    assert reduction(0.3, 0.3) == (0.0, 0)
    assert reduction(0.0, 0.1) is None


def test_deny_table_fixture():
    assert deny_table_delta(0.3671, 0.2250) == pytest.approx(0.1421, abs=1e-12)


def test_deny_deterministic_env(env):
    report, recs = evaluate(np.zeros((1, 4)), env, 2000, seed=1, protocol="all")
    # every clarification succeeds and, with p_guess = 0, every denial fails
    assert report.acc_on_requested_clar == 1.0
    assert report.acc_on_requested_denied == 0.0
    assert report.delta_deny == 1.0
    assert report.delta_deny_table == report.accuracy_single
    assert len(recs["deny"]) == report.n_requests


def test_no_requests_gives_undefined_fields():
    env = EnvConfig(F=4, V=3, T_q=1, required_sets=[{0, 1}], p_ask=0.0)
    report, _ = evaluate(np.zeros((1, 4)), env, 500, protocol="all")
    assert report.n_requests == 0
    assert report.acc_on_requested_clar is None and report.delta_deny is None and report.delta_deny_table is None


def test_protocols_share_prompts(env):
    _, recs = evaluate(np.zeros((1, 4)), env, 200, seed=4, protocol="all")
    for s, c in zip(recs["single"], recs["clar"]):
        assert s["scene"] == c["scene"] and s["disclosed"] == c["disclosed"]
        assert s["episode_id"].split("-")[1] == c["episode_id"].split("-")[1]
    clar_by_id = {r["episode_id"].split("-")[1]: r for r in recs["clar"]}
    for d in recs["deny"]:
        c = clar_by_id[d["episode_id"].split("-")[1]]
        assert c["clarified"] and d["disclosed"] == c["disclosed"] and not d["clarified"]


def test_single_protocol_report(env):
    report, recs = evaluate(np.zeros((1, 4)), env, 100, protocol="single")
    assert report.clarifier_calls_single == 0 and report.accuracy_clar is None
    assert list(recs) == ["single"]
    assert report_csv(report).splitlines()[0] == "protocol,n,accuracy,clar_rate,n_requests"


def test_evaluate_rejects_bad_input(env):
    with pytest.raises(ValueError):
        evaluate(np.zeros((1, 4)), env, 0)
    with pytest.raises(ValueError):
        evaluate(np.zeros((1, 4)), env, 10, protocol="nope")
