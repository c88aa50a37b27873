"""Evaluation protocols and behavioural metrics.

Three protocols share the same per-episode substreams, so episode ``i`` has
the same scene, question, caption and reasoner randomness in each of them:

* ``single`` -- clarification forbidden; a request is resolved as a refusal.
* ``clar``   -- one clarification permitted and answered by the clarifier.
* ``deny``   -- the requesting subset of ``clar`` replayed with the request refused.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import rng as rngmod
from .core import Episode, RewardConfig
from .policy import logprob, sampler
from .synthenv import CountingClarifier, EnvConfig, resolve_episode, run_episode, sample_prompt

PROTOCOLS = ("single", "clar", "deny")
DEFAULT_N = 20_000


@dataclass
class MetricsReport:
    accuracy_single: Optional[float] = None
    accuracy_clar: Optional[float] = None
    clar_rate: Optional[float] = None
    gap_abs: Optional[float] = None
    gap_rel: Optional[float] = None
    n_requests: Optional[int] = None
    acc_on_requested_clar: Optional[float] = None
    acc_on_requested_denied: Optional[float] = None
    delta_deny: Optional[float] = None
    delta_deny_table: Optional[float] = None
    n_eval: int = 0
    clarifier_calls_single: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)


def _keys(seed: int, n: int) -> list[str]:
    return [rngmod.episode_key(seed, rngmod.EVAL, i) for i in range(n)]


def _run(theta, env, n, seed, reward_cfg, allow_clarification, clarifier, protocol):
    if n < 1:
        raise ValueError("evaluation needs at least one episode")
    sample = sampler(theta)
    episodes = []
    for i, key in enumerate(_keys(seed, n)):
        scene, question = sample_prompt(key, env)
        episodes.append(
            run_episode(
                sample,
                scene,
                question,
                reward_cfg,
                key,
                env,
                allow_clarification=allow_clarification,
                clarifier=clarifier,
                episode_id=f"{protocol}-{i}",
            )
        )
    return episodes


def records(episodes: list[Episode], protocol: str) -> list[dict]:
    out = []
    for ep in episodes:
        rec = ep.to_record()
        rec["protocol"] = protocol
        out.append(rec)
    return out


def accuracy(episodes) -> float:
    return float(np.mean([ep.answer_correct for ep in episodes]))


def eval_single_pass(theta, env: EnvConfig, n: int, seed: int = 0, reward_cfg: RewardConfig = RewardConfig()):
    """Returns ``(accuracy, episodes, clarifier_calls)``; the call count must be zero."""
    counter = CountingClarifier()
    episodes = _run(theta, env, n, seed, reward_cfg, False, counter, "single")
    return accuracy(episodes), episodes, counter.calls


def eval_clar_enabled(theta, env: EnvConfig, n: int, seed: int = 0, reward_cfg: RewardConfig = RewardConfig()):
    """Returns ``(accuracy, clar_rate, episodes)``."""
    episodes = _run(theta, env, n, seed, reward_cfg, True, CountingClarifier(), "clar")
    rate = float(np.mean([ep.clarified for ep in episodes]))
    return accuracy(episodes), rate, episodes


def clarification_gap(accuracy_clar: float, accuracy_single: float) -> tuple[float, float]:
    gap = accuracy_clar - accuracy_single
    rel = gap / (1.0 - accuracy_single) if accuracy_single < 1.0 else 0.0
    return gap, rel


def reduction(rate_before: float, rate_after: float) -> Optional[tuple[float, int]]:
    """Relative drop ``1 - after/before`` as ``(exact, rounded percent)``; ``None`` if undefined."""
    if rate_before <= 0:
        return None
    exact = 1.0 - rate_after / rate_before
    return exact, int(round(exact * 100))


def deny_table_delta(accuracy_single: float, acc_denied: float) -> float:
    """Difference between overall single-pass accuracy and denied accuracy on the requested subset."""
    return accuracy_single - acc_denied


@dataclass
class DenyResult:
    n_requests: int
    acc_on_requested_clar: Optional[float]
    acc_on_requested_denied: Optional[float]
    delta_deny: Optional[float]
    denied_episodes: list


def deny_analysis(clar_episodes, theta, env: EnvConfig, reward_cfg: RewardConfig = RewardConfig()) -> DenyResult:
    """Replay each requesting episode with identical caption and substream, refusing the request."""
    requested = [ep for ep in clar_episodes if ep.clarified]
    if not requested:
        return DenyResult(0, None, None, None, [])
    denied = []
    for ep in requested:
        lp = logprob(np.asarray(theta), ep.question, ep.c0.mask(env.F))
        denied.append(
            resolve_episode(
                ep.scene,
                ep.question,
                ep.c0,
                lp,
                ep.post_action_seed,
                env,
                reward_cfg,
                allow_clarification=False,
                episode_id=ep.episode_id.replace("clar-", "deny-", 1),
            )
        )
    a_clar = accuracy(requested)
    a_deny = accuracy(denied)
    return DenyResult(len(requested), a_clar, a_deny, a_clar - a_deny, denied)


def evaluate(
    theta,
    env: EnvConfig,
    n: int = DEFAULT_N,
    seed: int = 0,
    protocol: str = "all",
    reward_cfg: RewardConfig = RewardConfig(),
) -> tuple[MetricsReport, dict[str, list[dict]]]:
    """Run one protocol (or ``all`` on shared episodes) and build the report."""
    if protocol not in PROTOCOLS + ("all",):
        raise ValueError(f"unknown protocol {protocol!r}")
    if n < 1:
        raise ValueError("evaluation needs at least one episode")
    report = MetricsReport(n_eval=n)
    recs: dict[str, list[dict]] = {}
    if protocol in ("single", "all"):
        acc, eps, calls = eval_single_pass(theta, env, n, seed, reward_cfg)
        report.accuracy_single, report.clarifier_calls_single = acc, calls
        recs["single"] = records(eps, "single")
    if protocol in ("clar", "deny", "all"):
        acc, rate, eps = eval_clar_enabled(theta, env, n, seed, reward_cfg)
        report.accuracy_clar, report.clar_rate = acc, rate
        report.n_requests = sum(ep.clarified for ep in eps)
        if protocol != "deny":
            recs["clar"] = records(eps, "clar")
        if protocol in ("deny", "all"):
            res = deny_analysis(eps, theta, env, reward_cfg)
            report.acc_on_requested_clar = res.acc_on_requested_clar
            report.acc_on_requested_denied = res.acc_on_requested_denied
            report.delta_deny = res.delta_deny
            recs["deny"] = records(res.denied_episodes, "deny")
    if report.accuracy_single is not None and report.accuracy_clar is not None:
        report.gap_abs, report.gap_rel = clarification_gap(report.accuracy_clar, report.accuracy_single)
        if report.acc_on_requested_denied is not None:
            report.delta_deny_table = deny_table_delta(report.accuracy_single, report.acc_on_requested_denied)
    return report, recs


def report_csv(report: MetricsReport) -> str:
    """One row per protocol that was run."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["protocol", "n", "accuracy", "clar_rate", "n_requests"])
    if report.accuracy_single is not None:
        w.writerow(["single", report.n_eval, report.accuracy_single, 0.0, 0])
    if report.accuracy_clar is not None:
        w.writerow(["clar", report.n_eval, report.accuracy_clar, report.clar_rate, report.n_requests])
    if report.acc_on_requested_denied is not None:
        w.writerow(["deny", report.n_requests, report.acc_on_requested_denied, 0.0, 0])
    return buf.getvalue()
