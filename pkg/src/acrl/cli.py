"""``acrl`` command line: train, eval, verify-gradient, metrics, collect.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import HELP_DEFAULTS, ConfigError, load_config
from .core import REWARD_MODES, TIERED, ContractViolation, RewardConfig
from .evalharness import PROTOCOLS, evaluate, reduction, report_csv
from .records import SchemaError, log_metrics, read_episode_log, write_jsonl
from .trainer import CheckpointError, DigestMismatch, TrainingAborted, load_checkpoint, save_checkpoint, train

log = logging.getLogger("acrl")

OK, RUNTIME_FAILURE, USAGE_ERROR = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # raise instead of exiting so main() can map usage errors to code 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _dump(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


# train


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config, reward_override=args.reward, seed_override=args.seed)
    except ConfigError as exc:
        return _fail(USAGE_ERROR, f"invalid config: {exc}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "config.resolved.json", cfg.to_dict())
    env = cfg.env

    def on_checkpoint(params):
        save_checkpoint(params, env, out / "checkpoints" / f"step_{params.step:06d}.json")

    ep_fh = (out / "episodes.jsonl").open("w") if args.log_episodes else None

    def on_episodes(groups):
        for g in groups:
            for ep in g:
                ep_fh.write(json.dumps(ep.to_record(), separators=(",", ":")) + "\n")

    try:
        params, metrics = train(
            cfg.train, on_checkpoint=on_checkpoint, on_episodes=on_episodes if ep_fh else None
        )
    except TrainingAborted as exc:
        save_checkpoint(exc.params, env, out / "checkpoint_diagnostic.json", {"abort_reason": str(exc)})
        return _fail(RUNTIME_FAILURE, f"training aborted at iteration {exc.iteration + 1}: {exc}")
    finally:
        if ep_fh:
            ep_fh.close()
    write_jsonl(out / "metrics.jsonl", metrics)
    save_checkpoint(params, env, out / "checkpoint_final.json")
    if not args.no_plots:
        from .plotting import training_curves

        training_curves({cfg.reward.mode: metrics}, out / "training_curves.png")
    last = metrics[-1] if metrics else {}
    print(
        f"trained {cfg.train.iterations} iterations ({cfg.reward.mode}); "
        f"final mean_reward {last.get('mean_reward', float('nan')):.4f} "
        f"train_clar_rate {last.get('train_clar_rate', float('nan')):.4f}"
    )
    return OK


# eval


def cmd_eval(args) -> int:
    if args.n is not None and args.n < 1:
        return _fail(USAGE_ERROR, "--n must be >= 1")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail(USAGE_ERROR, f"invalid config: {exc}")
    try:
        params = load_checkpoint(args.checkpoint, cfg.env, force=args.force)
    except DigestMismatch as exc:
        return _fail(USAGE_ERROR, str(exc))
    except CheckpointError as exc:
        return _fail(USAGE_ERROR, str(exc))
    n = args.n if args.n is not None else cfg.eval_n
    report, recs = evaluate(params.theta, cfg.env, n, cfg.eval_seed, args.protocol, cfg.reward)
    out = Path(args.out)
    doc = report.to_dict()
    doc.update({"protocol": args.protocol, "checkpoint_step": params.step, "seed": cfg.eval_seed})
    _dump(out / "report.json", doc)
    (out / "report.csv").write_text(report_csv(report))
    write_jsonl(out / "episodes.jsonl", (r for proto in PROTOCOLS for r in recs.get(proto, [])))
    if not args.no_plots:
        from .plotting import eval_summary

        eval_summary(doc, out / "eval_report.png")
    for key in ("accuracy_single", "accuracy_clar", "clar_rate", "gap_abs", "gap_rel", "delta_deny", "delta_deny_table"):
        val = doc[key]
        print(f"{key:>18}: {'n/a' if val is None else f'{val:.4f}'}")
    return OK


# verify-gradient


def _coupling(args, cfg):
    from .oracle import AskCoupling

    t = args.coupled_qtype
    f = args.coupled_attr if args.coupled_attr is not None else min(cfg.env.required_sets[t])
    return AskCoupling((t, f), scale=args.coupling_scale, bias=args.coupling_bias)


def cmd_verify_gradient(args) -> int:
    from .oracle import MIN_MC_SAMPLES, bias_demo_theta_dependent, verify_unbiasedness

    if args.n < MIN_MC_SAMPLES:
        return _fail(USAGE_ERROR, f"--n must be >= {MIN_MC_SAMPLES}")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail(USAGE_ERROR, f"invalid config: {exc}")
    env = cfg.env
    if args.negative_control and not 0 <= args.coupled_qtype < env.T_q:
        return _fail(USAGE_ERROR, f"--coupled-qtype must be in [0, {env.T_q})")
    theta = np.full((env.T_q, env.F), float(cfg.train.init_logit))
    try:
        rep = verify_unbiasedness(theta, env, cfg.reward, args.n, seed=args.seed, z=args.z)
    except ContractViolation as exc:
        return _fail(USAGE_ERROR, str(exc))
    print(f"exact J = {rep['expected_reward']:.6f}, n = {args.n}")
    for name, block in rep["baselines"].items():
        print(f"baseline {name} ({block['baseline_value']:.6f}):")
        for e in block["entries"]:
            flag = "ok" if e["pass"] else "FAIL"
            print(
                f"  [{e['qtype']},{e['attr']}] exact {e['exact']:+.6f}  "
                f"mc {e['estimate']:+.6f} ± {e['stderr']:.6f}  {flag}"
            )
    passed = rep["pass"]
    if args.negative_control:
        demo = bias_demo_theta_dependent(theta, env, cfg.reward, args.n, _coupling(args, cfg), seed=args.seed)
        rep["negative_control"] = demo
        print(f"negative control at {tuple(demo['coord'])}, p_ask = {demo['p_ask']:.4f}, exact {demo['exact']:+.6f}")
        for name in ("naive", "corrected"):
            d = demo[name]
            print(f"  {name:>9}: {d['estimate']:+.6f} ± {d['stderr']:.6f}  ({d['z']:.1f} se)")
        print(f"  naive_biased = {str(demo['naive_biased']).lower()}, corrected_ok = {str(demo['corrected_ok']).lower()}")
        passed = passed and demo["naive_biased"] and demo["corrected_ok"]
    rep["pass"] = bool(passed)
    if args.out:
        out = Path(args.out)
        _dump(out / "gradient_check.json", rep)
        if not args.no_plots:
            from .plotting import gradient_check

            gradient_check(rep["baselines"]["none"]["entries"], out / "gradient_check.png", args.z)
    print("PASS" if passed else "FAIL")
    return OK if passed else RUNTIME_FAILURE


# metrics


def cmd_metrics(args) -> int:
    logs = []
    for path in args.episodes:
        try:
            logs.append(read_episode_log(path))
        except SchemaError as exc:
            return _fail(USAGE_ERROR, f"schema violation at {exc}")
        except OSError as exc:
            return _fail(USAGE_ERROR, f"cannot read {path}: {exc}")
    doc = {"logs": [dict(path=str(p), **log_metrics(recs)) for p, recs in zip(args.episodes, logs)]}
    if len(logs) == 2:
        before, after = doc["logs"][0]["clar_rate"], doc["logs"][1]["clar_rate"]
        red = reduction(before, after) if before is not None and after is not None else None
        doc["reduction"] = None if red is None else {"exact": red[0], "percent": red[1]}
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return OK


# collect


def cmd_collect(args) -> int:
    from .llmbridge import EndpointConfig, collect, load_items, summarize

    try:
        items = load_items(args.items)
    except (OSError, ValueError) as exc:
        return _fail(USAGE_ERROR, str(exc))
    try:
        reward = RewardConfig(alpha=args.alpha, mode=args.reward)
        common = dict(api_key_env_var_name=args.api_key_env, timeout_ms=args.timeout_ms, max_retries=args.max_retries)
        captioner = EndpointConfig.captioner(args.captioner_endpoint, args.captioner_model, **common)
        reasoner = EndpointConfig.reasoner(args.reasoner_endpoint, args.reasoner_model, **common)
    except (ContractViolation, ValueError) as exc:
        return _fail(USAGE_ERROR, str(exc))
    records = collect(items, captioner, reasoner, reward, args.allow_clarification, parallelism=args.parallelism)
    out = Path(args.out)
    write_jsonl(out / "episodes.jsonl", records)
    summary = summarize(records)
    _dump(out / "summary.json", summary)
    acc, rate = summary["accuracy"], summary["clar_rate"]
    print(
        f"items {summary['n_items']}  infra_failed {summary['n_infra_failed']}  "
        f"parse_failed {summary['n_parse_failed']}  "
        f"accuracy {'n/a' if acc is None else f'{acc:.4f}'}  clar_rate {'n/a' if rate is None else f'{rate:.4f}'}"
    )
    if records and summary["n_infra_failed"] == len(records):
        return _fail(RUNTIME_FAILURE, "every item failed at the infrastructure level")
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="acrl",
        description="Train and evaluate disclosure policies under tiered clarification rewards.",
        epilog=HELP_DEFAULTS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run the training loop", epilog=HELP_DEFAULTS,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    t.add_argument("--config", required=True, help="run configuration (JSON)")
    t.add_argument("--seed", type=int, default=None, help="override train.seed")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--reward", choices=REWARD_MODES, default=None, help="override reward.mode")
    t.add_argument("--log-episodes", action="store_true", help="also write every rollout to episodes.jsonl")
    t.add_argument("--no-plots", action="store_true", help="skip training_curves.png")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--protocol", choices=PROTOCOLS + ("all",), default="all",
                   help="all runs every protocol on shared episodes (default)")
    e.add_argument("--n", type=int, default=None, help="episodes per protocol (default eval.n, 20000)")
    e.add_argument("--out", required=True)
    e.add_argument("--force", action="store_true", help="ignore an environment digest mismatch")
    e.add_argument("--no-plots", action="store_true")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("verify-gradient", help="exact vs Monte-Carlo policy gradient check")
    g.add_argument("--config", required=True)
    g.add_argument("--n", type=int, default=200_000, help="Monte-Carlo episodes (default 200000, minimum 1000)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--z", type=float, default=3.0, help="pass band in standard errors (default 3)")
    g.add_argument("--negative-control", action="store_true",
                   help="also couple the reasoner's ask probability to a policy logit")
    g.add_argument("--coupled-qtype", type=int, default=0, help="question type of the coupled logit (default 0)")
    g.add_argument("--coupled-attr", type=int, default=None,
                   help="attribute of the coupled logit (default: smallest required attribute)")
    g.add_argument("--coupling-scale", type=float, default=1.0, help="default 1.0")
    g.add_argument("--coupling-bias", type=float, default=0.0, help="default 0.0")
    g.add_argument("--out", default=None, help="directory for gradient_check.json and .png")
    g.add_argument("--no-plots", action="store_true")
    g.set_defaults(func=cmd_verify_gradient)

    m = sub.add_parser("metrics", help="recompute metrics from episode logs")
    m.add_argument("--episodes", nargs="+", required=True,
                   help="one log, or two (before, after) to report the clarification-rate reduction")
    m.add_argument("--out", default=None, help="also write the JSON summary here")
    m.set_defaults(func=cmd_metrics)

    c = sub.add_parser("collect", help="collect free-text episodes from chat endpoints")
    c.add_argument("--items", required=True, help="JSONL with id, question, gold_answer, optional image_path")
    c.add_argument("--captioner-endpoint", required=True, help="base URL of an OpenAI-compatible API")
    c.add_argument("--captioner-model", default="captioner")
    c.add_argument("--reasoner-endpoint", required=True)
    c.add_argument("--reasoner-model", default="reasoner")
    c.add_argument("--api-key-env", default=None, help="name of the environment variable holding the API key")
    c.add_argument("--allow-clarification", type=_bool, default=True, help="true or false (default true)")
    c.add_argument("--reward", choices=REWARD_MODES, default=TIERED)
    c.add_argument("--alpha", type=float, default=0.7)
    c.add_argument("--max-retries", type=int, default=3)
    c.add_argument("--timeout-ms", type=int, default=120_000)
    c.add_argument("--parallelism", type=int, default=4)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_collect)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return USAGE_ERROR
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return _fail(RUNTIME_FAILURE, "interrupted")
