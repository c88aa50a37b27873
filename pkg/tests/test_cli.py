import json
import socket
from pathlib import Path

import pytest

from acrl.cli import main
from acrl.records import write_jsonl

from mockserver import MockEndpoint

GOLDEN = Path(__file__).parent / "golden"

CONFIG = {
    "env": {"F": 4, "V": 3, "T_q": 1, "required_sets": {"0": [0, 1]}, "p_ask": 1.0, "p_guess": 0.2},
    "reward": {"mode": "tiered", "alpha": 0.7},
    "train": {"iterations": 10, "batch_size": 8, "checkpoint_every": 5},
    "eval": {"n": 400, "seed": 3},
}


def _config(tmp_path, doc=CONFIG, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = _config(tmp)
    assert main(["train", "--config", cfg, "--out", str(tmp / "out")]) == 0
    return tmp, cfg


def test_train_outputs(trained):
    tmp, _ = trained
    out = tmp / "out"
    metrics = (out / "metrics.jsonl").read_text().splitlines()
    assert len(metrics) == 10
    for name in ("config.resolved.json", "checkpoint_final.json", "training_curves.png",
                 "checkpoints/step_000005.json", "checkpoints/step_000010.json"):
        assert (out / name).exists(), name


def test_train_missing_alpha(tmp_path, capsys):
    doc = json.loads(json.dumps(CONFIG))
    del doc["reward"]["alpha"]
    assert main(["train", "--config", _config(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2
    assert "reward.alpha" in capsys.readouterr().err


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"env": {"F": 4, "V": 3, "T_q": 1, "required_sets": {"0": [0]}, "bogus": 1}}, "env.bogus"),
        ({"train": {"group_size": "8"}}, "train.group_size"),
        ({"extra": {}}, "extra"),
        ({"train": {"group_size": 1}}, "train.group_size"),
    ],
)
def test_train_config_errors_name_field(tmp_path, capsys, patch, field):
    doc = {**CONFIG, **patch}
    assert main(["train", "--config", _config(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2
    assert field in capsys.readouterr().err


def test_train_reward_override(tmp_path):
    cfg = _config(tmp_path, {**CONFIG, "train": {"iterations": 1, "batch_size": 2}})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o"), "--reward", "binary", "--no-plots",
                 "--seed", "9"]) == 0
    resolved = json.loads((tmp_path / "o" / "config.resolved.json").read_text())
    assert resolved["reward"]["mode"] == "binary" and resolved["train"]["seed"] == 9
    assert not (tmp_path / "o" / "training_curves.png").exists()


def test_train_resolved_config_reproduces_outputs(trained, tmp_path):
    tmp, _ = trained
    resolved = str(tmp / "out" / "config.resolved.json")
    assert main(["train", "--config", resolved, "--out", str(tmp_path / "again")]) == 0
    for name in ("metrics.jsonl", "checkpoint_final.json", "checkpoints/step_000005.json", "training_curves.png"):
        assert (tmp / "out" / name).read_bytes() == (tmp_path / "again" / name).read_bytes(), name


def test_train_abort_writes_diagnostic(tmp_path, monkeypatch):
    import numpy as np

    import acrl.trainer as trainer_mod

    monkeypatch.setattr(trainer_mod, "surrogate_gradient", lambda *a, **k: np.full((1, 4), np.inf))
    cfg = _config(tmp_path, {**CONFIG, "train": {"iterations": 2, "batch_size": 2}})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    diag = json.loads((tmp_path / "o" / "checkpoint_diagnostic.json").read_text())
    assert "non-finite" in diag["abort_reason"]


def test_eval_all(trained, tmp_path):
    tmp, cfg = trained
    out = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(tmp / "out" / "checkpoint_final.json"), "--config", cfg,
                 "--protocol", "all", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    for key in ("gap_abs", "gap_rel", "delta_deny", "delta_deny_table"):
        assert report[key] is not None
    assert report["n_eval"] == 400
    protos = {json.loads(line)["protocol"] for line in (out / "episodes.jsonl").read_text().splitlines()}
    assert protos == {"single", "clar", "deny"}
    assert (out / "report.csv").exists() and (out / "eval_report.png").exists()


def test_eval_single_has_no_clarifier_calls(trained, tmp_path):
    tmp, cfg = trained
    assert main(["eval", "--checkpoint", str(tmp / "out" / "checkpoint_final.json"), "--config", cfg,
                 "--protocol", "single", "--n", "50", "--out", str(tmp_path / "ev"), "--no-plots"]) == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert report["clarifier_calls_single"] == 0


def test_eval_usage_errors(trained, tmp_path):
    tmp, cfg = trained
    ck = str(tmp / "out" / "checkpoint_final.json")
    assert main(["eval", "--checkpoint", ck, "--config", cfg, "--n", "0", "--out", str(tmp_path / "a")]) == 2
    other = {**CONFIG, "env": {**CONFIG["env"], "required_sets": {"0": [0, 2]}}}
    cfg2 = _config(tmp_path, other, "other.json")
    assert main(["eval", "--checkpoint", ck, "--config", cfg2, "--n", "10", "--out", str(tmp_path / "b")]) == 2
    assert main(["eval", "--checkpoint", ck, "--config", cfg2, "--n", "10", "--out", str(tmp_path / "b"),
                 "--force", "--no-plots"]) == 0


def test_verify_gradient(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert main(["verify-gradient", "--config", cfg, "--n", "999"]) == 2
    assert main(["verify-gradient", "--config", cfg, "--n", "20000", "--negative-control", "--out",
                 str(tmp_path / "vg")]) == 0
    out = capsys.readouterr().out
    assert "naive_biased = true" in out and out.strip().endswith("PASS")
    rep = json.loads((tmp_path / "vg" / "gradient_check.json").read_text())
    assert rep["negative_control"]["naive_biased"] is True
    assert (tmp_path / "vg" / "gradient_check.png").exists()


def _record(i, clarified, correct, protocol=None, reward=None):
    rec = {
        "episode_id": f"e-{i}", "scene": [0, 1], "qtype": 0, "required": [0], "disclosed": [[0, 0]],
        "clarified": clarified, "clar_request": 1 if clarified else None,
        "clar_response": 1 if clarified else None, "answer_correct": correct,
        "reward": reward if reward is not None else (0.7 if clarified and correct else float(correct)),
        "caption_logprob": -0.5, "post_action_seed": f"0/1/{i}/0/0",
    }
    if protocol:
        rec["protocol"] = protocol
    return rec


def _metrics(capsys, *paths):
    assert main(["metrics", "--episodes", *map(str, paths)]) == 0
    return json.loads(capsys.readouterr().out)


def test_metrics_reduction_fixture(tmp_path, capsys):
    # 4069 of 10000 clarified before, 2895 of 10000 after
    before = write_jsonl(tmp_path / "a.jsonl", [_record(i, i < 4069, True) for i in range(10_000)])
    after = write_jsonl(tmp_path / "b.jsonl", [_record(i, i < 2895, True) for i in range(10_000)])
    doc = _metrics(capsys, before, after)
    assert doc["logs"][0]["clar_rate"] == 0.4069 and doc["logs"][1]["clar_rate"] == 0.2895
    assert doc["reduction"]["percent"] == 29


def test_metrics_without_clarifications(tmp_path, capsys):
    log = write_jsonl(tmp_path / "a.jsonl", [_record(i, False, i % 2 == 0) for i in range(6)])
    doc = _metrics(capsys, log)["logs"][0]
    assert doc["clar_rate"] == 0.0 and doc["delta_deny"] is None and doc["delta_deny_table"] is None


def test_metrics_malformed_line(tmp_path, capsys):
    lines = [json.dumps(_record(i, False, True)) for i in range(20)]
    lines[16] = lines[16][:-3]
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(lines) + "\n")
    assert main(["metrics", "--episodes", str(path)]) == 2
    assert f"{path}:17:" in capsys.readouterr().err


def test_metrics_schema_violation(tmp_path, capsys):
    rec = _record(0, False, True)
    rec["reward"] = 2.0
    path = write_jsonl(tmp_path / "bad.jsonl", [_record(1, False, True), rec])
    assert main(["metrics", "--episodes", str(path)]) == 2
    assert ":2:" in capsys.readouterr().err


def test_metrics_uniform_fraction_from_training_log(trained, tmp_path, capsys):
    tmp, cfg = trained
    out = tmp_path / "o"
    assert main(["train", "--config", cfg, "--out", str(out), "--log-episodes", "--no-plots"]) == 0
    capsys.readouterr()
    doc = _metrics(capsys, out / "episodes.jsonl")["logs"][0]
    metrics = [json.loads(l) for l in (out / "metrics.jsonl").read_text().splitlines()]
    assert doc["uniform_frac"] == pytest.approx(sum(m["uniform_frac"] for m in metrics) / len(metrics))


def test_collect_matches_golden(tmp_path):
    with MockEndpoint() as server:
        rc = main(["collect", "--items", str(GOLDEN / "collect_items.jsonl"), "--captioner-endpoint", server.url,
                   "--reasoner-endpoint", server.url, "--out", str(tmp_path), "--parallelism", "3"])
    assert rc == 0
    assert (tmp_path / "episodes.jsonl").read_text() == (GOLDEN / "collect_episodes.jsonl").read_text()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["accuracy"] == 0.5 and summary["clar_rate"] == 0.25


def test_collect_without_clarification(tmp_path):
    with MockEndpoint() as server:
        rc = main(["collect", "--items", str(GOLDEN / "collect_items.jsonl"), "--captioner-endpoint", server.url,
                   "--reasoner-endpoint", server.url, "--out", str(tmp_path), "--allow-clarification", "false"])
    assert rc == 0
    recs = [json.loads(l) for l in (tmp_path / "episodes.jsonl").read_text().splitlines()]
    assert not any(r["clarified"] for r in recs)


def _dead_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_collect_unreachable_endpoint(tmp_path):
    items = tmp_path / "items.jsonl"
    write_jsonl(items, [{"id": i, "question": "q", "gold_answer": "1"} for i in range(3)])
    url = f"http://127.0.0.1:{_dead_port()}/v1"
    rc = main(["collect", "--items", str(items), "--captioner-endpoint", url, "--reasoner-endpoint", url,
               "--out", str(tmp_path / "o"), "--max-retries", "0", "--timeout-ms", "500"])
    assert rc == 1
    recs = [json.loads(l) for l in (tmp_path / "o" / "episodes.jsonl").read_text().splitlines()]
    assert len(recs) == 3 and all(r["infra_failed"] for r in recs)


def test_usage_errors():
    assert main([]) == 2
    assert main(["train"]) == 2
    assert main(["collect", "--items", "x", "--captioner-endpoint", "u", "--reasoner-endpoint", "u", "--out", "o",
                 "--allow-clarification", "maybe"]) == 2
    assert main(["--help"]) == 0


@pytest.mark.parametrize("name", ["front_loading.json", "gradient_check.json"])
def test_shipped_configs_parse(name):
    from acrl.config import load_config

    cfg = load_config(Path(__file__).parent.parent / "configs" / name)
    assert cfg.reward.alpha == 0.7
