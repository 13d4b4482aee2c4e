import io
import json
import os
import sys

import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), "..", "src"))

from socialav.cli import build_parser, main
from socialav.logging_utils import console_handlers

TINY = [
    "--set", "policy.encoder_widths=[8]",
    "--set", "policy.att_dim=8",
    "--set", "policy.att_out=6",
    "--set", "policy.decoder_widths=[8]",
    "--set", "policy.use_prior=false",
    "--set", "ppo.total_steps=30",
    "--set", "ppo.buffer_cap=30",
    "--set", "ppo.minibatch=15",
    "--set", "ppo.update_epochs=1",
]


def _last_json_line(text):
    lines = [line for line in text.splitlines() if line.strip().startswith("{")]
    return json.loads(lines[-1])


def test_grad_check_passes(tmp_path, capsys):
    out = tmp_path / "gc"
    assert main(["grad-check", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "FAIL" not in printed
    metrics = (out / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "layer,max_relative_error,tolerance,passed"
    assert [line.split(",")[0] for line in metrics[1:]] == ["linear", "gru", "attention", "vae_chain", "policy_stack"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "grad-check"
    assert manifest["passed"] is True
    assert "metrics.csv" in manifest["files"]
    assert "config.json" in manifest["files"]
    snapshot = json.loads((out / "config.json").read_text())
    assert snapshot["_run"] == {"command": "grad-check", "seed": None}


def test_default_run_dir_uses_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("SOCIALAV_OUTPUT_ROOT", str(tmp_path))
    assert main(["grad-check"]) == 0
    assert (tmp_path / "grad-check" / "manifest.json").exists()
    assert (tmp_path / "grad-check" / "checkpoints").is_dir()


def test_invalid_config_exits_2(tmp_path, capsys):
    code = main(["grad-check", "--out", str(tmp_path), "--set", "ppo.clip=1.5", "--set", "env.bogus=1"])
    assert code == 2
    err = _last_json_line(capsys.readouterr().err)
    assert err["error"] == "ConfigurationError"
    assert err["exit_code"] == 2
    assert "ppo.clip" in err["message"]
    assert "env.bogus" in err["message"]


def test_unreadable_config_file_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("env: [unclosed\n")
    assert main(["grad-check", "--out", str(tmp_path / "o"), "--config", str(bad)]) == 2


def test_seed_is_required_for_stochastic_commands():
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(["gen-data"])
    assert exc.value.code == 2


def test_gen_data_is_reproducible(tmp_path):
    args = ["--seed", "4", "--episodes", "2", "--set", "experiment.dataset_steps=20"]
    assert main(["gen-data", "--out", str(tmp_path / "a"), *args]) == 0
    assert main(["gen-data", "--out", str(tmp_path / "b"), *args]) == 0
    for name in ("dataset.jsonl", "dataset.manifest.json", "metrics.csv", "config.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_prior_without_checkpoint_exits_2(tmp_path, capsys):
    code = main(["train-policy", "--seed", "0", "--out", str(tmp_path), "--set", "policy.use_prior=true"])
    assert code == 2
    assert "--dpl" in _last_json_line(capsys.readouterr().err)["message"]


def test_train_eval_replay_round_trip(tmp_path, capsys):
    train_dir = tmp_path / "train"
    eval_dir = tmp_path / "eval"
    assert main(["train-policy", "--seed", "1", "--out", str(train_dir), *TINY]) == 0
    checkpoint = train_dir / "checkpoints" / "policy_final.nnckpt"
    assert checkpoint.exists()
    assert (train_dir / "metrics.csv").read_text().startswith("update,env_steps,")

    capsys.readouterr()
    assert main(["eval", "--seed", "1", "--out", str(eval_dir), "--policy", str(checkpoint),
                 "--episodes", "1", "--record", *TINY]) == 0
    summary = _last_json_line(capsys.readouterr().out)
    assert summary["episodes"] == 1
    log = eval_dir / "episodes" / "episode_0000.log.csv"
    assert log.exists()
    assert (eval_dir / "episodes" / "episode_0000.meta.json").exists()

    replay_dir = tmp_path / "replay"
    assert main(["replay", str(log), "--out", str(replay_dir)]) == 0
    records = [json.loads(line) for line in (replay_dir / "episode_0000.replay.jsonl").read_text().splitlines()]
    evaluation = json.loads((eval_dir / "evaluation.json").read_text())
    assert len(records) == len(evaluation["speed_profiles"][0])
    assert all(r["max_abs_diff"] < 1e-9 for r in records)


def test_report_into_existing_run(tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    (run / "metrics.csv").write_text("update,env_steps,mean_return_global,seed\n1,30,0.5,0\n2,60,1.5,0\n")
    assert main(["report", "--run", str(run)]) == 0
    assert (run / "report" / "reward_curve.svg").exists()
    assert (run / "report" / "summary.txt").exists()
    assert not (run / "config.json").exists()
    assert not (run / "manifest.json").exists()


def test_report_to_separate_directory(tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    (run / "metrics.csv").write_text("update,env_steps,mean_return_global,seed\n1,30,0.5,0\n")
    out = tmp_path / "out"
    assert main(["report", "--run", str(run), "--out", str(out), "--smoothing", "3"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["report"] == ["reward_curve.svg", "summary.txt"]
    assert "report/reward_curve.svg" in manifest["files"]


def test_failure_writes_only_the_json_line_to_the_console(tmp_path, monkeypatch, capsys):
    console = io.StringIO()
    handlers = console_handlers()
    assert handlers
    for handler in handlers:
        monkeypatch.setattr(handler, "stream", console)

    code = main(["train-policy", "--seed", "0", "--out", str(tmp_path), "--set", "policy.use_prior=true"])
    assert code == 2
    assert "ConfigurationError" not in console.getvalue()
    assert " - WARNING - " not in console.getvalue()
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert json.loads(err[0])["error"] == "ConfigurationError"
    assert "ConfigurationError" in (tmp_path / "run.log").read_text()

    # the console is live again once the error is reported
    before = len(console.getvalue())
    assert main(["grad-check", "--out", str(tmp_path / "gc")]) == 0
    assert "grad-check" in console.getvalue()[before:]
