import json

import pytest
import yaml

from semmec.cli import EXIT_FAILED, EXIT_OK, EXIT_USAGE, main
from semmec.harness import read_csv

TINY = {
    "env": {"n_ues": 2, "k_channels": 2, "queue_len": 4},
    "experiment": {"values": [1.0e6, 1.0e7], "methods": ["local", "mappo"], "seeds": [0], "eval_runs": 3},
    "train": {"mappo": {"episodes": 2, "hidden_sizes": [8]}},
}


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


def test_train_then_eval(tmp_path, cfg_path, capsys):
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "m")]) == EXIT_OK
    assert len(read_csv(tmp_path / "m" / "train_log.csv")) == 2
    capsys.readouterr()
    ckpt = str(tmp_path / "m" / "model.npz")
    assert main(["eval", "--checkpoint", ckpt, "--runs", "3", "--out", str(tmp_path / "e")]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed["runs"] == 3 and len(printed["qoe_per_agent"]) == 2
    assert float(read_csv(tmp_path / "e" / "eval.csv")[0]["qoe"]) == printed["qoe"]
    assert main(["eval", "--checkpoint", ckpt, "--runs", "3", "--force-mu1"]) == EXIT_OK


def test_sweep_writes_outputs(tmp_path, cfg_path):
    out = tmp_path / "s"
    assert main(["sweep", "--config", str(cfg_path), "--out", str(out), "--no-checkpoints"]) == EXIT_OK
    assert len(read_csv(out / "results.csv")) == 4
    assert not (out / "checkpoints").exists()
    assert json.loads((out / "summary.json").read_text())["failures"] == 0


def test_sweep_failure_exit_code(tmp_path):
    bad = dict(TINY, train={"mappo": {"episodes": 0}})
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(bad))
    assert main(["sweep", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_FAILED
    rows = read_csv(tmp_path / "o" / "results.csv")
    assert {r["status"] for r in rows if r["method"] == "local"} == {"ok"}


def test_config_errors_exit_two(tmp_path, caplog):
    path = tmp_path / "bad.yaml"
    path.write_text("env:\n  mu_min: 1.5\n")
    assert main(["sweep", "--config", str(path)]) == EXIT_USAGE
    assert "env.mu_min" in caplog.text
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.npz")]) == EXIT_USAGE


def test_freeze_and_oracle(tmp_path, cfg_path, capsys):
    inst = tmp_path / "inst.json"
    assert main(["freeze", "--config", str(cfg_path), "--seed", "3", "--step", "1", "--out", str(inst)]) == EXIT_OK
    capsys.readouterr()
    assert main(["oracle", "--instance", str(inst), "--out", str(tmp_path / "best.json")]) == EXIT_OK
    best = json.loads((tmp_path / "best.json").read_text())
    assert len(best["actions"]) == 2 and best["value"] >= 0


def test_oracle_too_large(tmp_path):
    inst = tmp_path / "inst.json"
    assert main(["freeze", "--out", str(inst)]) == EXIT_OK
    assert main(["oracle", "--instance", str(inst)]) == EXIT_FAILED
