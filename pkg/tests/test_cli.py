import json
import subprocess
import sys

import numpy as np
import pytest

from polysample.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main, read_config
from polysample.tensorfile import load_tensors


def test_verify_defaults_pass(tmp_path, capsys):
    out = tmp_path / "report.json"
    assert main(["verify", "--trials", "1", "--out", str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert report["passed"] and all(r["max_residual"] <= 1e-9 for r in report["results"])
    assert "PASS" in capsys.readouterr().out


def test_verify_odd_extent_is_usage_error(capsys):
    assert main(["verify", "--extent", "5"]) == EXIT_USAGE
    assert "even" in capsys.readouterr().err


def test_verify_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["verify", "--extent", "8", "--trials", "2", "--seed", "4", "--out", str(a)])
    main(["verify", "--extent", "8", "--trials", "2", "--seed", "4", "--out", str(b)])
    assert a.read_text() == b.read_text()


def test_verify_reports_failures(monkeypatch, capsys):
    from polysample import cli
    from polysample.verify import PropertyResult, VerifyReport

    def broken(*args, **kwargs):
        return VerifyReport(8, 1, 0, 1e-9, [PropertyResult("lpd_equivariance", 0.5, 1, False)])

    monkeypatch.setattr(cli, "run_suite", broken)
    assert main(["verify"]) == EXIT_FAIL
    assert "lpd_equivariance" in capsys.readouterr().err


def test_gradcheck_command(tmp_path):
    out = tmp_path / "g.json"
    assert main(["gradcheck", "--trials", "1", "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["passed"]


def test_demo_prints_two_zero_norms(capsys):
    assert main(["demo-equivariance", "--extent", "16", "--features", "8"]) == EXIT_OK
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("Norm(")]
    assert [l.split(":")[0] for l in lines] == ["Norm(y_orig-y_roll)", "Norm(y_orig-y_roll_s)"]
    assert all(float(l.split(":")[1]) <= 1e-9 for l in lines)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(root), "--train-size", "90", "--test-size", "30"]) == 0
    return root


def test_pipeline_reaches_full_consistency(dataset, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--out", str(run), "--epochs", "2",
                 "--features", "4"]) == EXIT_OK
    log = (run / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,loss,acc,tau,lr" and len(log) == 3
    report = tmp_path / "cons.json"
    assert main(["eval-consistency", "--checkpoint", str(run / "checkpoint.lpst"),
                 "--data", str(dataset), "--out", str(report), "--min-agreement", "1.0"]) == EXIT_OK
    assert json.loads(report.read_text())["agreement"] == 1.0
    assert "1.000000" in capsys.readouterr().out


def test_train_with_zero_lr_keeps_checkpoint(dataset, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    main(["train", "--data", str(dataset), "--out", str(first), "--epochs", "1", "--features", "4"])
    assert main(["train", "--data", str(dataset), "--out", str(second), "--epochs", "1",
                 "--init", str(first / "checkpoint.lpst"), "--lr", "0"]) == EXIT_OK
    a = load_tensors(str(first / "checkpoint.lpst"))
    b = load_tensors(str(second / "checkpoint.lpst"))
    assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def test_config_file_and_flag_override(dataset, tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("# toy run\nepochs = 3\nfeatures = 4\nbatch-size = 32\n")
    run = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--out", str(run), "--config", str(cfg),
                 "--epochs", "1"]) == EXIT_OK
    assert len((run / "train_log.csv").read_text().splitlines()) == 2
    assert load_tensors(str(run / "checkpoint.lpst"))["conv1.weight"].shape[0] == 4


@pytest.mark.parametrize("text,msg", [("epochs 3\n", "key = value"), ("colour = red\n", "unknown"),
                                      ("epochs = many\n", "epochs"), ("pool = blur\n", "one of")])
def test_bad_config(tmp_path, capsys, text, msg):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    assert main(["train", "--data", "x", "--out", "y", "--config", str(cfg)]) == EXIT_USAGE
    assert msg in capsys.readouterr().err


def test_missing_paths_are_usage_errors(tmp_path, capsys):
    assert main(["eval-consistency", "--checkpoint", str(tmp_path / "none.lpst"),
                 "--data", str(tmp_path)]) == EXIT_USAGE
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["verify", "--config", str(tmp_path / "missing.cfg")]) == EXIT_USAGE
    assert "not found" in capsys.readouterr().err


def test_corrupt_checkpoint(dataset, tmp_path, capsys):
    bad = tmp_path / "bad.lpst"
    bad.write_bytes(b"NOPE")
    assert main(["eval-consistency", "--checkpoint", str(bad), "--data", str(dataset)]) == EXIT_USAGE
    assert "magic" in capsys.readouterr().err


def test_read_config_strips_comments(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("a-b = 1  # note\n\n c = x=y \n")
    assert read_config(str(cfg)) == {"a_b": "1", "c": "x=y"}


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "polysample.cli", "verify", "--extent", "7"],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
