import csv

import pytest

from gvt.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["make-data", "--out", str(root / "data"), "--train", "24", "--test", "12",
                 "--classes", "3", "--size", "16"]) == 0
    cfg = root / "run.cfg"
    cfg.write_text("blocks = 2\nhidden = 16\nheads = 2\ntokens = 16\npool_to = 4\nnum_classes = 3\n"
                   "image_size = 16,16\nbatch_size = 8\nepochs = 1\nwall_clock = false\n")
    return root


def test_train_eval_spectrum(workspace, capsys):
    out = workspace / "run"
    assert main(["train", "--config", str(workspace / "run.cfg"), "--data", str(workspace / "data"),
                 "--epochs", "2", "--seed", "1", "--out", str(out)]) == 0
    assert "best eval_acc" in capsys.readouterr().out
    with open(out / "metrics.csv") as fh:
        assert len(list(csv.reader(fh))) == 3
    assert main(["eval", "--checkpoint", str(out / "best.ckpt"), "--data", str(workspace / "data")]) == 0
    assert "eval_acc" in capsys.readouterr().out
    assert main(["spectrum", "--checkpoint", str(out / "best.ckpt"), "--data", str(workspace / "data"),
                 "--batches", "2", "--samples", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split() == ["batch", "block", "head", "min_eig", "max_eig", "low_pass"]
    assert len(lines) == 1 + 2 * 2 * 2


def test_ablate(workspace, capsys):
    assert main(["ablate", "--config", str(workspace / "run.cfg"), "--data", str(workspace / "data"),
                 "--out", str(workspace / "abl")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in out[1:]] == ["gvt", "none", "shazeer", "no-residual"]


def test_flops(capsys):
    assert main(["flops", "--tokens", "64", "--hidden", "64"]) == 0
    assert capsys.readouterr().out.split() == ["gvt", "2359296", "vit", "3145728", "ratio", "0.750000"]
    assert main(["flops", "--tokens", "16", "--hidden", "32", "--heads", "4", "--measured"]) == 0
    assert "measured_macs" in capsys.readouterr().out


def test_unknown_config_key(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("hidden = 16\nlearning_rate = 1\n")
    assert main(["train", "--config", str(bad), "--data", str(workspace / "data")]) == 2
    assert "unknown key 'learning_rate'" in capsys.readouterr().err


def test_missing_data(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope")]) == 2
    assert "does not exist" in capsys.readouterr().err
