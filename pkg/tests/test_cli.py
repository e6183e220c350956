import subprocess
import sys

import numpy as np
import pytest

from edgeguard.arraycore import read_raw
from edgeguard.cli import load_checkpoint, load_split, main, read_config_file
from edgeguard.reproduce import Scale, commands, run

TINY = Scale(n_train=8, n_val=24, n_test=4, epochs=1, eps_levels="4", steps=1)


def _tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file() and p.name != "resolved_config.txt"}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    assert run(root, seed=3, scale=TINY) == 0
    return root


class TestExitCodes:
    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_flag(self, capsys):
        assert main(["generate", "--out", "x", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_missing_subcommand(self):
        assert main([]) == 1

    def test_sweep_without_checkpoint(self, tmp_path, capsys):
        assert main(["sweep", "--thresholds", "t.txt", "--data", "d", "--out", str(tmp_path)]) == 1
        assert "--checkpoint" in capsys.readouterr().err

    def test_missing_input_directory(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "m")]) == 1

    def test_bad_value(self, tmp_path):
        assert main(["generate", "--n", "0", "--out", str(tmp_path)]) == 1

    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert "selftest" in capsys.readouterr().out

    def test_selftest_quick(self, capsys):
        assert main(["selftest", "--quick"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "tol=" in out and "FAIL" not in out


class TestGenerate:
    def test_twice_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            assert main(["generate", "--seed", "7", "--n", "10", "--out", str(tmp_path / d)]) == 0
        a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
        assert a.keys() == b.keys() and a == b

    def test_refuses_overwrite_without_force(self, tmp_path):
        argv = ["generate", "--n", "2", "--out", str(tmp_path)]
        assert main(argv) == 0
        assert main(argv) == 1
        assert main(argv + ["--force"]) == 0

    def test_split_round_trip(self, tmp_path):
        assert main(["generate", "--n", "3", "--split", "val", "--out", str(tmp_path)]) == 0
        images, depths, labels, seeds, s = load_split(tmp_path)
        assert images.shape == (3, 64, 64, 3) and depths.shape == labels.shape == (3, 64, 64)
        assert seeds.tolist() == [1_000_000, 1_000_001, 1_000_002] and s == 5
        assert labels.min() >= 1 and read_raw(tmp_path / "labels.egr").min() == labels.min() - 1


class TestConfig:
    def test_file_values_and_flag_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# tiny scenes\nheight = 16\nwidth = 16\nn = 2   # two samples\n")
        assert main(["generate", "--config", str(cfg), "--n", "3", "--out", str(tmp_path / "o")]) == 0
        images, _, _, _, _ = load_split(tmp_path / "o")
        assert images.shape == (3, 16, 16, 3)
        resolved = read_config_file(tmp_path / "o" / "resolved_config.txt")
        assert resolved["height"] == "16" and resolved["n"] == "3"

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("learning_rate = 3\n")
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1

    def test_malformed_line(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("height 16\n")
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("EDGEGUARD_SEED", "11")
        assert main(["generate", "--n", "1", "--out", str(tmp_path / "e")]) == 0
        monkeypatch.delenv("EDGEGUARD_SEED")
        assert main(["generate", "--n", "1", "--seed", "11", "--out", str(tmp_path / "f")]) == 0
        assert main(["generate", "--n", "1", "--out", str(tmp_path / "g")]) == 0
        e, f, g = (_tree(tmp_path / d) for d in "efg")
        assert e == f and e != g

    def test_bad_env_seed(self, tmp_path, monkeypatch):
        monkeypatch.setenv("EDGEGUARD_SEED", "abc")
        assert main(["generate", "--n", "1", "--out", str(tmp_path)]) == 1


class TestPipeline:
    def test_outputs(self, tiny_run):
        for rel in ("model/layers.txt", "model/train_log.csv", "cal/thresholds.txt", "sweep/sweep.csv", "sweep/tableIV.csv", "sweep/fgsm/roc_mx_4.csv"):
            assert (tiny_run / rel).is_file(), rel
        params = load_checkpoint(tiny_run / "model")
        assert params.conv1_w.shape == (3, 3, 3, 16)
        rows = (tiny_run / "sweep" / "sweep.csv").read_text().splitlines()
        assert len(rows) == 1 + 5

    def test_attack_and_detect(self, tiny_run, tmp_path):
        base = ["--checkpoint", str(tiny_run / "model"), "--data", str(tiny_run / "test")]
        assert main(["attack", *base, "--kind", "fgsm", "--eps", "8", "--out", str(tmp_path / "a")]) == 0
        log = (tmp_path / "a" / "attack_log.csv").read_text().splitlines()
        assert log[0] == "sample_id,kind,eps_levels,rms_levels,loss_before,loss_after" and len(log) == 1 + TINY.n_test
        for line in log[1:]:
            assert float(line.split(",")[3]) <= 8.0 + 1e-6
        r = read_raw(tmp_path / "a" / "perturbations.egr")
        assert np.abs(r).max() <= 8 / 255 + 1e-6
        assert main(["detect", *base, "--thresholds", str(tiny_run / "cal" / "thresholds.txt"), "--out", str(tmp_path / "d")]) == 0
        det = (tmp_path / "d" / "detections.csv").read_text().splitlines()
        assert det[0].startswith("sample_id,ssim_mx,ssim_xd,ssim_md") and len(det) == 1 + TINY.n_test

    def test_six_commands(self, tmp_path):
        cmds = commands(tmp_path)
        assert [c[0] for c in cmds] == ["generate", "generate", "generate", "train", "calibrate", "sweep"]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "edgeguard", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
