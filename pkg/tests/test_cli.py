import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from qifsnn import checkpoint
from qifsnn.cli import component_seed, run

FAST_TRAIN = "[training]\nepochs = 3\nbatch_size = 32\n[network]\nhidden = 8\n[data]\nn_per_class = 40\n"


def write_cfg(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def invoke(tmp_path, command, cfg_text="", *extra):
    out = tmp_path / "out"
    argv = [command, "--out", str(out), *extra]
    if cfg_text:
        argv += ["--config", write_cfg(tmp_path, cfg_text)]
    return run(argv), out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestAnalyze:
    def test_default(self, tmp_path, capsys):
        code, out = invoke(tmp_path, "analyze")
        assert code == 0
        data = json.loads((out / "stability.json").read_text())
        assert [(f["u"], f["label"]) for f in data["fixed_points"]] == [(0.0, "Stable"), (4.5, "Unstable")]
        assert data["u_min"] == -1 / 64
        rows = read_csv(out / "cobweb.csv")
        assert rows[0] == ["trajectory", "u0", "step", "u", "u_next"]
        assert "Stable" in capsys.readouterr().out

    def test_negative_discriminant(self, tmp_path, capsys):
        code, _ = invoke(tmp_path, "analyze", "[neuron]\na = 1.0\nu_r = 1.0\nu_c = 2.0\n")
        assert code == 2
        assert "NegativeDiscriminant" in capsys.readouterr().err

    def test_single_point_grid(self, tmp_path):
        code, out = invoke(tmp_path, "analyze", "[analyze]\ngrid = 0.0\n")
        assert code == 0
        assert read_csv(out / "phase.csv") == [["u", "delta"], ["0.0", "0.0"]]

    def test_cobweb_export(self, tmp_path):
        code, out = invoke(tmp_path, "cobweb-export", "[analyze]\ninitial_conditions = 0.3, 4.6\nmax_steps = 5\n")
        assert code == 0
        rows = read_csv(out / "cobweb.csv")[1:]
        assert {r[0] for r in rows} == {"0", "1"}

    def test_unknown_key(self, tmp_path, capsys):
        code, _ = invoke(tmp_path, "analyze", "[analyze]\nstpes = 3\n")
        assert code == 2
        assert "stpes" in capsys.readouterr().err


class TestVerifyTheorem:
    def test_pass_with_seed_42(self, tmp_path):
        code, out = invoke(tmp_path, "verify-theorem", "", "--seed", "42")
        assert code == 0
        result = json.loads((out / "theorem.json").read_text())
        assert result["verdict"] == "PASS"
        assert (result["mu_u"], result["sigma2_u"], result["n"]) == (0.0625, 0.26171875, 10**6)

    def test_zero_tolerance_fails(self, tmp_path):
        code, out = invoke(tmp_path, "verify-theorem", "[verify]\nn = 20000\nse_multiple = 0\n")
        assert code == 0
        assert json.loads((out / "theorem.json").read_text())["verdict"] == "FAIL"

    def test_small_n_rejected(self, tmp_path):
        code, _ = invoke(tmp_path, "verify-theorem", "[verify]\nn = 100\n")
        assert code == 2

    def test_identical_reruns(self, tmp_path):
        cfg = "[verify]\nn = 20000\n[run]\nseed = 3\n"
        _, out = invoke(tmp_path, "verify-theorem", cfg)
        first = (out / "theorem.json").read_bytes()
        invoke(tmp_path, "verify-theorem", cfg)
        assert (out / "theorem.json").read_bytes() == first

    def test_component_seeds_differ(self):
        assert component_seed(0, "monte_carlo") != component_seed(0, "data")
        assert component_seed(0, "data") == component_seed(0, "data")


class TestTrainEnergy:
    def test_train_outputs(self, tmp_path, capsys):
        code, out = invoke(tmp_path, "train", FAST_TRAIN)
        assert code == 0
        log = read_csv(out / "log.csv")
        assert log[0] == ["epoch", "loss", "train_acc", "test_acc"] and len(log) == 4
        assert "best test accuracy" in capsys.readouterr().out
        net = checkpoint.unpack_network(checkpoint.load(out / "checkpoint.bin"))
        assert net.spec.to_text() == (out / "network.txt").read_text()

    def test_zero_learning_rate_flat_loss(self, tmp_path):
        cfg = FAST_TRAIN.replace("batch_size = 32", "batch_size = 1000\nlearning_rate = 0.0\nweight_decay = 0.0")
        code, out = invoke(tmp_path, "train", cfg)
        assert code == 0
        losses = [float(r[1]) for r in read_csv(out / "log.csv")[1:]]
        assert max(losses) - min(losses) < 1e-9

    def test_energy_after_train(self, tmp_path):
        invoke(tmp_path, "train", FAST_TRAIN)
        code, out = invoke(tmp_path, "energy", FAST_TRAIN)
        assert code == 0
        report = json.loads((out / "energy.json").read_text())
        assert report["total_j"] == pytest.approx(sum(l["energy_j"] for l in report["layers"]))
        assert read_csv(out / "energy.csv")[0][0] == "architecture"

    def test_all_zero_network(self, tmp_path):
        invoke(tmp_path, "train", FAST_TRAIN)
        path = tmp_path / "out" / "checkpoint.bin"
        tensors = checkpoint.load(path)
        for name in tensors:
            if name.endswith(("weight", "bias", "xi")):
                tensors[name] = np.zeros_like(tensors[name])
        checkpoint.save(path, tensors)
        code, out = invoke(tmp_path, "energy", FAST_TRAIN)
        assert code == 0
        report = json.loads((out / "energy.json").read_text())
        assert all(l["fr"] == 0.0 for l in report["layers"])
        assert report["total_j"] == pytest.approx(2 * 4.6e-12 * report["total_mac"], rel=1e-12)

    def test_spec_mismatch(self, tmp_path, capsys):
        invoke(tmp_path, "train", FAST_TRAIN)
        code, _ = invoke(tmp_path, "energy", FAST_TRAIN.replace("hidden = 8", "hidden = 9"))
        assert code == 3
        assert "mismatch" in capsys.readouterr().err

    def test_missing_checkpoint(self, tmp_path):
        code, _ = invoke(tmp_path, "energy", FAST_TRAIN, "--checkpoint", str(tmp_path / "nope.bin"))
        assert code == 3

    def test_truncated_idx(self, tmp_path, capsys):
        bad = tmp_path / "bad.idx"
        bad.write_bytes(bytes([0, 0, 8, 1, 0, 0, 0, 9, 1, 2]))
        cfg = "[data]\nsource = idx\n" + "".join(
            f"{k} = {bad}\n" for k in ("train_images", "train_labels", "test_images", "test_labels"))
        code, _ = invoke(tmp_path, "train", cfg)
        assert code == 3
        assert "TruncatedData" in capsys.readouterr().err

    def test_idx_without_paths(self, tmp_path):
        code, _ = invoke(tmp_path, "train", "[data]\nsource = idx\n")
        assert code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "qifsnn", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("analyze", "verify-theorem", "train", "energy", "cobweb-export"):
        assert cmd in proc.stdout
