import json

import numpy as np
import pytest

from hyperinit import data as dt
from hyperinit.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestUsageErrors:
    def test_no_command(self, capsys):
        code, *_ = run(capsys, )
        assert code == 2

    def test_unknown_flag_rejected(self, capsys):
        code, *_ = run(capsys, "init-table", "--geometry", "1,1,1,1", "--frobnicate")
        assert code == 2

    def test_zero_depth_rejected(self, capsys):
        code, *_ = run(capsys, "variance-check", "--depth", "0")
        assert code == 2

    def test_bad_geometry_rejected(self, capsys):
        code, *_ = run(capsys, "init-table", "--geometry", "1,2,3")
        assert code == 2

    def test_unknown_scheme_rejected(self, capsys):
        code, *_ = run(capsys, "variance-check", "--scheme", "magic")
        assert code == 2


class TestInitTable:
    def test_hyperfan_in_row_value(self, capsys):
        code, out, _ = run(capsys, "init-table", "--geometry", "500,500,50,50",
                           "--json")
        assert code == 0
        rows = {r["scheme"]: r for r in json.loads(out)}
        assert rows["hyperfan-in"]["weight_var"] == pytest.approx(4.0e-5)
        assert rows["hyperfan-in"]["bias_var"] is None
        assert rows["hyperfan-in"]["uniform_bound"] == pytest.approx(
            np.sqrt(3 * 4.0e-5))

    def test_gen_bias_splits_weight_and_adds_bias_row(self, capsys):
        code, out, _ = run(capsys, "init-table", "--geometry", "500,500,50,50",
                           "--gen-bias", "--json")
        rows = {r["scheme"]: r for r in json.loads(out)}
        assert rows["hyperfan-in"]["weight_var"] == pytest.approx(2.0e-5)
        assert rows["hyperfan-in"]["bias_var"] == pytest.approx(0.01)

    def test_square_geometry_clamps_hyperfan_out_bias(self, capsys):
        code, out, _ = run(capsys, "init-table", "--geometry", "500,500,50,50",
                           "--gen-bias", "--json")
        rows = {r["scheme"]: r for r in json.loads(out)}
        assert rows["hyperfan-out"]["bias_var"] == 0.0

    def test_text_table_lists_all_schemes(self, capsys):
        code, out, _ = run(capsys, "init-table", "--geometry", "10,10,5,5")
        assert code == 0
        for name in ("fan-in", "fan-out", "harmonic", "hyperfan-in",
                     "hyperfan-out", "small-random", "scaled-output",
                     "const-embedding"):
            assert name in out


class TestVarianceCheck:
    FAST = ["--depth", "3", "--width", "100", "--hyper-width", "16",
            "--batch", "200", "--seed", "42"]

    def test_hyperfan_in_passes(self, capsys, tmp_path):
        out_file = tmp_path / "report.json"
        code, out, _ = run(capsys, "variance-check", "--scheme", "hyperfan-in",
                           *self.FAST, "--out", str(out_file))
        assert code == 0
        assert "PASS" in out
        data = json.loads(out_file.read_text())
        assert "0" in data

    def test_fan_in_fails_with_width_sized_ratios(self, capsys):
        code, out, _ = run(capsys, "variance-check", "--scheme", "fan-in",
                           *self.FAST)
        assert code == 1
        assert "FAIL" in out
        ratios = [float(line.split()[4]) for line in out.splitlines()
                  if "act-variance ratio" in line]
        assert ratios and all(r == pytest.approx(100, rel=0.5) for r in ratios)

    def test_hyperfan_out_with_bias_passes(self, capsys):
        code, out, _ = run(capsys, "variance-check", "--scheme", "hyperfan-out",
                           "--gen-bias", *self.FAST)
        assert code == 0


class TestGradCheck:
    def test_passes_threshold(self, capsys):
        code, out, _ = run(capsys, "grad-check", "--seed", "7")
        assert code == 0
        assert "PASS" in out


class TestTrainCommand:
    def test_missing_data_dir_is_io_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "train", "--preset", "mnist-mlp",
                           "--data-dir", str(tmp_path))
        assert code == 3
        assert "missing" in err

    def test_regression_run_writes_outputs(self, capsys, tmp_path):
        out_dir = tmp_path / "run"
        code, out, _ = run(capsys, "train", "--preset", "regression-seq",
                           "--iterations", "20", "--out", str(out_dir))
        assert code == 0
        assert "final metric" in out
        for name in ("curves.csv", "probe.json", "checkpoint.npz",
                     "manifest.json"):
            assert (out_dir / name).exists()
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["seed"] == 0

    def test_seed_list_runs_each(self, capsys, tmp_path):
        out_dir = tmp_path / "multi"
        code, out, _ = run(capsys, "train", "--preset", "regression-seq",
                           "--iterations", "10", "--seeds", "1,2",
                           "--out", str(out_dir))
        assert code == 0
        assert (out_dir / "seed1" / "curves.csv").exists()
        assert (out_dir / "seed2" / "curves.csv").exists()

    def test_mnist_idx_round_trip_via_cli(self, capsys, tmp_path):
        train_ds, test_ds = dt.make_synthetic_images(64, 32, (28, 28), 10, seed=3)
        dt.write_idx(tmp_path / "train-images-idx3-ubyte",
                     tmp_path / "train-labels-idx1-ubyte",
                     (train_ds.inputs * 255).astype(np.uint8),
                     train_ds.labels.astype(np.uint8))
        dt.write_idx(tmp_path / "t10k-images-idx3-ubyte",
                     tmp_path / "t10k-labels-idx1-ubyte",
                     (test_ds.inputs * 255).astype(np.uint8),
                     test_ds.labels.astype(np.uint8))
        code, out, _ = run(capsys, "train", "--preset", "mnist-mlp",
                           "--epochs", "1", "--subset", "64",
                           "--data-dir", str(tmp_path))
        assert code == 0


class TestReport:
    def test_json_to_csv(self, capsys, tmp_path):
        out_file = tmp_path / "probe.json"
        code, *_ = run(capsys, "variance-check", "--scheme", "hyperfan-in",
                       "--depth", "2", "--width", "50", "--hyper-width", "8",
                       "--batch", "100", "--out", str(out_file))
        assert code == 0
        csv_file = tmp_path / "probe.csv"
        code, out, _ = run(capsys, "report", "--in", str(out_file),
                           "--csv", str(csv_file), "--summary")
        assert code == 0
        lines = csv_file.read_text().splitlines()
        assert lines[0] == "step,layer,kind,mean,var,theory,ratio"
        assert len(lines) > 1
        assert "step 0" in out

    def test_missing_input_is_io_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "report", "--in", str(tmp_path / "nope.json"))
        assert code == 3
