import csv
import json

import numpy as np
import pytest

from sisparrow.cli import main

CONFIG = """
[geometry]
Px = 2
Py = 1
Lx = 2
Ly = 2
Delta_x = [0.0, 7.0]
Delta_y = [0.0]

[scenario]
mu_x = [0.5]
mu_y = [-1.0]
corr = 0.0
snapshots = 16
snr_db = 20
trials = 1
seed = 11

[solver]
algorithm = "admm"
lambda = "auto"
"""

SWEEP_CONFIG = CONFIG.replace("snr_db = 20", "snr_db = [10, 20]") + """
[experiment]
methods = ["sisparrow_admm", "esprit_cov"]
dml_grid = 512
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "plan.toml"
    path.write_text(CONFIG)
    return path


@pytest.fixture
def sweep_file(tmp_path):
    path = tmp_path / "sweep.toml"
    path.write_text(SWEEP_CONFIG)
    return path


class TestPipelineCommands:
    def test_simulate_solve_recover_chain(self, config_file, tmp_path, capsys):
        meas = tmp_path / "meas.json"
        report = tmp_path / "report.json"
        est = tmp_path / "est.csv"

        assert main(["simulate", "--config", str(config_file), "--out", str(meas)]) == 0
        payload = json.loads(meas.read_text())
        assert np.asarray(payload["Y"]["real"]).shape == (8, 16)
        assert payload["noise_var"] == pytest.approx(0.01)

        assert main(["solve", "--config", str(config_file), "--input", str(meas),
                     "--out", str(report)]) == 0
        rep = json.loads(report.read_text())
        assert rep["method"] == "admm"
        assert rep["converged"]
        assert np.asarray(rep["Q"]["real"]).shape == (8, 8)

        assert main(["recover", "--config", str(config_file), "--input", str(report),
                     "--method", "esprit", "--ns", "1", "--out", str(est)]) == 0
        with open(est) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert rows[0]["method"] == "esprit"
        assert abs(float(rows[0]["mu_x"]) - 0.5) <= 0.05
        assert abs(float(rows[0]["mu_y"]) + 1.0) <= 0.05

    def test_recover_music_from_plain_matrix(self, config_file, tmp_path):
        from sisparrow import ArrayGeometry, steering_matrix
        geom = ArrayGeometry.uniform(2, 1, 2, 2, Delta_x=[0.0, 7.0], Delta_y=[0.0])
        A = steering_matrix(geom, [0.5], [-1.0])
        Q = A @ A.conj().T + 1e-8 * np.eye(geom.M)
        qfile = tmp_path / "q.json"
        qfile.write_text(json.dumps({"real": Q.real.tolist(), "imag": Q.imag.tolist()}))
        out = tmp_path / "music.csv"
        assert main(["recover", "--config", str(config_file), "--input", str(qfile),
                     "--method", "music", "--ns", "1", "--out", str(out)]) == 0
        with open(out) as fh:
            row = list(csv.DictReader(fh))[0]
        assert abs(float(row["mu_x"]) - 0.5) <= 1e-5


class TestCrbCommand:
    def test_sweep_rows(self, sweep_file, tmp_path):
        out = tmp_path / "crb.csv"
        assert main(["crb", "--config", str(sweep_file), "--out", str(out)]) == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert [float(r["snr_db"]) for r in rows] == [10.0, 20.0]
        for row in rows:
            assert float(row["crb_partly"]) >= float(row["crb_fully"]) > 0

    def test_single_point(self, config_file, tmp_path):
        out = tmp_path / "crb.csv"
        assert main(["crb", "--config", str(config_file), "--out", str(out)]) == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert rows[0]["snapshots"] == "16"


class TestBenchCommand:
    def test_bench_writes_outputs(self, sweep_file, tmp_path):
        out = tmp_path / "results"
        assert main(["bench", "--config", str(sweep_file), "--out", str(out)]) == 0
        assert (out / "results.csv").exists()
        assert (out / "manifest.json").exists()
        assert (out / "rmse_vs_snr.csv").exists()

    def test_trials_override(self, sweep_file, tmp_path):
        out = tmp_path / "results"
        assert main(["bench", "--config", str(sweep_file), "--out", str(out),
                     "--trials", "2"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["points"][0]["trial_seeds"]) == 2


class TestErrorPaths:
    def test_bad_config_reports_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[scenario]\nmu_x = [0.1]\nmu_y = [0.2]\nsnr_db = [0]\n"
                       "snapshots = 2\n[experiment]\nmethods = [\"fourier\"]\n"
                       "[geometry]\nPx = 1\nPy = 1\nLx = 2\nLy = 2\n")
        assert main(["bench", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["crb", "--config", str(tmp_path / "nope.toml")]) == 2
