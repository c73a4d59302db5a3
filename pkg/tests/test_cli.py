import csv
import math

import numpy as np
import pytest

from vbsmooth.cli import main, read_numeric_csv

SMALL = """\
[scenario]
schedule = time-invariant
K = 120
mc_runs = 2
seed = 11

[algorithms]
names = {names}

[algorithm:vbs-rq]
max_iterations = 6
convergence_tol = none
"""


def write_config(tmp_path, names="rts, vbs-rq", extra=""):
    p = tmp_path / "exp.ini"
    p.write_text(SMALL.format(names=names) + extra)
    return p


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def dataset(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "ds")]) == 0
    return tmp_path / "ds"


class TestSimulate:
    def test_files_and_row_count(self, dataset):
        header, y = read_numeric_csv(dataset / "measurements.csv")
        assert header == ["k", "y_1", "y_2"] and y.shape == (121, 3)
        assert (dataset / "truth.csv").exists() and (dataset / "manifest.ini").exists()

    def test_default_time_varying_length(self, tmp_path):
        assert main(["simulate", "--scenario", "time-varying", "--out", str(tmp_path)]) == 0
        _, y = read_numeric_csv(tmp_path / "measurements.csv")
        assert y.shape[0] == 4001

    def test_repeat_is_identical(self, dataset, tmp_path):
        cfg = tmp_path / "exp.ini"
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
        for name in ("truth.csv", "measurements.csv", "manifest.ini"):
            assert (dataset / name).read_bytes() == (tmp_path / "again" / name).read_bytes()

    def test_manifest_round_trip(self, dataset, tmp_path):
        out = tmp_path / "from_manifest"
        assert main(["simulate", "--config", str(dataset / "manifest.ini"), "--out", str(out)]) == 0
        for name in ("truth.csv", "measurements.csv", "manifest.ini"):
            assert (dataset / name).read_bytes() == (out / name).read_bytes()

    def test_run_index_changes_data(self, dataset, tmp_path):
        out = tmp_path / "run1"
        assert main(["simulate", "--config", str(tmp_path / "exp.ini"), "--run", "1", "--out", str(out)]) == 0
        assert (dataset / "measurements.csv").read_bytes() != (out / "measurements.csv").read_bytes()

    def test_floats_round_trip(self, dataset):
        with open(dataset / "truth.csv") as fh:
            next(fh)
            cell = next(fh).strip().split(",")[1]
        assert repr(float(cell)) == cell


class TestSmooth:
    def test_vbs_rq_outputs(self, dataset, tmp_path):
        out = tmp_path / "sm"
        assert main(["smooth", str(dataset), "--algorithm", "vbs-rq", "--max-iterations", "4", "--tol", "0",
                     "--out", str(out)]) == 0
        states = read_rows(out / "states.csv")
        assert len(states) == 121 and "P_44" in states[0]
        q = read_rows(out / "q_hat.csv")
        assert len(q) == 120 and list(q[0])[1:3] == ["Q_11", "Q_12"]
        r = read_rows(out / "r_hat.csv")
        assert len(r) == 121 and r[0]["R_12"] == r[0]["R_21"]
        assert len(read_rows(out / "trace.csv")) == 4

    def test_rts_emits_no_covariance_files(self, dataset, tmp_path):
        out = tmp_path / "rts"
        assert main(["smooth", str(dataset), "--algorithm", "rts", "--out", str(out)]) == 0
        assert (out / "states.csv").exists()
        for name in ("q_hat.csv", "r_hat.csv", "trace.csv"):
            assert not (out / name).exists()

    def test_metrics_against_truth(self, dataset, tmp_path):
        out = tmp_path / "or"
        assert main(["smooth", str(dataset), "--algorithm", "oracle-rts", "--out", str(out)]) == 0
        m = {r["metric"]: r["value"] for r in read_rows(out / "metrics.csv")}
        assert 0 < float(m["rmse"]) < 10

    def test_idempotent(self, dataset, tmp_path):
        args = ["smooth", str(dataset), "--algorithm", "ems-rq", "--max-iterations", "3"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        for name in ("states.csv", "q_hat.csv", "trace.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_parse_error_names_line(self, dataset, tmp_path, capsys):
        lines = (dataset / "measurements.csv").read_text().splitlines()
        lines[5] = "4,abc,1.0"
        (dataset / "measurements.csv").write_text("\n".join(lines) + "\n")
        assert main(["smooth", str(dataset), "--out", str(tmp_path / "x")]) == 1
        assert "measurements.csv:6" in capsys.readouterr().err

    def test_missing_dataset_is_io_error(self, tmp_path):
        assert main(["smooth", str(tmp_path / "nope"), "--out", str(tmp_path / "x")]) == 3

    def test_bad_lambda_flag(self, dataset, tmp_path):
        assert main(["smooth", str(dataset), "--lambda-r", "1.5", "--out", str(tmp_path / "x")]) == 1

    def test_numerical_failure_exit_code(self, dataset, tmp_path, monkeypatch, capsys):
        import vbsmooth.cli as cli

        def broken(*a, **k):
            raise np.linalg.LinAlgError("not positive definite")
        monkeypatch.setattr(cli, "run_algorithm", broken)
        assert main(["smooth", str(dataset), "--out", str(tmp_path / "x")]) == 2
        assert "vbs-rq failed" in capsys.readouterr().err


class TestBenchmark:
    def test_outputs_and_recomputation(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "b"
        assert main(["benchmark", "--config", str(cfg), "--out", str(out)]) == 0
        runs = read_rows(out / "runs.csv")
        summary = {r["algorithm"]: r for r in read_rows(out / "summary.csv")}
        assert set(summary) == {"rts", "vbs-rq"}
        for name, row in summary.items():
            vals = [float(r["rmse"]) for r in runs if r["algorithm"] == name]
            assert float(row["rmse_mean"]) == pytest.approx(np.mean(vals), rel=1e-12)
            assert float(row["rmse_std"]) == pytest.approx(np.std(vals, ddof=1), rel=1e-12)
        assert summary["rts"]["e_r_mean"] == ""
        assert "wall_time" not in runs[0] and len(read_rows(out / "timings.csv")) == 4

    def test_deterministic_across_workers(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert main(["benchmark", "--config", str(cfg), "--workers", "2", "--out", str(tmp_path / "b")]) == 0
        for name in ("runs.csv", "summary.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_single_run_std_empty(self, tmp_path):
        cfg = write_config(tmp_path, names="rts")
        assert main(["benchmark", "--config", str(cfg), "--runs", "1", "--out", str(tmp_path / "b")]) == 0
        row = read_rows(tmp_path / "b" / "summary.csv")[0]
        assert row["rmse_std"] == "" and not math.isnan(float(row["rmse_mean"]))

    def test_time_invariant_roster(self, tmp_path):
        cfg = tmp_path / "ti.ini"
        cfg.write_text("[scenario]\nschedule = time-invariant\nK = 40\nmc_runs = 1\n"
                       + "".join(f"[algorithm:{n}]\nmax_iterations = 2\n"
                                 for n in ("vbs-r", "vbs-rq", "ems-rq", "vbs-rq-d")))
        assert main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
        names = [r["algorithm"] for r in read_rows(tmp_path / "b" / "summary.csv")]
        assert names == ["oracle-rts", "rts", "vbs-r", "vbs-rq", "ems-rq", "vbs-rq-d"]

    def test_custom_priors_are_used(self, tmp_path):
        base = write_config(tmp_path, names="vbs-rq")
        a = tmp_path / "a.ini"
        a.write_text(base.read_text() + "[priors]\nr_dof = 500\nq_dof = 500\n")
        assert main(["benchmark", "--config", str(base), "--out", str(tmp_path / "p1")]) == 0
        assert main(["benchmark", "--config", str(a), "--out", str(tmp_path / "p2")]) == 0
        assert main(["compare", str(tmp_path / "p1" / "summary.csv"), str(tmp_path / "p2" / "summary.csv")]) == 1


class TestValidation:
    @pytest.mark.parametrize("extra,message", [
        ("[algorithm:rts]\nlambda_r = 1.2\n", "lambda_r must lie in (0, 1]"),
        ("[algorithm:rts]\nlambda_q = 0\n", "lambda_q must lie in (0, 1]"),
        ("[priors]\nq_dof = 10\n", "q_dof must exceed 2*n_x + 2 = 10"),
        ("[priors]\nr_dof = 6\n", "r_dof must exceed 2*n_y + 2 = 6"),
    ])
    def test_rejected(self, tmp_path, capsys, extra, message):
        cfg = write_config(tmp_path, extra=extra)
        assert main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 1
        assert message in capsys.readouterr().err
        assert not (tmp_path / "b").exists()

    @pytest.mark.parametrize("key", ["sigma_e2", "sigma_v2"])
    def test_negative_variance(self, tmp_path, capsys, key):
        cfg = tmp_path / "neg.ini"
        cfg.write_text(f"[scenario]\n{key} = -1\n")
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 1
        assert f"{key} must be positive" in capsys.readouterr().err

    def test_unknown_algorithm(self, tmp_path, capsys):
        cfg = write_config(tmp_path, names="rts, kalman")
        assert main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 1
        assert "unknown algorithm kind" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[scenario]\nhorizon = 5\n")
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 1
        assert "unknown key" in capsys.readouterr().err

    def test_missing_config_is_io_error(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path)]) == 3


class TestCompare:
    def write(self, path, rmse):
        path.write_text("algorithm,n_ok,rmse_mean,rmse_std\n" f"rts,3,{rmse},\n")
        return path

    def test_within_tolerance(self, tmp_path):
        a = self.write(tmp_path / "a.csv", 1.0)
        b = self.write(tmp_path / "b.csv", 1.0 + 1e-6)
        assert main(["compare", str(a), str(b), "--rtol", "1e-5"]) == 0
        assert main(["compare", str(a), str(b), "--rtol", "1e-8"]) == 1

    def test_absolute_tolerance(self, tmp_path):
        a = self.write(tmp_path / "a.csv", 0.0)
        b = self.write(tmp_path / "b.csv", 1e-9)
        assert main(["compare", str(a), str(b), "--atol", "1e-8"]) == 0

    def test_missing_row(self, tmp_path, capsys):
        a = self.write(tmp_path / "a.csv", 1.0)
        b = tmp_path / "b.csv"
        b.write_text("algorithm,n_ok,rmse_mean,rmse_std\n")
        assert main(["compare", str(a), str(b)]) == 1
        assert "only one file" in capsys.readouterr().out

    def test_missing_file(self, tmp_path):
        assert main(["compare", str(tmp_path / "x.csv"), str(tmp_path / "y.csv")]) == 3
