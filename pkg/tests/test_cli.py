import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from panelhd.cli import main


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = run_cli(
        "simulate", "--model", "dgp1", "--n", 20, "--t", 25, "--d", 8,
        "--seed", 7, "--out", out,
    )
    assert code == 0
    return out


class TestSimulate:
    def test_artifacts_present(self, sim_dir):
        assert (sim_dir / "panel.csv").exists()
        assert (sim_dir / "truth.json").exists()
        assert (sim_dir / "config.echo.json").exists()

    def test_fixed_seed_is_byte_identical(self, sim_dir, tmp_path):
        out2 = tmp_path / "again"
        assert run_cli(
            "simulate", "--model", "dgp1", "--n", 20, "--t", 25, "--d", 8,
            "--seed", 7, "--out", out2,
        ) == 0
        assert (sim_dir / "panel.csv").read_bytes() == (out2 / "panel.csv").read_bytes()

    def test_rerun_from_echo_reproduces(self, sim_dir, tmp_path):
        echo = json.loads((sim_dir / "config.echo.json").read_text())
        out2 = tmp_path / "echo_rerun"
        echo.pop("command")
        echo["out"] = str(out2)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(echo))
        assert run_cli("simulate", "--config", cfg) == 0
        assert (sim_dir / "panel.csv").read_bytes() == (out2 / "panel.csv").read_bytes()


class TestEstimate:
    def test_missing_file_exit_code(self, tmp_path, capsys):
        code = run_cli("estimate", "--data", tmp_path / "nope.csv", "--out", tmp_path / "o")
        assert code == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["kind"] == "io"

    def test_artifacts_and_ci(self, sim_dir, tmp_path):
        out = tmp_path / "est"
        code = run_cli(
            "estimate", "--data", sim_dir / "panel.csv", "--demean", "--out", out,
        )
        assert code == 0
        for name in ("fit.json", "precision.json", "lrcov.json", "ci.csv",
                     "ci.json", "debias.json", "config.echo.json"):
            assert (out / name).exists(), name
        lines = (out / "ci.csv").read_text().strip().split("\n")
        assert len(lines) == 9  # header + one row per coefficient
        for line in lines[1:]:
            cells = line.split(",")
            assert float(cells[5]) > float(cells[4])  # ci_high > ci_low
            assert float(cells[2]) > 0                # positive std errors

    def test_pooled_narrower_under_csd(self, tmp_path):
        # demo panel with a strong common error component: the robust
        # variance sees the cross-unit covariance, the pooled one does not
        from panelhd.panel import PanelDataset, write_csv

        rng = np.random.default_rng(21)
        n, t, d = 30, 40, 8
        # scores are x * e products: both need a common component for the
        # cross-unit covariance to matter
        x = rng.standard_normal((t, d))[None, :, :] + rng.standard_normal((n, t, d))
        beta = np.zeros(d)
        beta[:5] = [0.3, 0.4, 0.5, 0.6, 0.7]
        common = rng.standard_normal(t)
        e = 1.5 * common[None, :] + 0.5 * rng.standard_normal((n, t))
        ds = PanelDataset(y=x @ beta + e, x=x)
        csv_path = tmp_path / "csd.csv"
        write_csv(ds, csv_path)

        args = ["estimate", "--data", csv_path]
        assert run_cli(*args, "--variance", "robust", "--out", tmp_path / "rob") == 0
        assert run_cli(*args, "--variance", "pooled", "--out", tmp_path / "poo") == 0

        def widths(path):
            rows = (path / "ci.csv").read_text().strip().split("\n")[1:]
            return np.array([float(r.split(",")[5]) - float(r.split(",")[4]) for r in rows])

        w_rob = widths(tmp_path / "rob")
        w_poo = widths(tmp_path / "poo")
        assert (w_poo[:5] < w_rob[:5]).sum() >= 4

    def test_fit_hash_mismatch_rejected(self, sim_dir, tmp_path):
        out = tmp_path / "est2"
        assert run_cli(
            "estimate", "--data", sim_dir / "panel.csv", "--demean", "--out", out
        ) == 0
        other = tmp_path / "othersim"
        assert run_cli(
            "simulate", "--model", "dgp1", "--n", 20, "--t", 25, "--d", 8,
            "--seed", 99, "--out", other,
        ) == 0
        code = run_cli(
            "debias", "--data", other / "panel.csv", "--demean",
            "--fit", out / "fit.json", "--out", tmp_path / "deb",
        )
        assert code == 1

    def test_debias_consumes_saved_fit(self, sim_dir, tmp_path):
        est = tmp_path / "est3"
        assert run_cli(
            "estimate", "--data", sim_dir / "panel.csv", "--demean", "--out", est
        ) == 0
        deb = tmp_path / "deb3"
        code = run_cli(
            "debias", "--data", sim_dir / "panel.csv", "--demean",
            "--fit", est / "fit.json", "--out", deb,
        )
        assert code == 0
        a = json.loads((est / "debias.json").read_text())["payload"]["beta_bc"]
        b = json.loads((deb / "debias.json").read_text())["payload"]["beta_bc"]
        assert a == b


class TestHacAndInfer:
    def test_hac_threshold_modes(self, sim_dir, tmp_path):
        for mode in ("cv", "none", "fixed:0.05"):
            out = tmp_path / f"hac_{mode.replace(':', '_')}"
            code = run_cli(
                "hac", "--data", sim_dir / "panel.csv", "--demean",
                "--threshold", mode, "--out", out,
            )
            assert code == 0
            payload = json.loads((out / "lrcov.json").read_text())["payload"]
            assert payload["thresholded"] == (mode != "none")

    def test_infer_matches_estimate(self, sim_dir, tmp_path):
        est = tmp_path / "est4"
        assert run_cli(
            "estimate", "--data", sim_dir / "panel.csv", "--demean", "--out", est
        ) == 0
        inf_dir = tmp_path / "inf4"
        code = run_cli(
            "infer", "--debias", est / "debias.json",
            "--precision", est / "precision.json",
            "--lrcov", est / "lrcov.json", "--out", inf_dir,
        )
        assert code == 0
        assert (est / "ci.csv").read_text() == (inf_dir / "ci.csv").read_text()


class TestIfe:
    def test_recovers_rank_two(self, tmp_path):
        sim = tmp_path / "sim2"
        assert run_cli(
            "simulate", "--model", "dgp2", "--n", 40, "--t", 40, "--d", 10,
            "--seed", 31, "--out", sim,
        ) == 0
        out = tmp_path / "ife"
        code = run_cli("ife", "--data", sim / "panel.csv", "--out", out)
        assert code == 0
        payload = json.loads((out / "factor_fit.json").read_text())["payload"]
        assert payload["stage1"]["r_hat"] == 2
        assert payload["r_hat"] == 2
        assert (out / "ci.csv").exists()
        assert (out / "explained.json").exists()

    def test_fixed_rank_override(self, tmp_path):
        sim = tmp_path / "sim3"
        assert run_cli(
            "simulate", "--model", "dgp2", "--n", 25, "--t", 25, "--d", 8,
            "--seed", 32, "--out", sim,
        ) == 0
        out = tmp_path / "ife_fixed"
        code = run_cli(
            "ife", "--data", sim / "panel.csv", "--rank", "fixed:1", "--out", out
        )
        assert code == 0
        payload = json.loads((out / "factor_fit.json").read_text())["payload"]
        assert payload["r_hat"] == 1


class TestMc:
    def test_custom_cells_report(self, tmp_path):
        cells = {
            "model": "dgp1",
            "cells": [
                {"model": "dgp1", "n_units": 20, "n_periods": 20, "n_regressors": 6},
                {"model": "dgp1", "n_units": 20, "n_periods": 20, "n_regressors": 6,
                 "rho_e": 0.5},
            ],
        }
        cfg = tmp_path / "cells.json"
        cfg.write_text(json.dumps(cells))
        out = tmp_path / "mc"
        code = run_cli(
            "mc", "--cells", cfg, "--reps", 3, "--seed", 5, "--threads", 1,
            "--out", out,
        )
        assert code == 0
        lines = (out / "mc_report.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 2 * 5  # header + 2 cells x 5 metrics
        assert (out / "mc_table.txt").read_text().count("rho_e =") == 2

    def test_threads_do_not_change_bytes(self, tmp_path):
        cells = {
            "model": "dgp1",
            "cells": [
                {"model": "dgp1", "n_units": 20, "n_periods": 20, "n_regressors": 6}
            ],
        }
        cfg = tmp_path / "cells.json"
        cfg.write_text(json.dumps(cells))
        outs = []
        for threads in (1, 2):
            out = tmp_path / f"mc_{threads}"
            assert run_cli(
                "mc", "--cells", cfg, "--reps", 4, "--seed", 5,
                "--threads", threads, "--out", out,
            ) == 0
            outs.append((out / "mc_report.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_requires_table_or_cells(self, tmp_path, capsys):
        code = run_cli("mc", "--out", tmp_path / "x")
        assert code == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["kind"] == "config"


def test_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "panelhd.cli", "--help"], capture_output=True
    )
    assert proc.returncode == 0
    assert b"simulate" in proc.stdout
