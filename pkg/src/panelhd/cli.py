"""``panel-hd``: command-line front end.

Subcommands: simulate, estimate, debias, hac, ife, infer, mc.  Every run
reads an optional JSON config (flags override config values), writes a
``config.echo.json`` with the effective configuration next to its outputs,
and re-running from the echo reproduces the outputs bitwise.

Exit codes: 0 success, 1 configuration or I/O problem, 2 numerical failure.
Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace as dc_replace
from pathlib import Path

import numpy as np

from . import factors as fx
from . import inference as inf
from . import longrun as lr
from . import montecarlo as mc
from .artifacts import config_hash, read_artifact, write_artifact
from .errors import NumericalError, PanelHdError, ValidationError
from .lasso import (
    GramData,
    LassoFit,
    SolverOpts,
    adaptive_weights,
    bic_select,
    penalty_grid,
)
from .nodewise import BicPerRow, PrecisionEstimate, debias as run_debias, nodewise_fit
from .panel import ColumnSchema, PanelDataset, demean_time, load_csv, standardize, write_csv


def _effective_config(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    config = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        config.update(loaded)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def _echo_config(out_dir: Path, command: str, config: dict) -> str:
    payload = {"command": command, **config}
    digest = config_hash(payload)
    with open(out_dir / "config.echo.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return digest


def _out_dir(config) -> Path:
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_panel(config) -> PanelDataset:
    schema = ColumnSchema(
        unit=config["unit_col"], time=config["time_col"], y=config["y_col"]
    )
    ds = load_csv(config["data"], schema)
    if config["demean"]:
        ds = demean_time(ds)
    if config["standardize"]:
        ds, _ = standardize(ds)
    return ds


def _kernel(config, n_periods: int) -> lr.KernelSpec:
    bw = config["bandwidth"]
    if bw in (None, "auto"):
        bandwidth = lr.default_bandwidth(n_periods)
    else:
        bandwidth = float(bw)
    return lr.KernelSpec(kind=config["kernel"], bandwidth=bandwidth)


def _apply_threshold(cov, mode: str, ds, beta, kernel):
    if mode == "none":
        return cov
    if mode == "cv":
        u = lr.cv_threshold(ds, beta, kernel, lr.default_threshold_grid(cov))
        return lr.threshold(cov, u)
    if mode.startswith("fixed:"):
        return lr.threshold(cov, float(mode.split(":", 1)[1]))
    raise ValidationError(f"unknown threshold mode {mode!r}")


# --- subcommand implementations ---------------------------------------------

_SIM_DEFAULTS = {
    "model": "dgp1",
    "n": 50,
    "t": 50,
    "d": 50,
    "rho_e": 0.2,
    "delta_eps": 0.2,
    "burn_in": 100,
    "seed": 0,
    "scale_t_unit_variance": False,
    "t_construction": "componentwise",
    "out": "out",
}


def cmd_simulate(args) -> int:
    config = _effective_config(args, _SIM_DEFAULTS)
    out = _out_dir(config)
    spec = mc.DgpSpec(
        model=config["model"],
        n_units=int(config["n"]),
        n_periods=int(config["t"]),
        n_regressors=int(config["d"]),
        rho_e=float(config["rho_e"]),
        delta_eps=float(config["delta_eps"]),
        burn_in=int(config["burn_in"]),
        seed=int(config["seed"]),
        scale_to_unit_variance=bool(config["scale_t_unit_variance"]),
        t_construction=config["t_construction"],
    )
    ds, truth = mc.generate(spec)
    write_csv(ds, out / "panel.csv")
    digest = _echo_config(out, "simulate", config)
    truth_payload = {
        "beta0": truth.beta0.tolist(),
        "alpha": None if truth.alpha is None else truth.alpha.tolist(),
        "loadings": None if truth.loadings is None else truth.loadings.tolist(),
        "factors": None if truth.factors is None else truth.factors.tolist(),
        "rank": truth.rank,
    }
    write_artifact(out / "truth.json", "truth", truth_payload, ds.data_hash(), digest)
    return 0


_EST_DEFAULTS = {
    "data": None,
    "unit_col": "unit",
    "time_col": "time",
    "y_col": "y",
    "demean": False,
    "standardize": False,
    "grid_points": 25,
    "nodewise_grid_points": 25,
    "kernel": "bartlett",
    "bandwidth": "auto",
    "threshold": "cv",
    "variance": "robust",
    "level": 0.95,
    "out": "out",
}


def cmd_estimate(args) -> int:
    config = _effective_config(args, _EST_DEFAULTS)
    if not config["data"]:
        raise ValidationError("--data is required")
    out = _out_dir(config)
    digest = _echo_config(out, "estimate", config)
    ds = _load_panel(config)
    data_hash = ds.data_hash()

    gd = GramData.from_dataset(ds)
    grid = penalty_grid(gd, int(config["grid_points"]))
    selection = bic_select(gd, grid)
    fit = selection.chosen_fit
    write_artifact(out / "fit.json", "lasso_fit", fit.to_dict(), data_hash, digest)

    precision = nodewise_fit(gd, BicPerRow(int(config["nodewise_grid_points"])))
    write_artifact(
        out / "precision.json", "precision", precision.to_dict(), data_hash, digest
    )

    bc = run_debias(ds, fit, precision)
    write_artifact(
        out / "debias.json",
        "debiased_fit",
        {"beta_bc": bc.beta_bc.tolist(), "n_obs": bc.n_obs},
        data_hash,
        digest,
    )

    kernel = _kernel(config, ds.n_periods)
    if config["variance"] == "pooled":
        cov = lr.pooled_hac(ds, fit.beta, kernel)
        source = "pooled_hac"
    elif config["variance"] == "robust":
        scores = lr.aggregated_scores(ds, fit.beta)
        cov = lr.hac(scores, kernel, score_builder="step-1 residual scores")
        cov = _apply_threshold(cov, config["threshold"], ds, fit.beta, kernel)
        source = "robust_hac"
    else:
        raise ValidationError(f"unknown variance mode {config['variance']!r}")
    write_artifact(out / "lrcov.json", "longrun_cov", cov.to_dict(), data_hash, digest)

    report = inf.ci_debiased(bc, cov, level=float(config["level"]), variance_source=source)
    (out / "ci.csv").write_text(report.to_csv(), encoding="utf-8")
    with open(out / "ci.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    return 0


_DEBIAS_DEFAULTS = {
    "data": None,
    "unit_col": "unit",
    "time_col": "time",
    "y_col": "y",
    "demean": False,
    "standardize": False,
    "fit": None,
    "grid_points": 25,
    "nodewise_grid_points": 25,
    "out": "out",
}


def cmd_debias(args) -> int:
    config = _effective_config(args, _DEBIAS_DEFAULTS)
    if not config["data"]:
        raise ValidationError("--data is required")
    out = _out_dir(config)
    digest = _echo_config(out, "debias", config)
    ds = _load_panel(config)
    data_hash = ds.data_hash()
    gd = GramData.from_dataset(ds)

    if config["fit"]:
        payload = read_artifact(config["fit"], "lasso_fit", expect_data_hash=data_hash)
        fit = LassoFit.from_dict(payload)
    else:
        fit = bic_select(gd, penalty_grid(gd, int(config["grid_points"]))).chosen_fit
        write_artifact(out / "fit.json", "lasso_fit", fit.to_dict(), data_hash, digest)

    precision = nodewise_fit(gd, BicPerRow(int(config["nodewise_grid_points"])))
    write_artifact(
        out / "precision.json", "precision", precision.to_dict(), data_hash, digest
    )
    bc = run_debias(ds, fit, precision)
    write_artifact(
        out / "debias.json",
        "debiased_fit",
        {"beta_bc": bc.beta_bc.tolist(), "n_obs": bc.n_obs},
        data_hash,
        digest,
    )
    return 0


_HAC_DEFAULTS = {
    "data": None,
    "unit_col": "unit",
    "time_col": "time",
    "y_col": "y",
    "demean": False,
    "standardize": False,
    "beta_from": None,
    "grid_points": 25,
    "kernel": "bartlett",
    "bandwidth": "auto",
    "threshold": "cv",
    "pooled": False,
    "out": "out",
}


def cmd_hac(args) -> int:
    config = _effective_config(args, _HAC_DEFAULTS)
    if not config["data"]:
        raise ValidationError("--data is required")
    out = _out_dir(config)
    digest = _echo_config(out, "hac", config)
    ds = _load_panel(config)
    data_hash = ds.data_hash()

    if config["beta_from"]:
        payload = read_artifact(
            config["beta_from"], "lasso_fit", expect_data_hash=data_hash
        )
        beta = LassoFit.from_dict(payload).beta
    else:
        gd = GramData.from_dataset(ds)
        beta = bic_select(gd, penalty_grid(gd, int(config["grid_points"]))).chosen_fit.beta

    kernel = _kernel(config, ds.n_periods)
    if config["pooled"]:
        cov = lr.pooled_hac(ds, beta, kernel)
    else:
        scores = lr.aggregated_scores(ds, beta)
        cov = lr.hac(scores, kernel, score_builder="fitted residual scores")
        cov = _apply_threshold(cov, config["threshold"], ds, beta, kernel)
    write_artifact(out / "lrcov.json", "longrun_cov", cov.to_dict(), data_hash, digest)
    return 0


_IFE_DEFAULTS = {
    "data": None,
    "unit_col": "unit",
    "time_col": "time",
    "y_col": "y",
    "demean": False,
    "standardize": False,
    "w1": "auto",
    "w2": "auto",
    "w3": "auto",
    "rank": "auto",
    "max_outer": 100,
    "kernel": "bartlett",
    "bandwidth": "auto",
    "omega_threshold": "cv",
    "level": 0.95,
    "out": "out",
}


def cmd_ife(args) -> int:
    config = _effective_config(args, _IFE_DEFAULTS)
    if not config["data"]:
        raise ValidationError("--data is required")
    out = _out_dir(config)
    digest = _echo_config(out, "ife", config)
    ds = _load_panel(config)
    data_hash = ds.data_hash()
    n, t, d = ds.x.shape
    nt = n * t
    opts = SolverOpts(max_outer=int(config["max_outer"]))
    rate1 = math.sqrt(math.log(max(d, 2)) / nt)

    if config["w1"] == "auto" or config["w2"] == "auto":
        grid1 = (
            rate1 * np.geomspace(0.1, 1.0, 4)
            if config["w1"] == "auto"
            else np.array([float(config["w1"])])
        )
        grid2 = (
            fx.default_w2_scale(n, t) * np.geomspace(0.3, 10.0, 6)
            if config["w2"] == "auto"
            else np.array([float(config["w2"])])
        )
        scan = dc_replace(opts, outer_tol=max(opts.outer_tol, 1e-5))
        w1, w2, _ = fx.tune_l1_nuclear(ds, grid1, grid2, scan)
        low = fx.fit_l1_nuclear(ds, w1, w2, opts)
    else:
        low = fx.fit_l1_nuclear(ds, float(config["w1"]), float(config["w2"]), opts)

    rank_mode = str(config["rank"])
    if rank_mode != "auto":
        if not rank_mode.startswith("fixed:"):
            raise ValidationError("--rank must be 'auto' or 'fixed:<r>'")
        r_fixed = int(rank_mode.split(":", 1)[1])
        xi = low.xi
        u, s, v = np.linalg.svd(xi, full_matrices=False)
        lam = math.sqrt(n) * v.T[:, :r_fixed]
        low = dc_replace(low, r_hat=r_fixed, lambda_init=lam)

    if config["w3"] == "auto":
        grid3 = rate1 * np.geomspace(0.5, 12.0, 8)
        w3, fit = fx.tune_factor_lasso(ds, low, grid3, opts)
    else:
        w3 = float(config["w3"])
        fit = fx.iterate_factor_lasso(ds, low, w3, opts)

    kernel = _kernel(config, t)
    if fit.active_set:
        u_mode = config["omega_threshold"]
        u_arg = "cv" if u_mode == "cv" else float(str(u_mode).split(":", 1)[1])
        fit = fx.bias_correct(ds, fit, kernel, u_arg, opts)
        sigma_j, theta_j = fx.plugin_variance(ds, fit, kernel)
        fit = dc_replace(fit, sigma_j=sigma_j, theta_j=theta_j)
        report = inf.ci_factor(fit, level=float(config["level"]))
        (out / "ci.csv").write_text(report.to_csv(), encoding="utf-8")
        with open(out / "ci.json", "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
    payload = fit.to_dict()
    payload["stage1"] = {
        "w1": low.w1,
        "w2": low.w2,
        "r_hat": low.r_hat,
        "xi_rank": low.xi_rank,
        "beta_init": {
            int(j): float(v) for j, v in enumerate(low.beta_init) if v != 0.0
        },
    }
    write_artifact(out / "factor_fit.json", "factor_fit", payload, data_hash, digest)
    shares = fx.explained_variance(ds, fit)
    with open(out / "explained.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "observable": [[n_, s_] for n_, s_ in shares.observable],
                "factor": [[n_, s_] for n_, s_ in shares.factor],
                "total_observable": shares.total_observable,
                "total_factor": shares.total_factor,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    return 0


_INFER_DEFAULTS = {
    "debias": None,
    "precision": None,
    "lrcov": None,
    "level": 0.95,
    "out": "out",
}


def cmd_infer(args) -> int:
    config = _effective_config(args, _INFER_DEFAULTS)
    for key in ("debias", "precision", "lrcov"):
        if not config[key]:
            raise ValidationError(f"--{key} is required")
    out = _out_dir(config)
    _echo_config(out, "infer", config)

    with open(config["debias"], encoding="utf-8") as fh:
        debias_raw = json.load(fh)
    data_hash = debias_raw.get("data_hash")
    debias_payload = read_artifact(config["debias"], "debiased_fit")
    precision_payload = read_artifact(
        config["precision"], "precision", expect_data_hash=data_hash
    )
    lr_payload = read_artifact(config["lrcov"], "longrun_cov", expect_data_hash=data_hash)

    precision = PrecisionEstimate.from_dict(precision_payload)
    cov = lr.LongRunCov.from_dict(lr_payload)
    beta_bc = np.array(debias_payload["beta_bc"], dtype=np.float64)
    d = beta_bc.size
    dummy_fit = LassoFit(
        beta=np.zeros(d),
        penalty=0.0,
        weights=np.ones(d),
        active_set=(),
        iterations=0,
        converged=True,
        objective=0.0,
    )
    from .nodewise import DebiasedFit

    bc = DebiasedFit(
        beta_bc=beta_bc,
        base_fit=dummy_fit,
        precision=precision,
        n_obs=int(debias_payload["n_obs"]),
    )
    source = "pooled_hac" if "pooled" in cov.score_builder else "robust_hac"
    report = inf.ci_debiased(bc, cov, level=float(config["level"]), variance_source=source)
    (out / "ci.csv").write_text(report.to_csv(), encoding="utf-8")
    with open(out / "ci.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    return 0


_MC_DEFAULTS = {
    "table": None,
    "cells": None,
    "model": None,
    "reps": 50,
    "seed": 0,
    "threads": 1,
    "out": "out",
}


def cmd_mc(args) -> int:
    config = _effective_config(args, _MC_DEFAULTS)
    out = _out_dir(config)
    _echo_config(out, "mc", config)
    seed = int(config["seed"])
    if config["table"]:
        cells, model = mc.table_cells(str(config["table"]), seed=seed)
    elif config["cells"]:
        with open(config["cells"], encoding="utf-8") as fh:
            raw = json.load(fh)
        cells = [mc.DgpSpec(**{**cell, "seed": seed}) for cell in raw["cells"]]
        model = raw.get("model") or cells[0].model
    else:
        raise ValidationError("either --table or --cells is required")
    pipeline = mc.Dgp1Pipeline() if model == "dgp1" else mc.Dgp2Pipeline()
    report = mc.run_grid(
        cells,
        pipeline,
        n_reps=int(config["reps"]),
        parallelism=int(config["threads"]),
        base_seed=seed,
    )
    (out / "mc_report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "mc_table.txt").write_text(report.format_table(), encoding="utf-8")
    return 0


# --- argument parsing ---------------------------------------------------------

def _add_common_data_flags(sub):
    sub.add_argument("--data", help="input panel CSV")
    sub.add_argument("--unit-col", dest="unit_col")
    sub.add_argument("--time-col", dest="time_col")
    sub.add_argument("--y-col", dest="y_col")
    sub.add_argument("--demean", action="store_const", const=True, default=None,
                     help="remove each unit's time mean first")
    sub.add_argument("--standardize", action="store_const", const=True, default=None,
                     help="scale columns to pooled mean 0 / variance 1 first")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panel-hd",
        description="High-dimensional panel estimation, inference and simulation",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="generate a synthetic panel")
    sim.add_argument("--model", choices=["dgp1", "dgp2"])
    sim.add_argument("--n", type=int)
    sim.add_argument("--t", type=int)
    sim.add_argument("--d", type=int)
    sim.add_argument("--rho-e", dest="rho_e", type=float)
    sim.add_argument("--delta-eps", dest="delta_eps", type=float)
    sim.add_argument("--burn-in", dest="burn_in", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--scale-t-unit-variance", dest="scale_t_unit_variance",
                     action="store_const", const=True, default=None)
    sim.add_argument("--t-construction", dest="t_construction",
                     choices=["componentwise", "spherical"])
    sim.set_defaults(func=cmd_simulate)

    est = subs.add_parser("estimate", help="LASSO, nodewise debiasing, HAC, CIs")
    _add_common_data_flags(est)
    est.add_argument("--grid-points", dest="grid_points", type=int)
    est.add_argument("--nodewise-grid-points", dest="nodewise_grid_points", type=int)
    est.add_argument("--kernel", choices=["bartlett", "parzen"])
    est.add_argument("--bandwidth")
    est.add_argument("--threshold", help="cv | fixed:<u> | none")
    est.add_argument("--variance", choices=["robust", "pooled"])
    est.add_argument("--level", type=float)
    est.set_defaults(func=cmd_estimate)

    deb = subs.add_parser("debias", help="nodewise precision and debiased fit")
    _add_common_data_flags(deb)
    deb.add_argument("--fit", help="saved fit.json; omitted means refit")
    deb.add_argument("--grid-points", dest="grid_points", type=int)
    deb.add_argument("--nodewise-grid-points", dest="nodewise_grid_points", type=int)
    deb.set_defaults(func=cmd_debias)

    hac_p = subs.add_parser("hac", help="long-run covariance of fitted scores")
    _add_common_data_flags(hac_p)
    hac_p.add_argument("--beta-from", dest="beta_from", help="saved fit.json")
    hac_p.add_argument("--grid-points", dest="grid_points", type=int)
    hac_p.add_argument("--kernel", choices=["bartlett", "parzen"])
    hac_p.add_argument("--bandwidth")
    hac_p.add_argument("--threshold", help="cv | fixed:<u> | none")
    hac_p.add_argument("--pooled", action="store_const", const=True, default=None)
    hac_p.set_defaults(func=cmd_hac)

    ife = subs.add_parser("ife", help="interactive-fixed-effects estimation")
    _add_common_data_flags(ife)
    ife.add_argument("--w1")
    ife.add_argument("--w2")
    ife.add_argument("--w3")
    ife.add_argument("--rank", help="auto | fixed:<r>")
    ife.add_argument("--max-outer", dest="max_outer", type=int)
    ife.add_argument("--kernel", choices=["bartlett", "parzen"])
    ife.add_argument("--bandwidth")
    ife.add_argument("--omega-threshold", dest="omega_threshold",
                     help="cv | fixed:<u>")
    ife.add_argument("--level", type=float)
    ife.set_defaults(func=cmd_ife)

    infer = subs.add_parser("infer", help="confidence intervals from saved fits")
    infer.add_argument("--debias", help="saved debias.json")
    infer.add_argument("--precision", help="saved precision.json")
    infer.add_argument("--lrcov", help="saved lrcov.json")
    infer.add_argument("--level", type=float)
    infer.set_defaults(func=cmd_infer)

    mc_p = subs.add_parser("mc", help="Monte Carlo table runs")
    mc_p.add_argument("--table", help="published table number 1-8")
    mc_p.add_argument("--cells", help="JSON file with a custom cell list")
    mc_p.add_argument("--reps", type=int)
    mc_p.add_argument("--seed", type=int)
    mc_p.add_argument("--threads", type=int)
    mc_p.set_defaults(func=cmd_mc)

    for sub in (sim, est, deb, hac_p, ife, infer, mc_p):
        sub.add_argument("--config", help="JSON config; flags override")
        sub.add_argument("--out")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        kind = "io" if isinstance(exc, OSError) else "config"
        print(json.dumps({"kind": kind, "message": str(exc)}), file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(
            json.dumps({"kind": "numerical", "message": str(exc)}), file=sys.stderr
        )
        return 2
    except PanelHdError as exc:
        print(json.dumps({"kind": "error", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
