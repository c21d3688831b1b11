"""Nodewise LASSO regressions, the approximate precision matrix, and the
debiased estimator.

Row j of the precision estimate comes from regressing column X_j on the
remaining columns with an L1 penalty.  With tau_j^2 the penalized residual
scale of that regression, the approximate inverse of X'X/NT is

    Omega[j, :] = C[j, :] / tau_j^2,   C[j, k] = -gamma_j[k] (k != j), 1 (k = j).

Omega is built row by row and is NOT symmetric in general.  All d row
regressions share one Gram matrix, so the whole construction needs a single
pass over the data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateColumn, DimensionMismatch
from .lasso import (
    GramData,
    LassoFit,
    SolverOpts,
    bic_penalty_term,
    fit_weighted_lasso,
)
from .panel import PanelDataset

TAU_SQ_FLOOR = 1e-12


@dataclass(frozen=True)
class BicPerRow:
    """Tune each row's penalty by the modified BIC over the row's own
    lambda_max-scaled log grid."""

    n_points: int = 25


@dataclass(frozen=True)
class FixedPenalties:
    """Use the given penalty for every row (scalar) or per row (vector)."""

    penalties: np.ndarray | float


@dataclass(frozen=True)
class PrecisionEstimate:
    """Row-wise approximate inverse of the pooled Gram matrix.

    ``gamma[j]`` is the length-(d-1) coefficient vector of row j's
    regression; ``omega`` is the assembled d x d matrix with diagonal
    1/tau_sq.
    """

    gamma: tuple[np.ndarray, ...]
    tau_sq: np.ndarray
    omega: np.ndarray
    penalties: np.ndarray

    @property
    def n_regressors(self) -> int:
        return self.omega.shape[0]

    def to_dict(self) -> dict:
        rows = []
        for j, g in enumerate(self.gamma):
            nz = np.flatnonzero(g)
            rows.append({int(k): float(g[k]) for k in nz})
        return {
            "n_regressors": int(self.n_regressors),
            "gamma_rows": rows,
            "tau_sq": [float(v) for v in self.tau_sq],
            "penalties": [float(v) for v in self.penalties],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PrecisionEstimate":
        d = int(data["n_regressors"])
        gamma = []
        for row in data["gamma_rows"]:
            g = np.zeros(d - 1)
            for k, v in row.items():
                g[int(k)] = float(v)
            gamma.append(g)
        tau_sq = np.array(data["tau_sq"], dtype=np.float64)
        penalties = np.array(data["penalties"], dtype=np.float64)
        omega = _assemble_omega(gamma, tau_sq)
        return cls(
            gamma=tuple(gamma), tau_sq=tau_sq, omega=omega, penalties=penalties
        )


@dataclass(frozen=True)
class DebiasedFit:
    """Bias-corrected coefficient vector with its ingredients."""

    beta_bc: np.ndarray
    base_fit: LassoFit
    precision: PrecisionEstimate
    n_obs: int = 0


def _assemble_omega(gamma, tau_sq) -> np.ndarray:
    d = tau_sq.size
    omega = np.zeros((d, d))
    for j in range(d):
        row = np.zeros(d)
        row[j] = 1.0
        others = np.concatenate([np.arange(j), np.arange(j + 1, d)])
        row[others] = -gamma[j]
        omega[j] = row / tau_sq[j]
    return omega


def _row_problem(gd: GramData, j: int) -> tuple[GramData, np.ndarray]:
    """Sufficient statistics of the regression of X_j on X_{-j}."""
    others = np.concatenate([np.arange(j), np.arange(j + 1, gd.gram.shape[0])])
    sub = GramData(
        gram=np.ascontiguousarray(gd.gram[np.ix_(others, others)]),
        xty=gd.gram[others, j].copy(),
        yty=float(gd.gram[j, j]),
        n_obs=gd.n_obs,
    )
    return sub, others


def nodewise_row(
    gd: GramData, j: int, penalty: float, opts: SolverOpts = SolverOpts()
) -> LassoFit:
    """Fit row j's regression at a fixed penalty.

    Identical to ``fit_weighted_lasso`` on the derived regression of X_j on
    X_{-j}; exposed so tests can assert that equality directly.
    """
    sub, _ = _row_problem(gd, j)
    return fit_weighted_lasso(sub, penalty, opts=opts)


def _select_row_penalty(
    sub: GramData, d_total: int, n_points: int, opts: SolverOpts
) -> tuple[float, LassoFit]:
    lam_max = float(np.max(np.abs(sub.xty)))
    if lam_max <= 0.0:
        # orthogonal column: any positive penalty keeps gamma at zero
        fit = fit_weighted_lasso(sub, 1.0, opts=opts)
        return 1.0, fit
    grid = np.geomspace(lam_max, lam_max * 1e-4, n_points)
    best = None
    best_score = np.inf
    best_lam = None
    beta_warm = None
    for lam in grid:
        fit = fit_weighted_lasso(sub, float(lam), opts=opts, beta0=beta_warm)
        beta_warm = fit.beta
        rss = sub.yty - 2.0 * fit.beta @ sub.xty + fit.beta @ (sub.gram @ fit.beta)
        score = rss + bic_penalty_term(len(fit.active_set), sub.n_obs, d_total)
        if score < best_score:
            best_score = score
            best = fit
            best_lam = float(lam)
    return best_lam, best


def nodewise_fit(
    ds_or_gram,
    tuning: BicPerRow | FixedPenalties = BicPerRow(),
    opts: SolverOpts = SolverOpts(),
) -> PrecisionEstimate:
    """Run all d row regressions and assemble the precision estimate.

    tau_j^2 = RSS_j / NT + penalty_j * |gamma_j|_1; a value below 1e-12
    signals exact collinearity and raises :class:`DegenerateColumn`.
    """
    gd = ds_or_gram if isinstance(ds_or_gram, GramData) else GramData.from_dataset(ds_or_gram)
    d = gd.gram.shape[0]
    if d < 2:
        raise DimensionMismatch("nodewise regression needs at least 2 regressors")
    if isinstance(tuning, FixedPenalties):
        pens = np.asarray(tuning.penalties, dtype=np.float64)
        if pens.ndim == 0:
            pens = np.full(d, float(pens))
        if pens.shape != (d,):
            raise DimensionMismatch(f"penalties shape {pens.shape}, expected ({d},)")
    else:
        pens = None

    gamma = []
    tau_sq = np.empty(d)
    used = np.empty(d)
    for j in range(d):
        sub, _ = _row_problem(gd, j)
        if pens is not None:
            lam = float(pens[j])
            fit = fit_weighted_lasso(sub, lam, opts=opts)
        else:
            lam, fit = _select_row_penalty(sub, d, tuning.n_points, opts)
        g = fit.beta
        rss = sub.yty - 2.0 * g @ sub.xty + g @ (sub.gram @ g)
        tau = rss + lam * float(np.abs(g).sum())
        if tau < TAU_SQ_FLOOR:
            raise DegenerateColumn(
                f"column {j}: tau^2 = {tau:.3e} below {TAU_SQ_FLOOR:.0e}"
            )
        gamma.append(g)
        tau_sq[j] = tau
        used[j] = lam
    omega = _assemble_omega(gamma, tau_sq)
    return PrecisionEstimate(
        gamma=tuple(gamma), tau_sq=tau_sq, omega=omega, penalties=used
    )


def debias(
    ds: PanelDataset, fit: LassoFit, precision: PrecisionEstimate
) -> DebiasedFit:
    """beta_bc = beta + Omega X'(y - X beta) / NT, with no re-fitting."""
    d = ds.n_regressors
    if fit.beta.size != d or precision.n_regressors != d:
        raise DimensionMismatch(
            f"fit has {fit.beta.size} coefficients, precision {precision.n_regressors}, data {d}"
        )
    x = ds.design_matrix()
    y = ds.response_vector()
    resid = y - x @ fit.beta
    correction = precision.omega @ (x.T @ resid) / x.shape[0]
    return DebiasedFit(
        beta_bc=fit.beta + correction,
        base_fit=fit,
        precision=precision,
        n_obs=x.shape[0],
    )
