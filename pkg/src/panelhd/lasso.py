"""Penalized least-squares solvers: plain and weighted LASSO with BIC tuning.

The objective is

    (1 / 2NT) * |y - X beta|^2  +  penalty * sum_j g_j |beta_j|,

minimized by cyclic coordinate descent on the Gram matrix ("covariance
updating"): all inner products are precomputed once per dataset as
G = X'X / NT and c = X'y / NT, so a path of fits and the d nodewise
regressions reuse a single pass over the data.

Weights g_j may be +inf, meaning the coordinate is frozen at zero (the limit
of an adaptive-LASSO weight when the pilot coefficient is exactly zero), or
0, meaning the coordinate is unpenalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .panel import PanelDataset


@dataclass(frozen=True)
class SolverOpts:
    """Solver controls.

    ``tol`` bounds the largest coordinate update in a full sweep and the
    sup-norm change of outer (alternating) iterations; ``debug`` additionally
    asserts that the objective never increases between sweeps.  ``outer_tol``
    and ``max_outer`` govern the alternating loops of the low-rank solvers.
    """

    tol: float = 1e-7
    max_iter: int = 10_000
    outer_tol: float = 1e-6
    max_outer: int = 100
    debug: bool = False


@dataclass(frozen=True)
class LassoFit:
    """Solution of one weighted-LASSO problem.

    ``active_set`` lists the coordinates with exactly nonzero coefficients
    (coordinate descent produces exact zeros); ``objective`` is the penalized
    objective at ``beta``.
    """

    beta: np.ndarray
    penalty: float
    weights: np.ndarray
    active_set: tuple[int, ...]
    iterations: int
    converged: bool
    objective: float

    def to_dict(self) -> dict:
        return {
            "beta": {int(j): float(self.beta[j]) for j in self.active_set},
            "n_regressors": int(self.beta.size),
            "penalty": float(self.penalty),
            "weights": [None if math.isinf(w) else float(w) for w in self.weights],
            "active_set": [int(j) for j in self.active_set],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "objective": float(self.objective),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LassoFit":
        d = int(data["n_regressors"])
        beta = np.zeros(d)
        for j, v in data["beta"].items():
            beta[int(j)] = float(v)
        weights = np.array(
            [np.inf if w is None else float(w) for w in data["weights"]]
        )
        return cls(
            beta=beta,
            penalty=float(data["penalty"]),
            weights=weights,
            active_set=tuple(int(j) for j in data["active_set"]),
            iterations=int(data["iterations"]),
            converged=bool(data["converged"]),
            objective=float(data["objective"]),
        )


@dataclass(frozen=True)
class BicSelection:
    """Outcome of a modified-BIC search along a penalty path."""

    chosen_penalty: float
    score_table: tuple[tuple[float, float, float, float], ...]
    chosen_fit: LassoFit


@dataclass
class GramData:
    """Precomputed sufficient statistics of one regression problem."""

    gram: np.ndarray       # X'X / NT
    xty: np.ndarray        # X'y / NT
    yty: float             # y'y / NT
    n_obs: int             # NT

    @classmethod
    def from_arrays(cls, x: np.ndarray, y: np.ndarray) -> "GramData":
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.size:
            raise DimensionMismatch(
                f"design {x.shape} and response {y.shape} are inconsistent"
            )
        nt = x.shape[0]
        return cls(
            gram=(x.T @ x) / nt,
            xty=(x.T @ y) / nt,
            yty=float(y @ y) / nt,
            n_obs=nt,
        )

    @classmethod
    def from_dataset(cls, ds: PanelDataset) -> "GramData":
        return cls.from_arrays(ds.design_matrix(), ds.response_vector())


def soft_threshold(z: float, t: float) -> float:
    """sign(z) * max(|z| - t, 0), the proximal map of t * |.|."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def _penalty_value(beta: np.ndarray, penalty: float, weights: np.ndarray) -> float:
    finite = np.isfinite(weights)
    return penalty * float(np.abs(beta[finite]) @ weights[finite])


def _objective(gd: GramData, beta: np.ndarray, penalty: float, weights: np.ndarray) -> float:
    quad = 0.5 * (gd.yty - 2.0 * beta @ gd.xty + beta @ (gd.gram @ beta))
    return quad + _penalty_value(beta, penalty, weights)


def _cd_solve(
    gd: GramData,
    penalty: float,
    weights: np.ndarray,
    opts: SolverOpts,
    beta0: np.ndarray | None = None,
) -> tuple[np.ndarray, int, bool]:
    """Cyclic coordinate descent with covariance updates and an active-set
    inner loop.  Returns (beta, sweeps, converged)."""
    gram = gd.gram
    diag = np.diag(gram)
    d = diag.size
    beta = np.zeros(d) if beta0 is None else beta0.astype(np.float64).copy()
    frozen = ~np.isfinite(weights)
    beta[frozen] = 0.0
    beta[diag <= 0.0] = 0.0  # zero-norm columns never enter
    # residual gradient: grad_j = X_j'(y - X beta) / NT
    grad = gd.xty - gram @ beta
    with np.errstate(invalid="ignore"):
        thresholds = np.where(frozen, np.inf, penalty * weights)
    updatable = [j for j in range(d) if not frozen[j] and diag[j] > 0.0]

    if opts.debug:
        obj_prev = _objective(gd, beta, penalty, weights)

    def sweep(indices) -> float:
        max_delta = 0.0
        for j in indices:
            b_old = beta[j]
            z = grad[j] + diag[j] * b_old
            b_new = soft_threshold(z, thresholds[j]) / diag[j]
            if b_new != b_old:
                beta[j] = b_new
                # gram is symmetric; the row slice is contiguous
                grad[:] -= gram[j] * (b_new - b_old)
                delta = abs(b_new - b_old)
                if delta > max_delta:
                    max_delta = delta
        return max_delta

    sweeps = 0
    converged = False
    while sweeps < opts.max_iter:
        max_delta = sweep(updatable)
        sweeps += 1
        if opts.debug:
            obj_now = _objective(gd, beta, penalty, weights)
            assert obj_now <= obj_prev + 1e-12 * max(1.0, abs(obj_prev)), (
                f"objective increased: {obj_prev} -> {obj_now}"
            )
            obj_prev = obj_now
        if max_delta < opts.tol:
            # candidate stop: also require the stationarity certificate so the
            # reported solution satisfies the KKT conditions at 10 * tol
            if _kkt_violation(gd, beta, penalty, weights, grad=grad) <= 5.0 * opts.tol:
                converged = True
                break
        else:
            # iterate the current active set to convergence before the next
            # full sweep; cheap when the solution is sparse
            active = [j for j in updatable if beta[j] != 0.0]
            while active and sweeps < opts.max_iter:
                inner_delta = sweep(active)
                sweeps += 1
                if inner_delta < opts.tol:
                    break
    return beta, sweeps, converged


def _kkt_violation(
    gd: GramData,
    beta: np.ndarray,
    penalty: float,
    weights: np.ndarray,
    grad: np.ndarray | None = None,
) -> float:
    """Largest violation of the stationarity conditions at beta."""
    if grad is None:
        grad = gd.xty - gd.gram @ beta
    with np.errstate(invalid="ignore"):
        lam = np.where(np.isfinite(weights), penalty * weights, np.inf)
    active = beta != 0.0
    viol = np.maximum(np.abs(grad) - lam, 0.0)  # -inf for frozen -> 0
    if active.any():
        viol[active] = np.abs(grad[active] - lam[active] * np.sign(beta[active]))
    return float(viol.max(initial=0.0))


def kkt_violation(ds_or_gram, fit: LassoFit) -> float:
    """Public stationarity check for a returned fit (see class invariants)."""
    gd = _as_gram(ds_or_gram)
    return _kkt_violation(gd, fit.beta, fit.penalty, fit.weights)


def _as_gram(ds_or_gram) -> GramData:
    if isinstance(ds_or_gram, GramData):
        return ds_or_gram
    return GramData.from_dataset(ds_or_gram)


def fit_weighted_lasso(
    ds_or_gram,
    penalty: float,
    weights: np.ndarray | None = None,
    opts: SolverOpts = SolverOpts(),
    beta0: np.ndarray | None = None,
) -> LassoFit:
    """Solve the weighted LASSO; all-ones weights give the plain LASSO.

    Accepts either a :class:`PanelDataset` or a precomputed
    :class:`GramData`.  ``beta0`` warm-starts the solver.
    """
    if penalty < 0:
        raise ValueError("penalty must be nonnegative")
    gd = _as_gram(ds_or_gram)
    d = gd.gram.shape[0]
    if weights is None:
        weights = np.ones(d)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (d,):
            raise DimensionMismatch(f"weights shape {weights.shape}, expected ({d},)")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
    if beta0 is not None and beta0.shape != (d,):
        raise DimensionMismatch(f"beta0 shape {beta0.shape}, expected ({d},)")
    beta, sweeps, converged = _cd_solve(gd, penalty, weights, opts, beta0)
    return LassoFit(
        beta=beta,
        penalty=float(penalty),
        weights=weights,
        active_set=tuple(int(j) for j in np.flatnonzero(beta)),
        iterations=sweeps,
        converged=converged,
        objective=_objective(gd, beta, penalty, weights),
    )


def adaptive_weights(
    init: LassoFit, mode: str, threshold: float | None = None
) -> np.ndarray:
    """Weights for the second-step weighted LASSO from a pilot fit.

    ``adaptive``:     g_j = 1 / |beta_j|, with +inf (coordinate frozen at
                      zero) when beta_j = 0.
    ``conservative``: g_j = threshold / max(|beta_j|, threshold), always in
                      (0, 1].
    """
    abs_beta = np.abs(init.beta)
    if mode == "adaptive":
        with np.errstate(divide="ignore"):
            return np.where(abs_beta > 0, 1.0 / abs_beta, np.inf)
    if mode == "conservative":
        if threshold is None or threshold <= 0:
            raise ValueError("conservative mode needs a positive threshold")
        return threshold / np.maximum(abs_beta, threshold)
    raise ValueError(f"unknown mode {mode!r}")


def default_conservative_threshold(d: int, n_obs: int) -> float:
    """sqrt(log d / NT), the rate the penalty theory is anchored to."""
    return math.sqrt(math.log(max(d, 2)) / n_obs)


def penalty_grid(ds_or_gram, n_points: int) -> np.ndarray:
    """Log-spaced penalties from lambda_max = |X'y / NT|_inf down to 1e-4
    of it.  At grid[0] the plain-LASSO solution is exactly zero."""
    if n_points < 2:
        raise ValueError("need at least two grid points")
    gd = _as_gram(ds_or_gram)
    lam_max = float(np.max(np.abs(gd.xty)))
    if lam_max <= 0.0:
        lam_max = 1.0
    return np.geomspace(lam_max, lam_max * 1e-4, n_points)


def weighted_penalty_grid(
    ds_or_gram, n_points: int, weights: np.ndarray
) -> np.ndarray:
    """Penalty grid rescaled so grid[0] kills every penalized coordinate of
    the *weighted* problem (unpenalized and frozen coordinates excluded)."""
    if n_points < 2:
        raise ValueError("need at least two grid points")
    gd = _as_gram(ds_or_gram)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.abs(gd.xty) / weights
    ratios = ratios[np.isfinite(ratios) & (weights > 0)]
    lam_max = float(ratios.max()) if ratios.size else 1.0
    if lam_max <= 0.0:
        lam_max = 1.0
    return np.geomspace(lam_max, lam_max * 1e-4, n_points)


def bic_penalty_term(n_active: int, n_obs: int, d: int) -> float:
    """|J| * (log(NT)/NT) * log(log d), with d floored at 3 so the
    double log stays positive."""
    return n_active * (math.log(n_obs) / n_obs) * math.log(math.log(max(d, 3)))


def bic_select(
    ds_or_gram,
    grid: np.ndarray,
    weights: np.ndarray | None = None,
    opts: SolverOpts = SolverOpts(),
) -> BicSelection:
    """Choose the penalty minimizing the modified BIC

        RSS / NT + |J| * (log(NT)/NT) * log(log d),

    with warm-started fits along the descending path.  Ties go to the larger
    penalty.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("penalty grid is empty")
    gd = _as_gram(ds_or_gram)
    d = gd.gram.shape[0]
    order = np.argsort(grid)[::-1]  # descending for warm starts
    best_fit = None
    best_score = np.inf
    best_penalty = None
    table = []
    beta_warm = None
    for idx in order:
        lam = float(grid[idx])
        fit = fit_weighted_lasso(gd, lam, weights, opts, beta0=beta_warm)
        beta_warm = fit.beta
        rss_term = gd.yty - 2.0 * fit.beta @ gd.xty + fit.beta @ (gd.gram @ fit.beta)
        pen_term = bic_penalty_term(len(fit.active_set), gd.n_obs, d)
        score = rss_term + pen_term
        table.append((lam, float(rss_term), float(pen_term), float(score)))
        # strict < keeps the largest penalty among exact ties (path is descending)
        if score < best_score:
            best_score = score
            best_fit = fit
            best_penalty = lam
    return BicSelection(
        chosen_penalty=best_penalty,
        score_table=tuple(table),
        chosen_fit=best_fit,
    )
