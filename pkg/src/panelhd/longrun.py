"""Kernel HAC estimation of the long-run covariance of aggregated scores,
hard thresholding with 2-fold cross-validation, and the pooled comparator.

The robust estimator works on the cross-sectionally aggregated score series

    ubar_t = (1 / sqrt(N)) * sum_i x_it * (y_it - x_it' beta),

so cross-unit covariance of the scores enters the estimate.  The pooled
comparator averages unitwise HAC matrices instead and ignores cross-unit
terms; under cross-sectional dependence it understates the variance, which
is exactly the comparison the ECR2 metric makes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .errors import BandwidthTooLarge, DimensionMismatch
from .panel import PanelDataset

_KERNELS = ("bartlett", "parzen")


@dataclass(frozen=True)
class KernelSpec:
    """Lag-window kernel with bandwidth ell.

    Both supported kernels are symmetric, Lipschitz on [-1, 1], equal 1 at 0
    and vanish outside [-1, 1].
    """

    kind: str = "bartlett"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.kind not in _KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}; choose from {_KERNELS}")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    def weight(self, x: float) -> float:
        ax = abs(x)
        if ax > 1.0:
            return 0.0
        if self.kind == "bartlett":
            return 1.0 - ax
        # parzen
        if ax <= 0.5:
            return 1.0 - 6.0 * ax * ax + 6.0 * ax ** 3
        return 2.0 * (1.0 - ax) ** 3


def default_bandwidth(n_periods: int) -> float:
    """ceil(0.75 * T^(1/3)), the textbook rule used throughout."""
    return float(math.ceil(0.75 * n_periods ** (1.0 / 3.0)))


@dataclass(frozen=True)
class LongRunCov:
    """Symmetric d x d long-run covariance with its construction metadata."""

    theta: np.ndarray
    kernel: KernelSpec
    threshold: float = 0.0
    thresholded: bool = False
    score_builder: str = ""

    def to_dict(self) -> dict:
        d = self.theta.shape[0]
        lower = [
            [float(self.theta[i, j]) for j in range(i + 1)] for i in range(d)
        ]
        return {
            "dim": d,
            "lower_triangle": lower,
            "kernel": {"kind": self.kernel.kind, "bandwidth": self.kernel.bandwidth},
            "threshold": float(self.threshold),
            "thresholded": bool(self.thresholded),
            "score_builder": self.score_builder,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LongRunCov":
        d = int(data["dim"])
        theta = np.zeros((d, d))
        for i, row in enumerate(data["lower_triangle"]):
            for j, v in enumerate(row):
                theta[i, j] = v
                theta[j, i] = v
        return cls(
            theta=theta,
            kernel=KernelSpec(**data["kernel"]),
            threshold=float(data["threshold"]),
            thresholded=bool(data["thresholded"]),
            score_builder=data.get("score_builder", ""),
        )


def aggregated_scores(ds: PanelDataset, beta: np.ndarray) -> np.ndarray:
    """T x d series of cross-sectionally scaled score sums at ``beta``."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (ds.n_regressors,):
        raise DimensionMismatch(
            f"beta has shape {beta.shape}, expected ({ds.n_regressors},)"
        )
    resid = ds.y - ds.x @ beta            # (N, T)
    scores = np.einsum("it,itj->tj", resid, ds.x)
    return scores / math.sqrt(ds.n_units)


def _lag_sum(scores: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Gamma_0 + sum_k a(k/ell) (Gamma_k + Gamma_k') over k = 1..floor(ell)."""
    t_len = scores.shape[0]
    theta = scores.T @ scores / t_len
    max_lag = min(int(math.floor(kernel.bandwidth)), t_len - 1)
    for k in range(1, max_lag + 1):
        w = kernel.weight(k / kernel.bandwidth)
        if w == 0.0:
            continue
        gamma_k = scores[k:].T @ scores[:-k] / t_len
        theta += w * (gamma_k + gamma_k.T)
    # numerically exact symmetry
    return (theta + theta.T) / 2.0


def hac(scores: np.ndarray, kernel: KernelSpec, score_builder: str = "") -> LongRunCov:
    """Kernel-weighted long-run covariance (1/T) sum_st a((t-s)/ell) u_t u_s'.

    ``scores`` is the T x d series from :func:`aggregated_scores` (a 1-d
    array is treated as T x 1).  Raises :class:`BandwidthTooLarge` when
    ell >= T.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[:, None]
    t_len = scores.shape[0]
    if t_len < 2:
        raise DimensionMismatch("need at least two periods of scores")
    if kernel.bandwidth >= t_len:
        raise BandwidthTooLarge(
            f"bandwidth {kernel.bandwidth} must be < T = {t_len}"
        )
    theta = _lag_sum(scores, kernel)
    return LongRunCov(theta=theta, kernel=kernel, score_builder=score_builder)


def threshold(cov: LongRunCov, u: float) -> LongRunCov:
    """Entrywise hard threshold at level u, applied to every entry
    (diagonal included)."""
    if u < 0:
        raise ValueError("threshold must be nonnegative")
    kept = np.where(np.abs(cov.theta) >= u, cov.theta, 0.0)
    return dc_replace(cov, theta=kept, threshold=float(u), thresholded=True)


def default_threshold_grid(cov: LongRunCov, n_points: int = 20) -> np.ndarray:
    """Log-spaced candidate thresholds from 1e-3*m to m with m the largest
    off-diagonal magnitude, capped at the smallest diagonal entry so the
    selected threshold never zeroes the diagonal.

    The top point sits one ulp above m: the hard-threshold rule keeps
    entries with |entry| >= u, so a top of exactly m could never zero the
    largest off-diagonal entry.
    """
    theta = cov.theta
    off = np.abs(theta - np.diag(np.diag(theta)))
    m = float(off.max())
    if m <= 0.0:
        return np.array([0.0])
    top = float(np.nextafter(m, np.inf))
    cap = float(np.min(np.abs(np.diag(theta))))
    if cap > 0.0:
        top = min(top, cap)
    return np.geomspace(m * 1e-3, top, n_points)


def cv_threshold(
    ds: PanelDataset,
    beta: np.ndarray,
    kernel: KernelSpec,
    grid: np.ndarray,
) -> float:
    """2-fold cross-validated threshold level.

    The time axis is split into halves; for each candidate u the Frobenius
    distance between the thresholded estimate of one fold and the raw
    estimate of the other is averaged over both orderings.  Ties go to the
    larger u.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("threshold grid is empty")
    if ds.n_periods < 4:
        raise DimensionMismatch("need T >= 4 for 2-fold cross validation")
    scores = aggregated_scores(ds, beta)
    half = ds.n_periods // 2
    theta1 = hac(scores[:half], kernel).theta
    theta2 = hac(scores[half:], kernel).theta

    best_u = None
    best_loss = np.inf
    for u in sorted(float(v) for v in grid):
        kept1 = np.where(np.abs(theta1) >= u, theta1, 0.0)
        kept2 = np.where(np.abs(theta2) >= u, theta2, 0.0)
        loss = 0.5 * (
            float(((kept1 - theta2) ** 2).sum()) + float(((kept2 - theta1) ** 2).sum())
        )
        if loss <= best_loss:  # <= so ties move to the larger u
            best_loss = loss
            best_u = u
    return best_u


def pooled_hac(
    ds: PanelDataset, beta: np.ndarray, kernel: KernelSpec
) -> LongRunCov:
    """Unitwise HAC averaged over units, ignoring cross-unit covariance.

    Theta_pooled = (1/NT) sum_i sum_st a((t-s)/ell) u_it u_is' with
    u_it = x_it * (y_it - x_it' beta).  For N = 1 this equals :func:`hac`
    exactly.
    """
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (ds.n_regressors,):
        raise DimensionMismatch(
            f"beta has shape {beta.shape}, expected ({ds.n_regressors},)"
        )
    t_len = ds.n_periods
    if kernel.bandwidth >= t_len:
        raise BandwidthTooLarge(
            f"bandwidth {kernel.bandwidth} must be < T = {t_len}"
        )
    resid = ds.y - ds.x @ beta                         # (N, T)
    u = resid[:, :, None] * ds.x                       # (N, T, d)
    n, _, d = u.shape
    theta = np.einsum("itj,itk->jk", u, u) / (n * t_len)
    max_lag = min(int(math.floor(kernel.bandwidth)), t_len - 1)
    for k in range(1, max_lag + 1):
        w = kernel.weight(k / kernel.bandwidth)
        if w == 0.0:
            continue
        gamma_k = np.einsum("itj,itk->jk", u[:, k:], u[:, :-k]) / (n * t_len)
        theta += w * (gamma_k + gamma_k.T)
    theta = (theta + theta.T) / 2.0
    return LongRunCov(
        theta=theta, kernel=kernel, score_builder="pooled unitwise scores"
    )
