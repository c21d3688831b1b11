"""Confidence intervals and residual diagnostics.

Interval construction follows the studentized limits of the two models:

  sparse model:   sqrt(NT) (rho' Omega T_u(Theta) Omega' rho)^(-1/2) rho'(b_bc - b0) ~ N(0, 1)
  factor model:   sqrt(NT) (rho' S^-1 Th S^-1 rho)^(-1/2) rho'(b_bc - b0)      ~ N(0, 1)

Normal quantiles use Acklam's rational approximation with one Halley
refinement, so reports are bit-stable across platforms without a stats
dependency.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConstantResidualSeries,
    DimensionMismatch,
    NonPositiveVariance,
    ZeroVariance,
)
from .longrun import LongRunCov
from .nodewise import DebiasedFit
from .panel import ScaleRecord

# --- normal distribution helpers -------------------------------------------

_ACKLAM_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_ACKLAM_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_ACKLAM_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_ACKLAM_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF, accurate to ~1e-15 after refinement."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    p_low, p_high = 0.02425, 1.0 - 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    elif p <= p_high:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / (
            ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
        )
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    # one Halley step against the exact CDF
    e = normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def chi2_sf_2df(x: float) -> float:
    """Survival function of chi-square with 2 degrees of freedom."""
    return math.exp(-0.5 * x) if x > 0 else 1.0


# --- confidence interval reports --------------------------------------------

@dataclass(frozen=True)
class CiRow:
    index: int
    estimate: float
    std_error: float
    z_stat: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class CiReport:
    """Per-coefficient (or per-contrast) interval table."""

    rows: tuple[CiRow, ...]
    level: float
    variance_source: str
    contrast: np.ndarray | None = None

    def covers(self, truth: np.ndarray) -> np.ndarray:
        """Indicator of truth[j] lying inside row j's interval."""
        truth = np.asarray(truth, dtype=np.float64)
        return np.array(
            [r.ci_low <= truth[k] <= r.ci_high for k, r in enumerate(self.rows)]
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["index", "estimate", "std_error", "z_stat", "ci_low", "ci_high", "level"]
        )
        for r in self.rows:
            writer.writerow(
                [
                    r.index,
                    repr(r.estimate),
                    repr(r.std_error),
                    repr(r.z_stat),
                    repr(r.ci_low),
                    repr(r.ci_high),
                    repr(self.level),
                ]
            )
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "variance_source": self.variance_source,
            "contrast": None if self.contrast is None else [float(v) for v in self.contrast],
            "rows": [
                {
                    "index": r.index,
                    "estimate": r.estimate,
                    "std_error": r.std_error,
                    "z_stat": r.z_stat,
                    "ci_low": r.ci_low,
                    "ci_high": r.ci_high,
                }
                for r in self.rows
            ],
        }


def _build_rows(estimates, variances, level, indices) -> tuple[CiRow, ...]:
    z = normal_quantile(0.5 + level / 2.0)
    rows = []
    for idx, est, var in zip(indices, estimates, variances):
        if not var > 0.0:
            raise NonPositiveVariance(
                f"variance along contrast {idx} is {var:.3e}; "
                "thresholding may have destroyed positive definiteness"
            )
        se = math.sqrt(var)
        rows.append(
            CiRow(
                index=int(idx),
                estimate=float(est),
                std_error=se,
                z_stat=float(est / se),
                ci_low=float(est - z * se),
                ci_high=float(est + z * se),
            )
        )
    return tuple(rows)


def ci_debiased(
    fit: DebiasedFit,
    cov: LongRunCov,
    rho: np.ndarray | None = None,
    level: float = 0.95,
    variance_source: str = "robust_hac",
) -> CiReport:
    """Intervals for the debiased estimator.

    With ``rho=None`` one row per coefficient is produced using the
    unit-basis contrasts; otherwise a single row for the contrast
    rho'beta_bc.  The variance is rho' Omega Theta Omega' rho / NT.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    omega = fit.precision.omega
    d = omega.shape[0]
    if cov.theta.shape != (d, d):
        raise DimensionMismatch("covariance dimension does not match the fit")
    if fit.n_obs <= 0:
        raise DimensionMismatch("fit does not record its sample size")
    nt = fit.n_obs
    sandwich = omega @ cov.theta @ omega.T
    if rho is None:
        variances = np.diag(sandwich) / nt
        return CiReport(
            rows=_build_rows(fit.beta_bc, variances, level, range(d)),
            level=level,
            variance_source=variance_source,
        )
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (d,):
        raise DimensionMismatch(f"contrast has shape {rho.shape}, expected ({d},)")
    est = float(rho @ fit.beta_bc)
    var = float(rho @ sandwich @ rho) / nt
    return CiReport(
        rows=_build_rows([est], [var], level, [0]),
        level=level,
        variance_source=variance_source,
        contrast=rho,
    )


def ci_factor(fit, rho: np.ndarray | None = None, level: float = 0.95) -> CiReport:
    """Intervals for the bias-corrected factor-model coefficients.

    ``fit`` is a bias-corrected :class:`~panelhd.factors.FactorFit` with
    ``sigma_j``/``theta_j`` populated; the variance along a contrast is
    rho' Sigma_J^-1 Theta_J Sigma_J^-1 rho / NT.  Row indices refer to the
    original coefficient positions (the active set).
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    if fit.beta_bc is None or fit.sigma_j is None or fit.theta_j is None:
        raise DimensionMismatch(
            "fit must carry beta_bc, sigma_j and theta_j; run bias_correct "
            "and plugin_variance first"
        )
    k = len(fit.active_set)
    sigma_inv = np.linalg.inv(fit.sigma_j)
    sandwich = sigma_inv @ fit.theta_j @ sigma_inv.T
    nt = fit.n_obs
    if rho is None:
        variances = np.diag(sandwich) / nt
        return CiReport(
            rows=_build_rows(fit.beta_bc, variances, level, fit.active_set),
            level=level,
            variance_source="factor_plugin",
        )
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (k,):
        raise DimensionMismatch(f"contrast has shape {rho.shape}, expected ({k},)")
    est = float(rho @ fit.beta_bc)
    var = float(rho @ sandwich @ rho) / nt
    return CiReport(
        rows=_build_rows([est], [var], level, [0]),
        level=level,
        variance_source="factor_plugin",
        contrast=rho,
    )


def cd_test(residuals: np.ndarray) -> tuple[float, float]:
    """Pairwise-correlation statistic for cross-sectional dependence.

    CD = sqrt(2T / (N(N-1))) * sum_{i<j} corr(res_i, res_j); under the null
    of no dependence CD is asymptotically standard normal.  The p-value is
    two-sided.
    """
    res = np.asarray(residuals, dtype=np.float64)
    if res.ndim != 2:
        raise DimensionMismatch("residuals must be an N x T matrix")
    n, t = res.shape
    if n < 2 or t < 3:
        raise DimensionMismatch("need N >= 2 and T >= 3")
    centered = res - res.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered ** 2).sum(axis=1))
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise ConstantResidualSeries(f"unit {bad} has constant residuals")
    z = centered / norms[:, None]
    corr = z @ z.T
    pair_sum = float(np.triu(corr, k=1).sum())
    stat = math.sqrt(2.0 * t / (n * (n - 1))) * pair_sum
    p_value = 2.0 * (1.0 - normal_cdf(abs(stat)))
    return stat, p_value


def jarque_bera(series: np.ndarray) -> tuple[float, float]:
    """Skewness/kurtosis normality test with a chi-square(2) p-value."""
    x = np.asarray(series, dtype=np.float64).ravel()
    n = x.size
    if n < 8:
        raise DimensionMismatch("need at least 8 observations")
    centered = x - x.mean()
    m2 = float((centered ** 2).mean())
    if m2 <= 0.0:
        raise ZeroVariance("series")
    m3 = float((centered ** 3).mean())
    m4 = float((centered ** 4).mean())
    skew = m3 / m2 ** 1.5
    kurt = m4 / m2 ** 2
    stat = n / 6.0 * (skew ** 2 + 0.25 * (kurt - 3.0) ** 2)
    return stat, chi2_sf_2df(stat)


def rescale_report(report: CiReport, record: ScaleRecord) -> CiReport:
    """Map a per-coefficient report from standardized to raw units."""
    if report.contrast is not None:
        raise DimensionMismatch("only unit-basis reports can be rescaled")
    rows = []
    for r in report.rows:
        factor = record.y_sd / record.x_sds[r.index]
        rows.append(
            CiRow(
                index=r.index,
                estimate=r.estimate * factor,
                std_error=r.std_error * factor,
                z_stat=r.z_stat,
                ci_low=r.ci_low * factor,
                ci_high=r.ci_high * factor,
            )
        )
    return CiReport(
        rows=tuple(rows), level=report.level, variance_source=report.variance_source
    )
