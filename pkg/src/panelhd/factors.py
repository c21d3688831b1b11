"""Low-rank interactive-fixed-effects estimation.

Stage 1 minimizes the jointly convex objective

    (1/2NT) |y - X beta - vec(Xi)|^2 + w1 |beta|_1 + (w2/sqrt(NT)) |Xi|_*

by alternating two exact block proxes: coordinate descent in beta and
singular-value soft-thresholding of the T x N residual matrix at level
w2 * sqrt(NT).  The factor rank is then read off the singular values of the
fitted Xi, and loadings are extracted from its right singular vectors.

Stage 2 alternates a weighted LASSO in the factor-concentrated objective
(loadings projected out) with a PCA update of the loadings, using binary
weights g_j = 1(|beta_init_j| < w3): coordinates with large initial
estimates are unpenalized.

Stage 3 removes the two asymptotic bias terms: a half-panel jackknife in the
time dimension and a plug-in correction built from the thresholded residual
covariance.  Loadings are identified only up to rotation, so all comparisons
here and in the tests go through projectors Lambda Lambda' / N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .errors import (
    DimensionMismatch,
    SingularDJ,
    SingularSigmaJ,
    SvdFailure,
)
from .lasso import GramData, SolverOpts, fit_weighted_lasso, bic_penalty_term
from .longrun import KernelSpec, hac
from .panel import PanelDataset


@dataclass(frozen=True)
class LowRankFit:
    """Stage-1 estimate: sparse coefficients plus a low-rank panel effect.

    ``r_hat`` is the factor count from the singular-value threshold rule;
    ``xi_rank`` is the plain rank of the fitted Xi (used by the tuning BIC).
    """

    beta_init: np.ndarray          # (d,)
    xi: np.ndarray                 # (T, N)
    w1: float
    w2: float
    r_hat: int
    lambda_init: np.ndarray        # (N, r_hat), columns scaled to Lam'Lam/N = I
    solver_trace: tuple[float, ...]
    converged: bool
    n_obs: int
    xi_rank: int = 0


@dataclass(frozen=True)
class FactorFit:
    """Stage-2/3 estimate of the factor-augmented regression.

    ``beta`` is the full-length coefficient vector; ``active_set`` its
    support.  ``beta_bc``, ``mu_zeta_hat``, ``omega_e``, ``half_panel``,
    ``sigma_j`` and ``theta_j`` are populated by :func:`bias_correct` and
    :func:`plugin_variance`.
    """

    beta: np.ndarray
    active_set: tuple[int, ...]
    factors: np.ndarray            # (T, r_hat)
    loadings: np.ndarray           # (N, r_hat)
    r_hat: int
    w3: float
    weights: np.ndarray
    converged: bool
    rank_zero: bool
    n_obs: int
    beta_bc: np.ndarray | None = None
    mu_zeta_hat: np.ndarray | None = None
    sigma_j: np.ndarray | None = None
    theta_j: np.ndarray | None = None
    omega_e: np.ndarray | None = None
    omega_threshold: float | None = None
    half_panel: tuple[np.ndarray, np.ndarray] | None = None

    def to_dict(self) -> dict:
        out = {
            "beta": {int(j): float(self.beta[j]) for j in self.active_set},
            "n_regressors": int(self.beta.size),
            "active_set": [int(j) for j in self.active_set],
            "factors": self.factors.tolist(),
            "loadings": self.loadings.tolist(),
            "r_hat": int(self.r_hat),
            "w3": float(self.w3),
            "converged": bool(self.converged),
            "rank_zero": bool(self.rank_zero),
            "n_obs": int(self.n_obs),
        }
        for name in ("beta_bc", "mu_zeta_hat", "sigma_j", "theta_j", "omega_e"):
            value = getattr(self, name)
            out[name] = None if value is None else np.asarray(value).tolist()
        out["omega_threshold"] = self.omega_threshold
        if self.half_panel is not None:
            out["half_panel"] = [h.tolist() for h in self.half_panel]
        else:
            out["half_panel"] = None
        return out


def _svd_via_gram(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Economy SVD computed from the eigendecomposition of the smaller Gram.

    Returns (U, s, V) with descending singular values, mat = U diag(s) V'.
    Columns of U/V for (numerically) zero singular values are zero.
    """
    t, n = mat.shape
    try:
        if n <= t:
            vals, vecs = np.linalg.eigh(mat.T @ mat)
            order = np.argsort(vals)[::-1]
            s = np.sqrt(np.clip(vals[order], 0.0, None))
            v = vecs[:, order]
            u = np.zeros((t, n))
            nz = s > (s[0] * 1e-13 if s.size and s[0] > 0 else np.inf)
            if nz.any():
                u[:, nz] = (mat @ v[:, nz]) / s[nz]
            return u, s, v
        vals, vecs = np.linalg.eigh(mat @ mat.T)
        order = np.argsort(vals)[::-1]
        s = np.sqrt(np.clip(vals[order], 0.0, None))
        u = vecs[:, order]
        v = np.zeros((n, t))
        nz = s > (s[0] * 1e-13 if s.size and s[0] > 0 else np.inf)
        if nz.any():
            v[:, nz] = (mat.T @ u[:, nz]) / s[nz]
        return u, s, v
    except np.linalg.LinAlgError as exc:
        raise SvdFailure(str(exc)) from exc


def svt(mat: np.ndarray, tau: float) -> np.ndarray:
    """Singular-value soft-thresholding, the proximal map of tau * |.|_*."""
    if tau < 0:
        raise ValueError("threshold must be nonnegative")
    u, s, v = _svd_via_gram(mat)
    keep = s > tau
    if not keep.any():
        return np.zeros_like(mat)
    return (u[:, keep] * (s[keep] - tau)) @ v[:, keep].T


def l1_nuclear_objective(
    ds: PanelDataset, beta: np.ndarray, xi: np.ndarray, w1: float, w2: float
) -> float:
    """Value of the stage-1 objective at (beta, xi)."""
    n, t = ds.n_units, ds.n_periods
    resid = ds.response_vector() - ds.design_matrix() @ beta - xi.T.reshape(-1)
    _, s, _ = _svd_via_gram(xi)
    return (
        0.5 * float(resid @ resid) / (n * t)
        + w1 * float(np.abs(beta).sum())
        + w2 / math.sqrt(n * t) * float(s.sum())
    )


def fit_l1_nuclear(
    ds: PanelDataset,
    w1: float,
    w2: float,
    opts: SolverOpts = SolverOpts(),
    warm: tuple[np.ndarray, np.ndarray] | None = None,
) -> LowRankFit:
    """Stage-1 alternating solver for the sparse + low-rank decomposition.

    Stops when the relative objective change falls below ``opts.outer_tol``;
    the best iterate is returned with ``converged=False`` if ``max_outer``
    is hit first.  ``warm`` optionally supplies (beta, xi_vec) starting
    values, e.g. from a neighbouring grid point.
    """
    if w1 < 0 or w2 < 0:
        raise ValueError("penalties must be nonnegative")
    n, t, d = ds.x.shape
    nt = n * t
    x = ds.design_matrix()
    y = ds.response_vector()
    gram = (x.T @ x) / nt
    tau = w2 * math.sqrt(nt)

    if warm is not None:
        beta = warm[0].copy()
        xi_vec = warm[1].copy()
    else:
        beta = np.zeros(d)
        xi_vec = np.zeros(nt)       # vec of the T x N matrix in stacked order
    xi_svals = np.zeros(min(t, n))
    xi_v = np.zeros((n, min(t, n)))
    trace = []
    obj_prev = np.inf
    converged = False
    ones = np.ones(d)
    # intermediate beta blocks do not need the final precision
    loose = SolverOpts(
        tol=max(opts.tol, 1e-5),
        max_iter=opts.max_iter,
        outer_tol=opts.outer_tol,
        max_outer=opts.max_outer,
        debug=opts.debug,
    )

    def beta_step(solver_opts):
        y_eff = y - xi_vec
        gd = GramData(
            gram=gram,
            xty=(x.T @ y_eff) / nt,
            yty=float(y_eff @ y_eff) / nt,
            n_obs=nt,
        )
        return fit_weighted_lasso(gd, w1, ones, solver_opts, beta0=beta).beta

    for _ in range(max(1, opts.max_outer)):
        beta = beta_step(loose)

        # Xi block: exact prox = SVT of the residual matrix at level tau
        resid_mat = (y - x @ beta).reshape(n, t).T          # (T, N)
        u, s, v = _svd_via_gram(resid_mat)
        keep = s > tau
        s_thr = np.where(keep, s - tau, 0.0)
        if keep.any():
            xi_mat = (u[:, keep] * s_thr[keep]) @ v[:, keep].T
        else:
            xi_mat = np.zeros((t, n))
        xi_vec = xi_mat.T.reshape(-1)
        xi_svals = s_thr
        xi_v = v

        resid = y - x @ beta - xi_vec
        obj = (
            0.5 * float(resid @ resid) / nt
            + w1 * float(np.abs(beta).sum())
            + w2 / math.sqrt(nt) * float(s_thr.sum())
        )
        trace.append(obj)
        if np.isfinite(obj_prev) and obj_prev - obj <= opts.outer_tol * max(
            1.0, abs(obj_prev)
        ):
            converged = True
            break
        obj_prev = obj

    if loose.tol > opts.tol:
        # polish the beta block at the requested precision
        beta = beta_step(opts)

    # rank rule on the fitted Xi
    sigma_max = float(xi_svals[0]) if xi_svals.size else 0.0
    cut = math.sqrt(tau * sigma_max) if sigma_max > 0 else np.inf
    r_hat = int(np.sum(xi_svals >= cut)) if sigma_max > 0 else 0
    lambda_init = math.sqrt(n) * xi_v[:, :r_hat]

    return LowRankFit(
        beta_init=beta,
        xi=xi_vec.reshape(n, t).T,
        w1=float(w1),
        w2=float(w2),
        r_hat=r_hat,
        lambda_init=lambda_init,
        solver_trace=tuple(trace),
        converged=converged,
        n_obs=nt,
        xi_rank=int(np.count_nonzero(xi_svals)),
    )


def default_w2_scale(n: int, t: int) -> float:
    """max(1/sqrt(N), 1/sqrt(T)), the rate the nuclear penalty is tied to."""
    return max(1.0 / math.sqrt(n), 1.0 / math.sqrt(t))


def tune_l1_nuclear(
    ds: PanelDataset,
    grid1: np.ndarray,
    grid2: np.ndarray,
    opts: SolverOpts = SolverOpts(),
) -> tuple[float, float, LowRankFit]:
    """Select (w1, w2) by the modified BIC

        RSS/NT + |J| (log NT / NT) log log d + rank(Xi) (N+T)/(NT),

    over the product grid; ties go to the lexicographically larger pair.
    The rank penalty uses the plain rank of the fitted Xi, not the factor
    count from the threshold rule.  Fits are warm-started along the grid.
    """
    grid1 = np.asarray(grid1, dtype=np.float64)
    grid2 = np.asarray(grid2, dtype=np.float64)
    if grid1.size == 0 or grid2.size == 0:
        raise ValueError("tuning grids must be nonempty")
    n, t, d = ds.x.shape
    nt = n * t
    x = ds.design_matrix()
    y = ds.response_vector()
    best = None
    best_score = np.inf
    warm = None
    w2_desc = sorted(grid2, reverse=True)
    # snake over the grid so consecutive fits are neighbours (warm starts)
    for row, w1 in enumerate(sorted(grid1, reverse=True)):
        w2_row = w2_desc if row % 2 == 0 else w2_desc[::-1]
        for w2 in w2_row:
            fit = fit_l1_nuclear(ds, float(w1), float(w2), opts, warm=warm)
            warm = (fit.beta_init, fit.xi.T.reshape(-1))
            resid = y - x @ fit.beta_init - fit.xi.T.reshape(-1)
            score = (
                float(resid @ resid) / nt
                + bic_penalty_term(int(np.count_nonzero(fit.beta_init)), nt, d)
                + fit.xi_rank * (n + t) / nt
            )
            pair = (float(w1), float(w2))
            if score < best_score or (
                score == best_score and best is not None and pair > best[:2]
            ):
                best_score = score
                best = (*pair, fit)
    return best


def _projector_complement(loadings: np.ndarray, n: int) -> np.ndarray:
    """M = I - Lam (Lam'Lam)^(-1) Lam', the annihilator of the loadings."""
    if loadings.shape[1] == 0:
        return np.eye(n)
    gram = loadings.T @ loadings
    return np.eye(n) - loadings @ np.linalg.solve(gram, loadings.T)


def _top_eigvec_loadings(resid: np.ndarray, r_hat: int) -> np.ndarray:
    """sqrt(N) times the top eigenvectors of the residual second moment."""
    n, t = resid.shape
    if r_hat == 0:
        return np.zeros((n, 0))
    try:
        vals, vecs = np.linalg.eigh(resid @ resid.T / (n * t))
    except np.linalg.LinAlgError as exc:
        raise SvdFailure(str(exc)) from exc
    return math.sqrt(n) * vecs[:, ::-1][:, :r_hat]


def _concentrated_gram(
    x_panel: np.ndarray, y_panel: np.ndarray, loadings: np.ndarray
) -> GramData:
    """Gram of the loadings-projected regression (M_Lam applied per period)."""
    n, t, d = x_panel.shape
    nt = n * t
    gram = np.einsum("ntj,ntk->jk", x_panel, x_panel) / nt
    xty = np.einsum("ntj,nt->j", x_panel, y_panel) / nt
    yty = float((y_panel ** 2).sum()) / nt
    if loadings.shape[1] > 0:
        lam_gram_inv = np.linalg.inv(loadings.T @ loadings)
        a = np.einsum("nr,ntj->trj", loadings, x_panel)       # (T, r, d)
        b = loadings.T @ y_panel                              # (r, T)
        ar = np.einsum("trj,rq->tqj", a, lam_gram_inv)        # (T, r, d)
        gram = gram - np.einsum("trj,trk->jk", ar, a) / nt
        xty = xty - np.einsum("trj,rt->j", ar, b) / nt
        yty = yty - float(np.einsum("rt,rq,qt->", b, lam_gram_inv, b)) / nt
    gram = (gram + gram.T) / 2.0
    return GramData(gram=gram, xty=xty, yty=yty, n_obs=nt)


def _iterate_core(
    x_panel: np.ndarray,
    y_panel: np.ndarray,
    weights: np.ndarray,
    w3: float,
    r_hat: int,
    lambda_start: np.ndarray,
    opts: SolverOpts,
    beta_start: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """Alternate the concentrated weighted LASSO and the loadings PCA.

    Returns (beta, loadings, factors, converged).
    """
    n, t, d = x_panel.shape
    loadings = lambda_start
    beta = np.zeros(d) if beta_start is None else beta_start.copy()
    converged = False
    for _ in range(max(1, opts.max_outer)):
        gd = _concentrated_gram(x_panel, y_panel, loadings)
        beta_new = fit_weighted_lasso(gd, w3, weights, opts, beta0=beta).beta
        resid = y_panel - x_panel @ beta_new                  # (N, T)
        loadings = _top_eigvec_loadings(resid, r_hat)
        delta = float(np.max(np.abs(beta_new - beta))) if d else 0.0
        beta = beta_new
        if delta < opts.tol:
            converged = True
            break
    resid = y_panel - x_panel @ beta
    factors = resid.T @ loadings / n if r_hat > 0 else np.zeros((t, 0))
    return beta, loadings, factors, converged


def iterate_factor_lasso(
    ds: PanelDataset, init: LowRankFit, w3: float, opts: SolverOpts = SolverOpts()
) -> FactorFit:
    """Stage-2 iterative estimate starting from the stage-1 loadings.

    The penalty weights are g_j = 1(|beta_init_j| < w3); with r_hat = 0 the
    procedure degenerates to a plain weighted LASSO (flagged via
    ``rank_zero``).
    """
    if w3 <= 0:
        raise ValueError("w3 must be positive")
    if init.lambda_init.shape[0] != ds.n_units:
        raise DimensionMismatch("initial loadings do not match the panel")
    weights = (np.abs(init.beta_init) < w3).astype(np.float64)
    beta, loadings, factors, converged = _iterate_core(
        ds.x, ds.y, weights, w3, init.r_hat, init.lambda_init, opts,
        beta_start=init.beta_init,
    )
    return FactorFit(
        beta=beta,
        active_set=tuple(int(j) for j in np.flatnonzero(beta)),
        factors=factors,
        loadings=loadings,
        r_hat=init.r_hat,
        w3=float(w3),
        weights=weights,
        converged=converged,
        rank_zero=init.r_hat == 0,
        n_obs=ds.n_units * ds.n_periods,
    )


def tune_factor_lasso(
    ds: PanelDataset,
    init: LowRankFit,
    grid3: np.ndarray,
    opts: SolverOpts = SolverOpts(),
) -> tuple[float, FactorFit]:
    """Select w3 by the modified BIC RSS/NT + |J| (log NT / NT) log log d of
    the stage-2 fit; ties go to the larger w3."""
    grid3 = np.asarray(grid3, dtype=np.float64)
    if grid3.size == 0:
        raise ValueError("w3 grid is empty")
    n, t, d = ds.x.shape
    nt = n * t
    best = None
    best_score = np.inf
    for w3 in sorted(grid3, reverse=True):
        fit = iterate_factor_lasso(ds, init, float(w3), opts)
        resid = ds.y - ds.x @ fit.beta - fit.loadings @ fit.factors.T
        score = float((resid ** 2).sum()) / nt + bic_penalty_term(
            len(fit.active_set), nt, d
        )
        if score < best_score:
            best_score = score
            best = (float(w3), fit)
    return best


def _threshold_matrix(mat: np.ndarray, u: float) -> np.ndarray:
    return np.where(np.abs(mat) >= u, mat, 0.0)


def _cv_threshold_cov(samples: np.ndarray, grid: np.ndarray) -> float:
    """2-fold CV threshold for a covariance of time-indexed vectors.

    ``samples`` is (T, N); folds are the two time halves, loss is the
    symmetrized Frobenius distance, ties go to the larger u.
    """
    t = samples.shape[0]
    half = t // 2
    s1 = samples[:half]
    s2 = samples[half:]
    cov1 = s1.T @ s1 / s1.shape[0]
    cov2 = s2.T @ s2 / s2.shape[0]
    best_u = None
    best_loss = np.inf
    for u in sorted(float(v) for v in np.asarray(grid, dtype=np.float64)):
        loss = 0.5 * (
            float(((_threshold_matrix(cov1, u) - cov2) ** 2).sum())
            + float(((_threshold_matrix(cov2, u) - cov1) ** 2).sum())
        )
        if loss <= best_loss:
            best_loss = loss
            best_u = u
    return best_u


def _default_cov_grid(cov: np.ndarray, n_points: int = 20) -> np.ndarray:
    off = np.abs(cov - np.diag(np.diag(cov)))
    m = float(off.max())
    if m <= 0.0:
        return np.array([0.0])
    cap = float(np.min(np.abs(np.diag(cov))))
    if cap > 0.0:
        m = min(m, cap)
    return np.geomspace(m * 1e-3, m, n_points)


def _projected_design(
    x_j: np.ndarray, loadings: np.ndarray, factors: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """X_hat_{J,t} (factor-span projected out along time), M X_hat and D.

    x_j is (N, T, |J|); returns (x_tilde, m_x_tilde, d_matrix) with
    d_matrix = sum_t X_hat' M X_hat / NT.
    """
    n, t, k = x_j.shape
    m_proj = _projector_complement(loadings, n)
    if factors.shape[1] > 0:
        f_gram = factors.T @ factors / t                       # (r, r)
        q = factors @ np.linalg.solve(f_gram, factors.T) / t   # (T, T)
        x_tilde = x_j - np.einsum("ts,nsj->ntj", q, x_j)
    else:
        x_tilde = x_j
    m_x = np.einsum("mn,ntj->mtj", m_proj, x_tilde)
    d_matrix = np.einsum("ntj,ntk->jk", x_tilde, m_x) / (n * t)
    d_matrix = (d_matrix + d_matrix.T) / 2.0
    return x_tilde, m_x, d_matrix


def bias_correct(
    ds: PanelDataset,
    fit: FactorFit,
    kernel: KernelSpec | None = None,
    u_omega: float | str = "cv",
    opts: SolverOpts = SolverOpts(),
) -> FactorFit:
    """Stage-3 bias correction.

    Refits the factor regression on the two time halves with the active set
    frozen, forms the jackknife combination 2 b - (b_S1 + b_S2)/2, and
    subtracts the plug-in term mu_zeta / N built from the thresholded
    residual covariance (threshold by 2-fold CV or a fixed level).
    """
    if not fit.active_set:
        raise DimensionMismatch("bias correction needs a nonempty active set")
    n, t = ds.n_units, ds.n_periods
    if t < 4:
        raise DimensionMismatch("need T >= 4 for the half-panel split")
    j_idx = np.asarray(fit.active_set, dtype=np.intp)
    x_j = ds.x[:, :, j_idx]
    beta_j = fit.beta[j_idx]

    # half-panel refits with the support frozen at J
    weights_half = np.full(ds.n_regressors, np.inf)
    weights_half[j_idx] = fit.weights[j_idx]
    half = t // 2
    halves = []
    for sl in (slice(0, half), slice(half, t)):
        beta_h, _, _, _ = _iterate_core(
            ds.x[:, sl, :],
            ds.y[:, sl],
            weights_half,
            fit.w3,
            fit.r_hat,
            fit.loadings,
            opts,
            beta_start=fit.beta,
        )
        halves.append(beta_h[j_idx])
    jackknife = 2.0 * beta_j - (halves[0] + halves[1]) / 2.0

    # residual covariance across units, thresholded
    resid = ds.y - ds.x @ fit.beta - fit.loadings @ fit.factors.T  # (N, T)
    omega_e = resid @ resid.T / t
    if u_omega == "cv":
        grid = _default_cov_grid(omega_e)
        u_val = _cv_threshold_cov(resid.T, grid)
    else:
        u_val = float(u_omega)
        if u_val < 0:
            raise ValueError("threshold must be nonnegative")
    omega_thr = _threshold_matrix(omega_e, u_val)

    if fit.r_hat > 0:
        m_proj = _projector_complement(fit.loadings, n)
        f_gram = fit.factors.T @ fit.factors / t
        _, _, d_matrix = _projected_design(x_j, fit.loadings, fit.factors)
        cond = np.linalg.cond(d_matrix)
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularDJ(f"D(Lambda) condition number {cond:.3e}")
        carrier = m_proj @ omega_thr @ fit.loadings @ np.linalg.solve(
            f_gram, fit.factors.T
        )                                                       # (N, T)
        summand = np.einsum("ntj,nt->j", x_j, carrier) / (n * t)
        mu_zeta = -np.linalg.solve(d_matrix, summand)
    else:
        mu_zeta = np.zeros(j_idx.size)

    beta_bc = jackknife - mu_zeta / n
    return dc_replace(
        fit,
        beta_bc=beta_bc,
        mu_zeta_hat=mu_zeta,
        omega_e=omega_thr,
        omega_threshold=u_val,
        half_panel=(halves[0], halves[1]),
    )


def plugin_variance(
    ds: PanelDataset, fit: FactorFit, kernel: KernelSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Plug-in variance blocks (Sigma_J, Theta_J) for the active set.

    Sigma_J is the projected-design second moment; Theta_J is the kernel
    HAC of the projected score series s_t = X_hat_{J,t}' M e_t / sqrt(N).
    """
    if not fit.active_set:
        raise DimensionMismatch("plug-in variance needs a nonempty active set")
    n, t = ds.n_units, ds.n_periods
    j_idx = np.asarray(fit.active_set, dtype=np.intp)
    x_j = ds.x[:, :, j_idx]
    _, m_x, sigma_j = _projected_design(x_j, fit.loadings, fit.factors)
    try:
        eigvals = np.linalg.eigvalsh(sigma_j)
    except np.linalg.LinAlgError as exc:
        raise SingularSigmaJ(str(exc)) from exc
    if eigvals.min() <= 0:
        raise SingularSigmaJ(
            f"Sigma_J has smallest eigenvalue {eigvals.min():.3e}"
        )
    resid = ds.y - ds.x @ fit.beta - fit.loadings @ fit.factors.T
    scores = np.einsum("ntj,nt->tj", m_x, resid) / math.sqrt(n)    # (T, |J|)
    theta_j = hac(scores, kernel, score_builder="projected factor scores").theta
    return sigma_j, theta_j


@dataclass(frozen=True)
class ExplainedVariance:
    """Pooled variance shares of selected regressors and fitted factors."""

    observable: tuple[tuple[str, float], ...]
    factor: tuple[tuple[str, float], ...]
    total_observable: float
    total_factor: float


def explained_variance(ds: PanelDataset, fit: FactorFit) -> ExplainedVariance:
    """Share of pooled Var(y) carried by each selected regressor's
    contribution x_j * beta_j and by each fitted factor component."""
    var_y = float(ds.y.var())
    if var_y <= 0:
        raise DimensionMismatch("response has zero pooled variance")
    observable = []
    for j in fit.active_set:
        contrib = ds.x[:, :, j] * fit.beta[j]
        observable.append((str(ds.x_names[j]), float(contrib.var()) / var_y))
    factor = []
    for k in range(fit.r_hat):
        contrib = np.outer(fit.loadings[:, k], fit.factors[:, k])
        factor.append((f"f{k + 1}", float(contrib.var()) / var_y))
    return ExplainedVariance(
        observable=tuple(observable),
        factor=tuple(factor),
        total_observable=float(sum(s for _, s in observable)),
        total_factor=float(sum(s for _, s in factor)),
    )
