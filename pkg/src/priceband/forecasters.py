"""Point-forecast engines behind one contract: fit(matrix, targets) then
predict(rows). The same engines double as the error models of the
normalized conformal pipeline.

The penalized linear model minimizes RSS + zeta * sum|beta_j| (intercept
unpenalized) by cyclic coordinate descent on the Gram matrix, solved
jointly for the whole penalty grid. Nearest-neighbour and naive engines
are exact and deterministic. The epsilon-insensitive RBF support vector
engine is backed by scikit-learn's SMO solver with the iteration cap and
current-iterate-on-cap behaviour this artifact requires; its dual output
is exposed so feasibility and KKT conditions can be checked directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import SVR

from .panel import HourlyPanel

DEFAULT_LASSO_GRID = tuple(np.round(np.arange(1, 101) * 0.001, 3))


@dataclass(frozen=True)
class ForecasterSpec:
    """Engine kind plus the hyper-parameters each kind reads."""

    kind: str
    lasso_grid: tuple[float, ...] = DEFAULT_LASSO_GRID
    cv_folds: int = 2
    knn_k: int = 50
    svr_sigma: float = 0.005
    svr_c: float = 1.25
    svr_epsilon: float = 0.1
    svr_max_iter: int = 1000

    def __post_init__(self):
        if self.kind not in ("naive", "lasso", "knn", "svr"):
            raise ValueError(f"unknown forecaster kind {self.kind!r}")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.svr_c <= 0:
            raise ValueError("svr_c must be positive")
        if not self.lasso_grid:
            raise ValueError("lasso grid must be non-empty")


def naive_predict(panel: HourlyPanel, t: int, h: int) -> float:
    """Similar-day rule: yesterday's same-hour price on Tue-Fri, last
    week's on Sat/Sun/Mon."""
    if t < 7:
        raise ValueError(f"day index {t} lacks the lag-7 history the rule needs")
    dow = panel.day_of_week(t)  # Monday=0 .. Sunday=6
    lag = 1 if dow in (1, 2, 3, 4) else 7
    return float(panel.prices[t - lag, h])


@njit(cache=True)
def _cd_path_kernel(gram, corr, zetas, tol, max_sweeps, betas):  # pragma: no cover
    """Cyclic coordinate descent over the whole penalty path.

    ``gram`` = X'X, ``corr`` = X'y, ``betas`` (p, n_zeta) updated in place.
    Each zeta warm-starts from the previous one; every coordinate update
    solves its one-dimensional subproblem exactly, so the objective is
    non-increasing sweep over sweep. Columns with zero norm stay at zero.
    Returns the total sweep count.
    """
    p, nz = betas.shape
    total = 0
    for z in range(nz):
        if z > 0:
            for j in range(p):
                betas[j, z] = betas[j, z - 1]
        half = 0.5 * zetas[z]
        for _ in range(max_sweeps):
            delta = 0.0
            for j in range(p):
                gjj = gram[j, j]
                if gjj <= 0.0:
                    continue
                s = 0.0
                for k in range(p):
                    s += gram[j, k] * betas[k, z]
                r = corr[j] - s + gjj * betas[j, z]
                if r > half:
                    new = (r - half) / gjj
                elif r < -half:
                    new = (r + half) / gjj
                else:
                    new = 0.0
                d = abs(new - betas[j, z])
                if d > delta:
                    delta = d
                betas[j, z] = new
            total += 1
            if delta < tol:
                break
    return total


def _lasso_solve_path(
    x: np.ndarray,
    y: np.ndarray,
    zetas: np.ndarray,
    intercept_index: int | None,
    standardize: bool,
    tol: float,
    max_sweeps: int,
):
    """Solve the penalized problem for every zeta; returns (betas (p, nz)
    on the original scale, total sweeps).

    When an intercept column is present it is absorbed exactly: the
    penalized columns and the target are centered, the reduced problem is
    solved, and the intercept is recovered from the means. This leaves the
    minimizer unchanged (the intercept is unpenalized) while conditioning
    the Gram matrix far better than raw price-level columns would.
    """
    n, p = x.shape
    cols = [j for j in range(p) if j != intercept_index]
    xp = x[:, cols]
    if intercept_index is not None:
        c = x[:, intercept_index]
        if np.ptp(c) != 0.0:
            raise ValueError("intercept column must be constant")
        c0 = float(c[0])
        if c0 == 0.0:
            raise ValueError("intercept column is identically zero")
        center = xp.mean(axis=0)
        y_off = float(y.mean())
    else:
        c0 = 0.0
        center = np.zeros(len(cols))
        y_off = 0.0
    xc = xp - center
    scale = np.ones(len(cols))
    if standardize:
        sd = xc.std(axis=0)
        scale = np.where(sd > 0.0, sd, 1.0)
    xs = xc / scale

    betas_std = np.zeros((len(cols), zetas.size))
    sweeps = int(_cd_path_kernel(
        np.ascontiguousarray(xs.T @ xs),
        np.ascontiguousarray(xs.T @ (y - y_off)),
        np.ascontiguousarray(zetas, dtype=np.float64),
        tol, max_sweeps, betas_std,
    ))
    betas = np.zeros((p, zetas.size))
    betas[cols, :] = betas_std / scale[:, None]
    if intercept_index is not None:
        betas[intercept_index, :] = (y_off - center @ betas[cols, :]) / c0
    return betas, sweeps


@dataclass(frozen=True)
class FittedLasso:
    beta: np.ndarray            # on the original (un-standardized) scale
    zeta: float
    cv_mse: np.ndarray | None = None
    grid: tuple[float, ...] = ()
    n_sweeps: int = 0

    def predict(self, x: np.ndarray) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        out = x @ self.beta
        return out if out.ndim else float(out)


def lasso_fit(
    x: np.ndarray,
    y: np.ndarray,
    grid=None,
    cv_folds: int = 2,
    intercept_index: int | None = 0,
    standardize: bool = True,
    zeta: float | None = None,
    tol: float = 1e-7,
    max_sweeps: int = 10_000,
) -> FittedLasso:
    """Fit the penalized linear model, selecting the penalty by two-fold
    cross-validation over ``grid`` unless ``zeta`` pins it.

    The folds are the contiguous halves of the rows in the order given;
    the score is validation MSE averaged over both directions, ties going
    to the smaller penalty. With ``standardize`` the penalty acts on
    unit-variance columns and coefficients are mapped back afterwards;
    the intercept column is never penalized or rescaled.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = x.shape
    if y.size != n:
        raise ValueError("row count mismatch between matrix and targets")
    if intercept_index is not None and not 0 <= intercept_index < p:
        raise ValueError("intercept index out of range")

    if zeta is not None:
        zetas = np.array([float(zeta)])
        cv_mse = None
        grid_out = (float(zeta),)
    else:
        zetas = np.sort(np.asarray(
            grid if grid is not None else DEFAULT_LASSO_GRID, dtype=np.float64
        ))
        grid_out = tuple(zetas)
        cv_mse = None
        if zetas.size > 1:
            if cv_folds != 2:
                raise ValueError(
                    "only the two-fold contiguous-halves split is supported"
                )
            half = n // 2
            folds = ((slice(0, half), slice(half, n)),
                     (slice(half, n), slice(0, half)))
            mse = np.zeros(zetas.size)
            for fit_rows, val_rows in folds:
                betas, _ = _lasso_solve_path(
                    x[fit_rows], y[fit_rows], zetas,
                    intercept_index, standardize, tol, max_sweeps,
                )
                resid = y[val_rows, None] - x[val_rows] @ betas
                mse += np.mean(resid**2, axis=0)
            mse /= len(folds)
            cv_mse = mse
            zetas = zetas[int(np.argmin(mse)):][:1]

    betas, sweeps = _lasso_solve_path(
        x, y, zetas, intercept_index, standardize, tol, max_sweeps
    )
    return FittedLasso(
        beta=betas[:, 0],
        zeta=float(zetas[0]),
        cv_mse=cv_mse,
        grid=grid_out,
        n_sweeps=sweeps,
    )


def lasso_cd_trace(x, y, zeta, tol=1e-7, max_sweeps=10_000):
    """Plain-python single-penalty coordinate descent (no intercept
    handling, no scaling) returning the objective after each sweep; used
    to check the monotone-descent property of the update rule."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    p = x.shape[1]
    gram = x.T @ x
    corr = x.T @ y
    beta = np.zeros(p)
    objectives = []
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            gjj = gram[j, j]
            if gjj <= 0.0:
                continue
            r = corr[j] - gram[j] @ beta + gjj * beta[j]
            new = np.sign(r) * max(abs(r) - zeta / 2.0, 0.0) / gjj
            delta = max(delta, abs(new - beta[j]))
            beta[j] = new
        resid = y - x @ beta
        objectives.append(float(resid @ resid + zeta * np.abs(beta).sum()))
        if delta < tol:
            break
    return beta, objectives


@dataclass(frozen=True)
class FittedKnn:
    x: np.ndarray
    y: np.ndarray
    k: int

    def predict(self, q: np.ndarray) -> np.ndarray | float:
        q = np.asarray(q, dtype=np.float64)
        single = q.ndim == 1
        rows = q[None, :] if single else q
        out = np.empty(rows.shape[0])
        for i, row in enumerate(rows):
            d2 = np.sum((self.x - row) ** 2, axis=1)
            # Stable argsort breaks distance ties toward the lower row index.
            nearest = np.argsort(d2, kind="stable")[: self.k]
            out[i] = self.y[nearest].mean()
        return float(out[0]) if single else out


def knn_fit(x: np.ndarray, y: np.ndarray, k: int) -> FittedKnn:
    """Store the training set for exact brute-force neighbour search."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > x.shape[0]:
        raise ValueError(f"k={k} exceeds the {x.shape[0]} training rows")
    return FittedKnn(x=x, y=y, k=int(k))


def knn_predict(model: FittedKnn, q: np.ndarray):
    return model.predict(q)


@dataclass(frozen=True)
class FittedSvr:
    model: SVR = field(repr=False)
    converged: bool

    @property
    def dual_coef(self) -> np.ndarray:
        """(alpha_i - alpha_i*) for the support rows; in [-C, C]."""
        return self.model.dual_coef_.ravel()

    @property
    def support(self) -> np.ndarray:
        return self.model.support_

    @property
    def bias(self) -> float:
        return float(self.model.intercept_[0])

    def predict(self, q: np.ndarray) -> np.ndarray | float:
        q = np.asarray(q, dtype=np.float64)
        single = q.ndim == 1
        out = self.model.predict(q[None, :] if single else q)
        return float(out[0]) if single else out


def svr_fit(x: np.ndarray, y: np.ndarray, spec: ForecasterSpec) -> FittedSvr:
    """Epsilon-insensitive support vector regression with the RBF kernel
    k(u, v) = exp(-sigma ||u - v||^2), solved by SMO capped at
    ``svr_max_iter`` iterations. Hitting the cap warns and returns the
    current (still dual-feasible) iterate.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape[0] < 2:
        raise ValueError("need at least 2 rows to fit the support vector engine")
    svr = SVR(
        kernel="rbf",
        gamma=spec.svr_sigma,
        C=spec.svr_c,
        epsilon=spec.svr_epsilon,
        max_iter=spec.svr_max_iter,
        tol=1e-3,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        svr.fit(x, y)
    converged = int(getattr(svr, "fit_status_", 0)) == 0
    if not converged:
        warnings.warn(
            f"SMO hit the {spec.svr_max_iter}-iteration cap; returning current iterate"
        )
    return FittedSvr(model=svr, converged=converged)


def svr_predict(model: FittedSvr, q: np.ndarray):
    return model.predict(q)


def rbf_kernel(u: np.ndarray, v: np.ndarray, sigma: float) -> np.ndarray:
    """exp(-sigma ||u - v||^2) for row pairs; the kernel the SMO solves with."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    d2 = ((u[:, None, :] - v[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-sigma * d2)
