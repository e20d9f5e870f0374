"""Quantile regression averaging: per (hour, tau), weights over the
point-forecast vector minimizing the pinball loss.

The minimization is the classic split-variable linear program. It is
solved in-repo on the box-constrained dual

    max y'a   s.t.  X'a = (1 - tau) X'1,   0 <= a <= 1,

with a Mehrotra predictor-corrector interior-point method whose equality
multiplier is (minus) the coefficient vector, followed by a vertex polish
that re-solves the interpolated rows exactly. No external solver is used.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .panel import IntervalForecast


def pinball_loss(residuals, tau: float):
    """rho_tau(z) = (tau - 1{z<0}) z, elementwise."""
    z = np.asarray(residuals, dtype=np.float64)
    return np.where(z >= 0, tau * z, (tau - 1.0) * z)


def pinball_objective(x: np.ndarray, y: np.ndarray, coef: np.ndarray, tau: float) -> float:
    return float(pinball_loss(y - x @ coef, tau).sum())


def _solve_spd(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a (nominally) positive-definite system, escalating a diagonal
    jitter when collinear forecast columns make it numerically singular."""
    scale = max(float(np.trace(lhs)) / lhs.shape[0], 1e-300)
    jitter = 0.0
    eye = np.eye(lhs.shape[0])
    for _ in range(8):
        try:
            return np.linalg.solve(lhs + jitter * eye, rhs)
        except np.linalg.LinAlgError:
            jitter = max(jitter * 100.0, 1e-14 * scale)
    return np.linalg.lstsq(lhs, rhs, rcond=None)[0]


def _qr_interior_point(
    x: np.ndarray,
    y: np.ndarray,
    tau: float,
    max_iter: int = 200,
    tol: float = 1e-11,
) -> np.ndarray:
    """Frisch-Newton style IPM on the quantile-regression dual.

    Box LP: min c'a s.t. X'a = b, 0 <= a <= 1 with c = -y and
    b = (1-tau) X'1. The equality multiplier converges to -beta_hat.
    The starting point a = (1-tau) 1 is exactly feasible, so primal and
    dual residuals stay at roundoff and only complementarity is driven
    to zero.
    """
    n, p = x.shape
    at = x.T
    b = (1.0 - tau) * at.sum(axis=1)
    c = -y

    a = np.full(n, 1.0 - tau)
    s = np.full(n, tau)
    lam = np.zeros(p)
    shift = 1.0 + 0.1 * float(np.abs(y).max(initial=0.0))
    z = np.maximum(c, 0.0) + shift
    m = z - c  # keeps X lam + z - m = c exact at lam = 0

    e_scale = 1.0 + abs(float(b @ b)) ** 0.5
    for _ in range(max_iter):
        mu = (a @ z + s @ m) / (2 * n)
        r_b = b - at @ a
        r_u = 1.0 - a - s
        r_c = c - x @ lam - z + m
        if mu < tol and np.abs(r_b).max() < tol * e_scale \
                and np.abs(r_c).max() < tol * e_scale:
            break

        d = 1.0 / (z / a + m / s)

        def solve_kkt(rxz, rsm):
            rhs_x = r_c - rxz / a + rsm / s - (m / s) * r_u
            lhs = (at * d) @ x
            rhs = r_b + at @ (d * rhs_x)
            dlam = _solve_spd(lhs, rhs)
            da = d * (x @ dlam - rhs_x)
            ds = r_u - da
            dz = (rxz - z * da) / a
            dm = (rsm - m * ds) / s
            return da, ds, dlam, dz, dm

        def max_step(v, dv):
            neg = dv < 0
            if not neg.any():
                return 1.0
            return min(1.0, float(np.min(-v[neg] / dv[neg])))

        # Affine-scaling predictor.
        da, ds, dlam, dz, dm = solve_kkt(-a * z, -s * m)
        ap = min(max_step(a, da), max_step(s, ds))
        ad = min(max_step(z, dz), max_step(m, dm))
        mu_aff = ((a + ap * da) @ (z + ad * dz) + (s + ap * ds) @ (m + ad * dm)) / (2 * n)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # Corrector with centering.
        da, ds, dlam, dz, dm = solve_kkt(
            -a * z - da * dz + sigma * mu,
            -s * m - ds * dm + sigma * mu,
        )
        ap = 0.9995 * min(max_step(a, da), max_step(s, ds))
        ad = 0.9995 * min(max_step(z, dz), max_step(m, dm))
        a += ap * da
        s += ap * ds
        lam += ad * dlam
        z += ad * dz
        m += ad * dm

    return -lam


def _polish_vertex(x: np.ndarray, y: np.ndarray, tau: float, coef: np.ndarray) -> np.ndarray:
    """Snap to the optimal vertex: a quantile-regression optimum
    interpolates p observations, so re-solve the p smallest-residual rows
    exactly and keep the result when it does not worsen the objective."""
    n, p = x.shape
    if n < p:
        return coef
    resid = np.abs(y - x @ coef)
    cand = np.argsort(resid, kind="stable")[:p]
    try:
        exact = np.linalg.solve(x[cand], y[cand])
    except np.linalg.LinAlgError:
        exact, *_ = np.linalg.lstsq(x[cand], y[cand], rcond=None)
    before = pinball_objective(x, y, coef, tau)
    after = pinball_objective(x, y, exact, tau)
    if after <= before + 1e-9 * (1.0 + abs(before)):
        return exact
    return coef


@dataclass(frozen=True)
class QraModel:
    """Weights over the forecaster columns plus the unweighted intercept."""

    tau: float
    weights: np.ndarray
    intercept: float
    objective: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def qra_fit(
    forecasts: np.ndarray,
    y: np.ndarray,
    tau: float,
    intercept: bool = True,
) -> QraModel:
    """Fit tau-quantile weights over the point-forecast columns.

    ``forecasts`` is (days, n_models); an intercept column is appended
    unless disabled. Collinear forecast columns still solve but trigger a
    non-unique-optimum warning. Fewer than 10 rows per column is warned
    about; fewer rows than columns is an error.
    """
    f = np.atleast_2d(np.asarray(forecasts, dtype=np.float64))
    if f.shape[0] == 1 and np.asarray(y).size != 1:
        f = f.T
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.size
    if f.shape[0] != n:
        raise ValueError("forecast rows must match the target length")
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0,1), got {tau}")
    design = np.hstack([f, np.ones((n, 1))]) if intercept else f
    p = design.shape[1]
    if p == 0:
        raise ValueError("nothing to fit: no forecast columns and no intercept")
    if n < p + 1:
        raise ValueError(f"{n} rows cannot identify {p} coefficients")
    if n < 10 * p:
        warnings.warn(
            f"only {n} rows for {p} coefficients; quantile weights may be noisy"
        )
    if np.linalg.matrix_rank(design) < p:
        warnings.warn("collinear forecast columns: optimum may be non-unique")

    coef = _qr_interior_point(design, y, tau)
    coef = _polish_vertex(design, y, tau, coef)
    obj = pinball_objective(design, y, coef, tau)
    if intercept:
        return QraModel(tau=tau, weights=coef[:-1], intercept=float(coef[-1]),
                        objective=obj)
    return QraModel(tau=tau, weights=coef, intercept=0.0, objective=obj)


def qra_predict(model: QraModel, forecast_row) -> float:
    """weights . forecasts + intercept."""
    row = np.asarray(forecast_row, dtype=np.float64).ravel()
    if row.size != model.weights.size:
        raise ValueError(
            f"expected {model.weights.size} forecasts, got {row.size}"
        )
    return float(model.weights @ row + model.intercept)


def qra_interval(
    lower_model: QraModel,
    upper_model: QraModel,
    forecast_row,
    *,
    day: int = 0,
    hour: int = 0,
    model_tag: str = "qra",
) -> IntervalForecast:
    """Two-sided interval from independently fitted bound quantiles.

    The models must sit at tau = alpha/2 and 1 - alpha/2 of the same
    alpha. Quantile crossing is swapped and flagged. The recorded center
    is the interval midpoint (no point forecast exists for this model).
    """
    t_lo, t_hi = lower_model.tau, upper_model.tau
    alpha = 2.0 * t_lo
    if abs((1.0 - t_hi) - t_lo) > 1e-12:
        raise ValueError(
            f"bound quantiles {t_lo} and {t_hi} do not match one alpha"
        )
    lower = qra_predict(lower_model, forecast_row)
    upper = qra_predict(upper_model, forecast_row)
    crossed = lower > upper
    if crossed:
        warnings.warn(f"qra: crossing bounds at alpha={alpha}; swapped and flagged")
        lower, upper = upper, lower
    return IntervalForecast(
        day=day, hour=hour, alpha=alpha,
        lower=lower, upper=upper, center=0.5 * (lower + upper),
        model_tag=model_tag, crossed=crossed,
    )
