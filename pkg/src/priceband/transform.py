"""Variance-stabilizing power transform (fit, apply, invert) and the
daily-price principal component model.

The power transform is the Yeo-Johnson family restricted to shape
``eta`` in [0, 2], which keeps it defined for negative and zero prices.
The shape is estimated by maximizing the profile Gaussian log-likelihood
of the transformed sample on a 0.01-step grid followed by golden-section
refinement to 1e-4.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .panel import HOURS, HourlyPanel

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class YjParams:
    """Fitted shape plus the moments of the transformed sample."""

    eta: float
    mu: float
    sigma2: float

    def __post_init__(self):
        if not 0.0 <= self.eta <= 2.0:
            raise ValueError(f"eta must be in [0,2], got {self.eta}")
        if not self.sigma2 > 0.0:
            raise ValueError("sigma2 must be positive")


def yj_apply(eta: float, y):
    """Apply the power transform with shape ``eta`` to ``y`` (scalar or array).

    Piecewise: for y >= 0 the (y+1)^eta branch (log(y+1) at eta=0), for
    y < 0 the mirrored (1-y)^(2-eta) branch (-log(1-y) at eta=2). The map
    is strictly increasing in y and continuous in eta at both seams.
    """
    if not 0.0 <= eta <= 2.0:
        raise ValueError(f"eta must be in [0,2], got {eta}")
    y = np.asarray(y, dtype=np.float64)
    if eta == 1.0:  # both branches collapse to the identity
        out = y.copy()
        return out if out.ndim else float(out)
    out = np.empty_like(y)
    pos = y >= 0
    neg = ~pos
    # expm1/log1p keep the small-|eta| and small-|2-eta| limits exact.
    if eta == 0.0:
        out[pos] = np.log1p(y[pos])
    else:
        out[pos] = np.expm1(eta * np.log1p(y[pos])) / eta
    if eta == 2.0:
        out[neg] = -np.log1p(-y[neg])
    else:
        out[neg] = -np.expm1((2.0 - eta) * np.log1p(-y[neg])) / (2.0 - eta)
    return out if out.ndim else float(out)


def yj_invert(eta: float, z):
    """Invert :func:`yj_apply`; total on finite inputs since the piecewise
    transform is a strictly increasing bijection of the real line.

    z >= 0 inverts the non-negative branch, z < 0 the negative branch.
    """
    if not 0.0 <= eta <= 2.0:
        raise ValueError(f"eta must be in [0,2], got {eta}")
    z = np.asarray(z, dtype=np.float64)
    if np.isnan(z).any():
        raise ValueError("cannot invert non-finite transformed values")
    if eta == 1.0:
        out = z.copy()
        return out if out.ndim else float(out)
    out = np.empty_like(z)
    pos = z >= 0
    neg = ~pos
    with np.errstate(over="ignore"):
        if eta == 0.0:
            out[pos] = np.expm1(z[pos])
        else:
            out[pos] = np.expm1(np.log1p(eta * z[pos]) / eta)
        if eta == 2.0:
            out[neg] = -np.expm1(-z[neg])
        else:
            out[neg] = -np.expm1(np.log1p((eta - 2.0) * z[neg]) / (2.0 - eta))
    return out if out.ndim else float(out)


def _profile_loglik(etas: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Profile log-likelihood of the transformed sample for each eta.

    mu and sigma2 are profiled out at their MLE, so the quadratic term
    collapses to -n/2 and only the variance and Jacobian terms vary.
    """
    n = y.size
    jac = np.sum(np.sign(y) * np.log1p(np.abs(y)))
    ll = np.empty(etas.size)
    for i, eta in enumerate(etas):
        z = yj_apply(float(eta), y)
        var = float(np.mean((z - z.mean()) ** 2))
        if var <= 0.0 or not np.isfinite(var):
            ll[i] = -np.inf
            continue
        ll[i] = -0.5 * n * np.log(2.0 * np.pi) - 0.5 * n * np.log(var) \
            - 0.5 * n + (eta - 1.0) * jac
    return ll


def yj_fit(y, grid_step: float = 0.01, refine_tol: float = 1e-4) -> YjParams:
    """Estimate the transform shape by profile maximum likelihood.

    Dense grid over [0, 2] with step ``grid_step``, then golden-section
    refinement of the bracketing interval down to ``refine_tol``. A
    degenerate (constant) sample falls back to the identity shape eta=1
    with a warning.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size < 10:
        raise ValueError(f"need at least 10 observations, got {y.size}")
    if np.ptp(y) == 0.0:
        warnings.warn("constant sample: falling back to identity transform")
        return YjParams(eta=1.0, mu=float(y[0]), sigma2=1.0)

    etas = np.arange(0.0, 2.0 + grid_step / 2, grid_step)
    ll = _profile_loglik(etas, y)
    k = int(np.argmax(ll))
    lo = etas[max(k - 1, 0)]
    hi = etas[min(k + 1, etas.size - 1)]

    # Golden-section on the bracketing interval.
    a, b = float(lo), float(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = _profile_loglik(np.array([c]), y)[0]
    fd = _profile_loglik(np.array([d]), y)[0]
    while b - a > refine_tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = _profile_loglik(np.array([c]), y)[0]
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = _profile_loglik(np.array([d]), y)[0]
    eta = 0.5 * (a + b)

    z = yj_apply(eta, y)
    mu = float(z.mean())
    sigma2 = float(np.mean((z - mu) ** 2))
    if sigma2 <= 0.0:
        warnings.warn("transformed sample degenerate: using identity shape")
        return YjParams(eta=1.0, mu=float(y.mean()), sigma2=1.0)
    return YjParams(eta=float(eta), mu=mu, sigma2=sigma2)


@dataclass(frozen=True)
class PcaModel:
    """Hour means and orthonormal loading columns of the daily price vectors.

    Columns are ordered by descending explained variance; each column's
    largest-magnitude entry is made positive to pin the eigenvector sign.
    ``rank`` tracks how many informative components were available (scores
    beyond it are padded with zeros).
    """

    hour_means: np.ndarray
    loadings: np.ndarray
    explained_variance: np.ndarray
    rank: int

    def __post_init__(self):
        for name in ("hour_means", "loadings", "explained_variance"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)


def pca_fit(panel: HourlyPanel, window: range, n_components: int = 3) -> PcaModel:
    """Eigendecompose the covariance of the window's daily 24-hour price
    vectors and keep the leading components.

    Raw (untransformed) prices are used; all 24 hours share units so the
    covariance, not the correlation, is the right matrix. If fewer than
    ``n_components`` directions carry variance the model keeps what is
    available and warns; projections pad the missing scores with zeros.
    """
    days = list(window)
    if len(days) < HOURS:
        raise ValueError(
            f"window of {len(days)} days is too short for a {HOURS}x{HOURS} covariance"
        )
    x = panel.prices[days, :]
    means = x.mean(axis=0)
    centered = x - means
    cov = centered.T @ centered / (len(days) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]

    tol = max(evals[0], 0.0) * 1e-12
    rank = int(np.sum(evals > max(tol, 0.0)))
    kept = min(n_components, max(rank, 0))
    if kept < n_components:
        warnings.warn(
            f"price covariance has rank {rank}; padding {n_components - kept} "
            "component scores with zeros"
        )
    loadings = np.zeros((HOURS, n_components))
    variance = np.zeros(n_components)
    for k in range(kept):
        col = evecs[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            col = -col
        loadings[:, k] = col
        variance[k] = max(evals[k], 0.0)
    return PcaModel(
        hour_means=means,
        loadings=loadings,
        explained_variance=variance,
        rank=kept,
    )


def pca_project(model: PcaModel, day_prices: np.ndarray) -> np.ndarray:
    """Scores of one day's 24 prices: loadings' (day - hour_means)."""
    day_prices = np.asarray(day_prices, dtype=np.float64)
    if day_prices.shape != (HOURS,):
        raise ValueError(f"expected a length-{HOURS} price vector")
    return model.loadings.T @ (day_prices - model.hour_means)
