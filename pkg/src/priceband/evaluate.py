"""Scoring: coverage, interval width, the Winkler score, pinball loss,
per-percentile coverage deviations, and the likelihood-ratio coverage
tests (unconditional, independence, conditional).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .panel import HitSeries


def winkler(y: float, lower: float, upper: float, alpha: float) -> float:
    """Interval width plus a (2/alpha)-scaled penalty for misses.

    Inside the interval the score is the width B = upper - lower; a miss
    adds (2/alpha) times the distance to the violated bound.
    """
    if not lower <= upper:
        raise ValueError(f"bounds out of order: [{lower}, {upper}]")
    width = upper - lower
    if y < lower:
        return width + (2.0 / alpha) * (lower - y)
    if y > upper:
        return width + (2.0 / alpha) * (y - upper)
    return width


def pinball(q: float, y: float, tau: float) -> float:
    """Asymmetric linear loss of quantile estimate ``q`` against ``y``."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0,1), got {tau}")
    if y < q:
        return (1.0 - tau) * (q - y)
    return tau * (y - q)


def coverage(hits: HitSeries | np.ndarray) -> float:
    """Mean of the binary hit indicators."""
    arr = hits.hits if isinstance(hits, HitSeries) else np.asarray(hits)
    if arr.size == 0:
        raise ValueError("empty hit series")
    return float(np.mean(arr))


def _xlogy(x: float, y: float) -> float:
    """x * log(y) with the 0 * log 0 = 0 convention."""
    if x == 0.0:
        return 0.0
    return x * math.log(y)


@dataclass(frozen=True)
class ChristoffersenResult:
    """Likelihood-ratio statistics and p-values for one hourly hit series.

    ``lr_cc`` is constructed as ``lr_uc + lr_ind`` (chi-square df 2); the
    degenerate flag marks series where a maximum-likelihood cell was empty
    and the 0 log 0 convention was applied.
    """

    lr_uc: float
    lr_ind: float
    lr_cc: float
    p_uc: float
    p_ind: float
    p_cc: float
    degenerate: bool


def christoffersen(hits: HitSeries | np.ndarray, p: float,
                   min_length: int = 30) -> ChristoffersenResult:
    """Coverage tests on one hour's hit series against nominal rate ``p``.

    LR_uc tests the unconditional hit rate, LR_ind the first-order Markov
    dependence of consecutive hits, and LR_cc is their sum. All three are
    referred to chi-square distributions with 1, 1 and 2 degrees of
    freedom.
    """
    arr = hits.hits if isinstance(hits, HitSeries) else np.asarray(hits)
    arr = np.asarray(arr, dtype=np.int8).ravel()
    n = arr.size
    if n < min_length:
        raise ValueError(f"hit series of length {n} is too short (< {min_length})")
    if not 0.0 < p < 1.0:
        raise ValueError(f"nominal coverage must be in (0,1), got {p}")

    n1 = int(arr.sum())
    n0 = n - n1
    pi_hat = n1 / n
    lr_uc = -2.0 * (
        _xlogy(n1, p) + _xlogy(n0, 1.0 - p)
        - _xlogy(n1, pi_hat if pi_hat > 0 else 1.0)
        - _xlogy(n0, 1.0 - pi_hat if pi_hat < 1 else 1.0)
    )

    prev, cur = arr[:-1], arr[1:]
    n00 = int(np.sum((prev == 0) & (cur == 0)))
    n01 = int(np.sum((prev == 0) & (cur == 1)))
    n10 = int(np.sum((prev == 1) & (cur == 0)))
    n11 = int(np.sum((prev == 1) & (cur == 1)))
    n_trans = n00 + n01 + n10 + n11
    pi2 = (n01 + n11) / n_trans
    pi01 = n01 / (n00 + n01) if (n00 + n01) else 0.0
    pi11 = n11 / (n10 + n11) if (n10 + n11) else 0.0
    degenerate = (
        n0 == 0 or n1 == 0
        or (n00 + n01) == 0 or (n10 + n11) == 0
        or pi01 in (0.0, 1.0) or pi11 in (0.0, 1.0)
        or pi2 in (0.0, 1.0)
    )

    def safe(v: float) -> float:
        return v if v > 0 else 1.0

    log_null = _xlogy(n01 + n11, safe(pi2)) + _xlogy(n00 + n10, safe(1.0 - pi2))
    log_alt = (
        _xlogy(n01, safe(pi01)) + _xlogy(n00, safe(1.0 - pi01))
        + _xlogy(n11, safe(pi11)) + _xlogy(n10, safe(1.0 - pi11))
    )
    lr_ind = -2.0 * (log_null - log_alt)

    lr_uc = max(lr_uc, 0.0)
    lr_ind = max(lr_ind, 0.0)
    lr_cc = lr_uc + lr_ind
    return ChristoffersenResult(
        lr_uc=lr_uc,
        lr_ind=lr_ind,
        lr_cc=lr_cc,
        p_uc=float(stats.chi2.sf(lr_uc, df=1)),
        p_ind=float(stats.chi2.sf(lr_ind, df=1)),
        p_cc=float(stats.chi2.sf(lr_cc, df=2)),
        degenerate=degenerate,
    )


def coverage_deviation_curve(
    quantiles_by_percentile: dict[int, np.ndarray],
    realized: np.ndarray,
) -> dict[int, float]:
    """Empirical-minus-nominal frequency per one-sided percentile.

    Input maps percentile (5, 10, ..., 95 without 50) to the quantile
    forecasts aligned with ``realized``. Deviation at p is the fraction of
    realizations strictly below the forecast minus p/100. The 50 slot,
    never computed directly, is filled by linear interpolation of its
    neighbours.
    """
    realized = np.asarray(realized, dtype=np.float64)
    expected = [p for p in range(5, 100, 5) if p != 50]
    if sorted(quantiles_by_percentile) != expected:
        raise ValueError(
            "percentile grid must be 5..95 in steps of 5 with 50 excluded"
        )
    out: dict[int, float] = {}
    for p, q in quantiles_by_percentile.items():
        q = np.asarray(q, dtype=np.float64)
        if q.shape != realized.shape:
            raise ValueError(f"percentile {p}: shape mismatch with realized")
        out[p] = float(np.mean(realized < q)) - p / 100.0
    out[50] = 0.5 * (out[45] + out[55])
    return dict(sorted(out.items()))
