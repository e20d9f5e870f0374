"""Interval constructors: the split-conformal rank rule and its
normalized extension, the empirical-error-quantile baseline, and the
eight-node symmetry/sampling/normalization lattice that connects them.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .panel import IntervalForecast

NORMALIZER_ABS_FLOOR = 1e-6
NORMALIZER_REL_FLOOR = 0.01


def icp_threshold(scores, alpha: float) -> float:
    """Smallest nonconformity value whose rank satisfies the coverage
    condition (#{scores below it} + 1) / (n + 1) >= 1 - alpha.

    Equivalently the ceil((1 - alpha) * (n + 1))-th order statistic, which
    always stems from the score set itself. Ties share the rank of their
    last occurrence, which keeps the coverage guarantee intact for
    duplicated scores. When even the largest score cannot satisfy the
    condition (alpha below the 1/(n+1) resolution) the +inf sentinel is
    returned, signalling an unbounded interval; when the condition is met
    at rank <= 1 the zero candidate qualifies first.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = scores.size
    if n == 0:
        raise ValueError("cannot compute a threshold from an empty score set")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    if (scores < 0).any():
        raise ValueError("nonconformity scores must be non-negative")
    k = math.ceil((1.0 - alpha) * (n + 1))
    if k > n:
        return math.inf
    if k <= 1:
        return 0.0
    return float(np.sort(scores)[k - 1])


def icp_interval(
    y_hat: float,
    threshold: float,
    *,
    day: int = 0,
    hour: int = 0,
    alpha: float,
    model_tag: str = "icp",
) -> IntervalForecast:
    """Symmetric interval [y_hat - threshold, y_hat + threshold].

    The +inf sentinel produces an unbounded interval, flagged so scoring
    can exclude it from width statistics while counting it as covering.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    if math.isinf(threshold):
        return IntervalForecast(
            day=day, hour=hour, alpha=alpha,
            lower=-math.inf, upper=math.inf, center=float(y_hat),
            model_tag=model_tag, unbounded=True,
        )
    return IntervalForecast(
        day=day, hour=hour, alpha=alpha,
        lower=float(y_hat) - threshold, upper=float(y_hat) + threshold,
        center=float(y_hat), model_tag=model_tag,
    )


def floor_normalizers(norms: np.ndarray, calib_norms: np.ndarray) -> np.ndarray:
    """Clamp estimated-error magnitudes away from zero.

    The floor is max(1e-6, 1% of the median calibration magnitude), which
    prevents the normalized score from blowing up when the error model
    predicts a near-zero error.
    """
    calib_norms = np.abs(np.asarray(calib_norms, dtype=np.float64))
    floor = max(NORMALIZER_ABS_FLOOR,
                NORMALIZER_REL_FLOOR * float(np.median(calib_norms)))
    return np.maximum(np.abs(np.asarray(norms, dtype=np.float64)), floor)


def normalized_scores(errors, norm_estimates) -> tuple[np.ndarray, np.ndarray]:
    """|error| / floored |estimated error| for the calibration set.

    Returns (scores, floored normalizers); the same floor must be applied
    to the query-time normalizer, see :func:`floor_normalizers`.
    """
    errors = np.abs(np.asarray(errors, dtype=np.float64))
    norms = floor_normalizers(norm_estimates, norm_estimates)
    return errors / norms, norms


def ncp_interval(
    y_hat: float,
    threshold: float,
    norm_estimate: float,
    *,
    day: int = 0,
    hour: int = 0,
    alpha: float,
    model_tag: str = "ncp",
) -> IntervalForecast:
    """[y_hat -/+ threshold * |estimated error|]: the symmetric rank-rule
    interval rescaled by the query point's predicted difficulty.

    ``threshold`` must come from normalized scores and ``norm_estimate``
    must already carry the calibration floor.
    """
    if norm_estimate <= 0:
        raise ValueError("normalizer must be positive (was it floored?)")
    if math.isinf(threshold):
        return IntervalForecast(
            day=day, hour=hour, alpha=alpha,
            lower=-math.inf, upper=math.inf, center=float(y_hat),
            model_tag=model_tag, unbounded=True,
        )
    half = threshold * float(norm_estimate)
    return IntervalForecast(
        day=day, hour=hour, alpha=alpha,
        lower=float(y_hat) - half, upper=float(y_hat) + half,
        center=float(y_hat), model_tag=model_tag,
    )


def empirical_interval(
    abs_errors,
    alpha: float,
    y_hat: float,
    *,
    day: int = 0,
    hour: int = 0,
    model_tag: str = "empirical",
    min_errors: int = 20,
) -> IntervalForecast:
    """y_hat +/- the (1 - alpha) sample quantile of in-sample absolute
    errors (type-7 interpolation). The model-agnostic baseline every other
    constructor has to beat.
    """
    abs_errors = np.asarray(abs_errors, dtype=np.float64).ravel()
    if abs_errors.size < min_errors:
        raise ValueError(
            f"need at least {min_errors} errors, got {abs_errors.size}"
        )
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    q = float(np.quantile(np.abs(abs_errors), 1.0 - alpha))
    return IntervalForecast(
        day=day, hour=hour, alpha=alpha,
        lower=float(y_hat) - q, upper=float(y_hat) + q,
        center=float(y_hat), model_tag=model_tag,
    )


@dataclass(frozen=True)
class LatticeVariant:
    """One node of the symmetry x sampling x normalization cube."""

    symmetric: bool
    sampled: bool
    normalized: bool

    @property
    def tag(self) -> str:
        return _NODE_TAGS[(self.symmetric, self.sampled, self.normalized)]


# Node names as used in the path-dependent evaluation.
_NODE_TAGS = {
    (False, False, False): "asymmetric quantiles",
    (False, True, False): "quantiles - sampled",
    (False, False, True): "quantiles - normalized",
    (True, False, False): "quantiles - symmetric",
    (True, True, False): "Conformal Prediction",
    (False, True, True): "quantiles - norm-sampled",
    (True, False, True): "quantiles norm-symmetric",
    (True, True, True): "Normalized Conformal Prediction",
}

ALL_VARIANTS = tuple(
    LatticeVariant(s, p, n)
    for s in (False, True)
    for p in (False, True)
    for n in (False, True)
)


@dataclass(frozen=True)
class LatticeContext:
    """Everything a lattice node can need, prepared once per query point.

    Full-sample quantities feed the non-sampled nodes, split quantities
    the sampled ones. Signed errors are y - y_hat. Normalizer arrays must
    be the raw |estimated error| magnitudes (flooring happens here).
    """

    center_full: float
    center_split: float
    insample_errors: np.ndarray
    calib_errors: np.ndarray
    insample_norms: np.ndarray | None = None
    calib_norms: np.ndarray | None = None
    query_norm_full: float | None = None
    query_norm_split: float | None = None


def lattice_interval(
    variant: LatticeVariant,
    ctx: LatticeContext,
    alpha: float,
    *,
    day: int = 0,
    hour: int = 0,
    model_tag: str | None = None,
) -> IntervalForecast:
    """Interval for one lattice node.

    Sampled symmetric nodes use the conformal rank rule on calibration
    scores (so (T,T,F) reproduces the plain split-conformal interval and
    (T,T,T) the normalized one exactly); non-sampled symmetric nodes use
    the in-sample type-7 quantile (so (T,F,F) equals the empirical-error
    baseline). Asymmetric nodes take the alpha/2 and 1-alpha/2 type-7
    quantiles of the signed (optionally normalized) errors. Crossing
    bounds are swapped and flagged, never silently emitted.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    tag = model_tag if model_tag is not None else variant.tag

    if variant.sampled:
        errors = np.asarray(ctx.calib_errors, dtype=np.float64)
        norms_raw = ctx.calib_norms
        query_norm_raw = ctx.query_norm_split
        center = ctx.center_split
    else:
        errors = np.asarray(ctx.insample_errors, dtype=np.float64)
        norms_raw = ctx.insample_norms
        query_norm_raw = ctx.query_norm_full
        center = ctx.center_full

    scale = 1.0
    if variant.normalized:
        if norms_raw is None or query_norm_raw is None:
            raise ValueError("normalized node requires error-model estimates")
        norms = floor_normalizers(norms_raw, norms_raw)
        errors = errors / norms
        scale = float(floor_normalizers(np.array([query_norm_raw]), norms_raw)[0])

    if variant.symmetric:
        abs_scores = np.abs(errors)
        if variant.sampled:
            thr = icp_threshold(abs_scores, alpha)
        else:
            thr = float(np.quantile(abs_scores, 1.0 - alpha))
        if math.isinf(thr):
            return IntervalForecast(
                day=day, hour=hour, alpha=alpha,
                lower=-math.inf, upper=math.inf, center=center,
                model_tag=tag, unbounded=True,
            )
        half = thr * scale
        return IntervalForecast(
            day=day, hour=hour, alpha=alpha,
            lower=center - half, upper=center + half, center=center,
            model_tag=tag,
        )

    lo_q, hi_q = np.quantile(errors, [alpha / 2.0, 1.0 - alpha / 2.0])
    lower = center + float(lo_q) * scale
    upper = center + float(hi_q) * scale
    crossed = lower > upper
    if crossed:
        warnings.warn(
            f"{tag}: crossing bounds at alpha={alpha}; swapped and flagged"
        )
        lower, upper = upper, lower
    return IntervalForecast(
        day=day, hour=hour, alpha=alpha,
        lower=lower, upper=upper, center=center,
        model_tag=tag, crossed=crossed,
    )
