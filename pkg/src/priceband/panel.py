"""Core domain types shared by every module: the hourly price panel,
design rows, train/calibration splits, interval forecasts and hit series.

No I/O and no model logic lives here. All containers are frozen and their
arrays are write-locked after construction, so they are safe to share
read-only across parallel workers.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

HOURS = 24

# Order of the 14 base regressors; market fundamentals are appended after.
BASE_FEATURE_NAMES = (
    "intercept",
    "ar1",
    "ar2",
    "ar7",
    "y_min_prev",
    "y_max_prev",
    "d_sat",
    "d_sun",
    "d_mon",
    "pca1",
    "pca2",
    "pca3",
    "y_h24_prev",
    "delta",
)


def _locked(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class HourlyPanel:
    """Day x 24 matrix of prices plus aligned exogenous series.

    ``prices[d, h]`` is the price of hour ``h`` (0-based internally; the
    user-facing CSV convention is 1..24) on calendar day ``dates[d]``.
    ``exog`` maps column names (e.g. "load", "wind") to matrices of the
    same shape.
    """

    dates: tuple[dt.date, ...]
    prices: np.ndarray
    exog: dict[str, np.ndarray] = field(default_factory=dict)
    market_tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "prices", _locked(self.prices))
        object.__setattr__(
            self, "exog", {k: _locked(v) for k, v in self.exog.items()}
        )

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def day_of_week(self, t: int) -> int:
        """ISO weekday of day index ``t`` (Monday=0 .. Sunday=6)."""
        return self.dates[t].weekday()


def validate_panel(panel: HourlyPanel) -> list[str]:
    """Return a list of invariant violations; empty iff the panel is valid.

    Checks: day x 24 shapes (prices and every exog series), strictly
    increasing consecutive dates, and finiteness of every cell.
    """
    violations: list[str] = []
    d = panel.n_days
    if panel.prices.shape != (d, HOURS):
        violations.append(
            f"prices shape {panel.prices.shape} != ({d}, {HOURS})"
        )
        return violations  # shape is broken, cell checks would be misleading
    for name, mat in panel.exog.items():
        if mat.shape != (d, HOURS):
            violations.append(
                f"exog[{name!r}] shape {mat.shape} != ({d}, {HOURS})"
            )
    for t in range(1, d):
        gap = (panel.dates[t] - panel.dates[t - 1]).days
        if gap <= 0:
            violations.append(
                f"dates not strictly increasing at index {t}: "
                f"{panel.dates[t - 1]} -> {panel.dates[t]}"
            )
        elif gap != 1:
            violations.append(
                f"date gap of {gap} days between {panel.dates[t - 1]} "
                f"and {panel.dates[t]}"
            )
    bad = np.argwhere(~np.isfinite(panel.prices))
    for t, h in bad:
        violations.append(f"prices[{t}][{h}] is not finite")
    for name, mat in panel.exog.items():
        if mat.shape != (d, HOURS):
            continue
        for t, h in np.argwhere(~np.isfinite(mat)):
            violations.append(f"exog[{name!r}][{t}][{h}] is not finite")
    return violations


@dataclass(frozen=True)
class DesignRow:
    """One regressor vector for a (day, hour) pair.

    ``fundamentals`` holds the 0-2 market-specific exogenous values in
    preset column order.
    """

    intercept: float
    ar1: float
    ar2: float
    ar7: float
    y_min_prev: float
    y_max_prev: float
    d_sat: float
    d_sun: float
    d_mon: float
    pca1: float
    pca2: float
    pca3: float
    y_h24_prev: float
    delta: float
    fundamentals: tuple[float, ...] = ()

    def to_array(self) -> np.ndarray:
        base = (
            self.intercept, self.ar1, self.ar2, self.ar7,
            self.y_min_prev, self.y_max_prev,
            self.d_sat, self.d_sun, self.d_mon,
            self.pca1, self.pca2, self.pca3,
            self.y_h24_prev, self.delta,
        )
        return np.array(base + self.fundamentals, dtype=np.float64)


@dataclass(frozen=True)
class SplitPlan:
    """Random partition of in-sample row indices into train and calibration."""

    train_idx: np.ndarray
    calib_idx: np.ndarray
    pi: float
    seed: int

    def __post_init__(self):
        tr = np.asarray(self.train_idx, dtype=np.intp)
        ca = np.asarray(self.calib_idx, dtype=np.intp)
        tr.setflags(write=False)
        ca.setflags(write=False)
        object.__setattr__(self, "train_idx", tr)
        object.__setattr__(self, "calib_idx", ca)
        if np.intersect1d(tr, ca).size:
            raise ValueError("train and calibration indices overlap")


def make_split(n: int, seed, pi: float = 0.75) -> SplitPlan:
    """Draw a uniform random split of ``range(n)`` without replacement.

    ``seed`` is an int or a sequence of ints (e.g. (base_seed, window
    index)) mixed through a seed sequence, so per-window splits are stable
    across runs and platforms. ``|train| = round(pi * n)``. Both index sets
    are returned sorted so the chronological row order inside each part is
    preserved.
    """
    if not 0.0 < pi < 1.0:
        raise ValueError(f"pi must be in (0,1), got {pi}")
    if n < 2:
        raise ValueError(f"need at least 2 rows to split, got {n}")
    m = int(round(pi * n))
    m = min(max(m, 1), n - 1)
    entropy = [int(s) for s in (seed if isinstance(seed, (tuple, list)) else (seed,))]
    ss = np.random.SeedSequence(entropy)
    derived = int(ss.generate_state(1, np.uint64)[0])
    perm = np.random.default_rng(ss).permutation(n)
    return SplitPlan(
        train_idx=np.sort(perm[:m]),
        calib_idx=np.sort(perm[m:]),
        pi=pi,
        seed=derived,
    )


@dataclass(frozen=True)
class IntervalForecast:
    """A prediction interval for one (day, hour) at miscoverage ``alpha``.

    ``unbounded`` marks intervals where the conformal rank rule could not
    produce a finite threshold (alpha below the 1/(n+1) resolution);
    ``crossed`` marks bounds that had to be swapped into order.
    """

    day: int
    hour: int
    alpha: float
    lower: float
    upper: float
    center: float
    model_tag: str
    unbounded: bool = False
    crossed: bool = False

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(
                f"interval bounds out of order: [{self.lower}, {self.upper}]"
            )

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, y: float) -> bool:
        return self.lower <= y <= self.upper


@dataclass(frozen=True)
class HitSeries:
    """Ordered binary coverage indicators for one hour of the day."""

    hour: int
    hits: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.hits, dtype=np.int8)
        if h.ndim != 1:
            raise ValueError("hits must be one-dimensional")
        if not np.isin(h, (0, 1)).all():
            raise ValueError("hits must be binary")
        h.setflags(write=False)
        object.__setattr__(self, "hits", h)

    def __len__(self) -> int:
        return len(self.hits)
