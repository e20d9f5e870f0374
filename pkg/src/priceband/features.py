"""Design-matrix construction: autoregressive lags, previous-day extrema,
weekday dummies, daily PCA factors, the end-of-day price, the regime
threshold indicator, and market-specific fundamentals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .panel import BASE_FEATURE_NAMES, HOURS, DesignRow, HourlyPanel
from .transform import PcaModel, pca_project

# Earliest day index with a complete lag structure: lag-7 prices plus the
# day t-8 mean needed by the threshold indicator.
WARMUP_DAYS = 8


@dataclass(frozen=True)
class MarketPreset:
    """Market name, its fundamental exog columns and the KNN neighbour count."""

    name: str
    fundamentals: tuple[str, ...]
    knn_k: int

    @property
    def n_features(self) -> int:
        return len(BASE_FEATURE_NAMES) + len(self.fundamentals)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return BASE_FEATURE_NAMES + self.fundamentals


PRESETS: dict[str, MarketPreset] = {
    "nordpool": MarketPreset("nordpool", (), 50),
    "gefcom": MarketPreset("gefcom", ("zonal_load", "system_load"), 50),
    "epex": MarketPreset("epex", ("load", "wind"), 200),
}


def get_preset(name: str) -> MarketPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown market {name!r}; expected one of {sorted(PRESETS)}"
        ) from None


def _check_exog(panel: HourlyPanel, preset: MarketPreset) -> None:
    missing = [c for c in preset.fundamentals if c not in panel.exog]
    if missing:
        raise ValueError(
            f"panel lacks exog columns {missing} required by preset {preset.name!r}"
        )


def build_row(
    panel: HourlyPanel,
    pca: PcaModel,
    t: int,
    h: int,
    preset: MarketPreset,
) -> DesignRow:
    """Regressor vector for day ``t``, hour ``h``.

    Lags are same-hour prices 1, 2 and 7 days back; extrema and the
    hour-24 price come from day t-1; PCA scores project day t-1's full
    price curve; the threshold indicator compares yesterday's daily mean
    against the mean one week before it. Fundamentals are the exog values
    at (t, h): day-ahead forecasts, known before delivery.
    """
    if t < WARMUP_DAYS:
        raise ValueError(f"day index {t} is inside the {WARMUP_DAYS}-day warm-up")
    if not 0 <= h < HOURS:
        raise ValueError(f"hour must be in [0, {HOURS}), got {h}")
    _check_exog(panel, preset)
    prices = panel.prices
    dow = panel.day_of_week(t)  # Monday=0 .. Sunday=6
    scores = pca_project(pca, prices[t - 1, :])
    delta = 1.0 if prices[t - 1, :].mean() > prices[t - 8, :].mean() else 0.0
    return DesignRow(
        intercept=1.0,
        ar1=float(prices[t - 1, h]),
        ar2=float(prices[t - 2, h]),
        ar7=float(prices[t - 7, h]),
        y_min_prev=float(prices[t - 1, :].min()),
        y_max_prev=float(prices[t - 1, :].max()),
        d_sat=1.0 if dow == 5 else 0.0,
        d_sun=1.0 if dow == 6 else 0.0,
        d_mon=1.0 if dow == 0 else 0.0,
        pca1=float(scores[0]),
        pca2=float(scores[1]),
        pca3=float(scores[2]),
        y_h24_prev=float(prices[t - 1, HOURS - 1]),
        delta=delta,
        fundamentals=tuple(float(panel.exog[c][t, h]) for c in preset.fundamentals),
    )


def build_matrix(
    panel: HourlyPanel,
    pca: PcaModel,
    h: int,
    days: range,
    preset: MarketPreset,
):
    """Stack one design row per day of ``days`` for hour ``h``.

    Returns ``(X, y)`` where rows follow day order and ``y`` holds the
    same-hour realized prices. Vectorized, but row-identical to
    :func:`build_row` (asserted in tests).
    """
    days = list(days)
    if not days:
        raise ValueError("empty day range")
    if min(days) < WARMUP_DAYS:
        raise ValueError(
            f"day range starts at {min(days)}, inside the {WARMUP_DAYS}-day warm-up"
        )
    if max(days) >= panel.n_days:
        raise ValueError("day range extends past the panel")
    _check_exog(panel, preset)

    d = np.asarray(days, dtype=np.intp)
    prices = panel.prices
    n = d.size
    x = np.empty((n, preset.n_features))
    x[:, 0] = 1.0
    x[:, 1] = prices[d - 1, h]
    x[:, 2] = prices[d - 2, h]
    x[:, 3] = prices[d - 7, h]
    x[:, 4] = prices[d - 1, :].min(axis=1)
    x[:, 5] = prices[d - 1, :].max(axis=1)
    dows = np.array([panel.day_of_week(int(t)) for t in d])
    x[:, 6] = (dows == 5).astype(np.float64)
    x[:, 7] = (dows == 6).astype(np.float64)
    x[:, 8] = (dows == 0).astype(np.float64)
    centered = prices[d - 1, :] - pca.hour_means
    x[:, 9:12] = centered @ pca.loadings
    x[:, 12] = prices[d - 1, HOURS - 1]
    x[:, 13] = (prices[d - 1, :].mean(axis=1) > prices[d - 8, :].mean(axis=1)).astype(
        np.float64
    )
    for j, c in enumerate(preset.fundamentals):
        x[:, 14 + j] = panel.exog[c][d, h]
    y = prices[d, h].copy()
    return x, y
