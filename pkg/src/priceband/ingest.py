"""CSV ingestion: parse raw hourly records into a validated
:class:`~priceband.panel.HourlyPanel`, resolving DST artifacts and missing
values, plus the fence-based outlier report and descriptive statistics.

Expected schema (header required, UTF-8, decimal point):
``date,hour,price[,load][,wind][,zonal_load][,system_load][,dst]``
with ISO dates and hours 1..24. A ``dst`` marker column in
{none, dup_a, dup_b, missing} makes DST rows explicit; without it,
duplicated (date, hour) pairs are averaged and absent pairs are treated
as missing cells.
"""

from __future__ import annotations

import csv
import datetime as dt
import warnings
from dataclasses import dataclass

import numpy as np

from .features import MarketPreset
from .panel import HOURS, HourlyPanel, validate_panel

MAX_MISSING_FRACTION = 0.10
_MISSING_TOKENS = {"", "na", "nan", "null", "none"}
_DST_MARKS = {"none", "dup_a", "dup_b", "missing"}

# Deterministic imputer stages: same-hour linear interpolation when both
# neighbours sit within this many days, else the same-hour median over the
# trailing window.
INTERP_MAX_GAP_DAYS = 7
TRAILING_MEDIAN_DAYS = 28


class SchemaError(ValueError):
    """Raised when the file cannot be parsed against the expected schema."""


class PanelValidationError(ValueError):
    """Raised when a parsed file fails panel-level validation rules."""


@dataclass(frozen=True)
class OutlierReport:
    """Per-cell fence flags plus the per-hour fences that produced them."""

    flags: np.ndarray       # (days, 24) bool
    fences: np.ndarray      # (24, 2) low/high

    def __post_init__(self):
        f = np.asarray(self.flags, dtype=bool)
        f.setflags(write=False)
        object.__setattr__(self, "flags", f)
        fe = np.asarray(self.fences, dtype=np.float64)
        fe.setflags(write=False)
        object.__setattr__(self, "fences", fe)

    @property
    def n_flagged(self) -> int:
        return int(self.flags.sum())

    def flagged_cells(self) -> list[tuple[int, int]]:
        return [(int(t), int(h)) for t, h in np.argwhere(self.flags)]


def _parse_float(token: str, row_no: int, col: str) -> float:
    token = token.strip()
    if token.lower() in _MISSING_TOKENS:
        return np.nan
    try:
        return float(token)
    except ValueError:
        raise SchemaError(
            f"row {row_no}: cannot parse {col}={token!r} as a number"
        ) from None


def _read_rows(path, columns: list[str]):
    """Yield (row_no, date, hour0, dst_mark, {col: value}) tuples."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise SchemaError("empty file: no header row")
        for col in ("date", "hour", *columns):
            if col not in header:
                raise SchemaError(f"missing required column {col!r}")
        has_dst = "dst" in header
        for row_no, row in enumerate(reader, start=2):
            raw_date = (row.get("date") or "").strip()
            try:
                date = dt.date.fromisoformat(raw_date)
            except ValueError:
                raise SchemaError(
                    f"row {row_no}: cannot parse date={raw_date!r} (ISO-8601 expected)"
                ) from None
            raw_hour = (row.get("hour") or "").strip()
            try:
                hour = int(raw_hour)
            except ValueError:
                raise SchemaError(
                    f"row {row_no}: cannot parse hour={raw_hour!r}"
                ) from None
            if not 1 <= hour <= HOURS:
                raise SchemaError(f"row {row_no}: hour {hour} outside 1..{HOURS}")
            mark = "none"
            if has_dst:
                mark = (row.get("dst") or "none").strip().lower() or "none"
                if mark not in _DST_MARKS:
                    raise SchemaError(
                        f"row {row_no}: dst marker {mark!r} not in {sorted(_DST_MARKS)}"
                    )
            values = {c: _parse_float(row.get(c) or "", row_no, c) for c in columns}
            yield row_no, date, hour - 1, mark, values


def _impute_column(mat: np.ndarray) -> np.ndarray:
    """Fill NaN cells of a (days, 24) matrix column-wise per hour series.

    Only originally-observed values feed the imputation, so the result does
    not depend on the order cells are processed and a second pass is a
    no-op (idempotence).
    """
    out = mat.copy()
    days = mat.shape[0]
    for h in range(HOURS):
        series = mat[:, h]
        missing = np.where(np.isnan(series))[0]
        if missing.size == 0:
            continue
        observed = np.where(~np.isnan(series))[0]
        for t in missing:
            before = observed[observed < t]
            after = observed[observed > t]
            t0 = int(before[-1]) if before.size else None
            t1 = int(after[0]) if after.size else None
            if (
                t0 is not None
                and t1 is not None
                and t - t0 <= INTERP_MAX_GAP_DAYS
                and t1 - t <= INTERP_MAX_GAP_DAYS
            ):
                w = (t - t0) / (t1 - t0)
                out[t, h] = series[t0] + w * (series[t1] - series[t0])
                continue
            lo = max(0, t - TRAILING_MEDIAN_DAYS)
            trailing = series[lo:t]
            trailing = trailing[~np.isnan(trailing)]
            if trailing.size:
                out[t, h] = float(np.median(trailing))
                continue
            fallback = series[observed]
            if fallback.size == 0:
                raise PanelValidationError(
                    f"hour {h + 1} has no observed values to impute from"
                )
            warnings.warn(
                f"cell (day {t}, hour {h + 1}) imputed from the whole hour series"
            )
            out[t, h] = float(np.median(fallback))
    return out


def load_panel(path, preset: MarketPreset, drop_outliers: bool = False) -> HourlyPanel:
    """Load one market CSV into a validated panel.

    Duplicate DST hours are averaged, missing cells (explicit markers,
    absent rows, or whole absent days) are filled by the deterministic
    imputer, and any column missing more than 10% of its cells is fatal.
    With ``drop_outliers`` the fence-flagged cells are additionally removed
    and re-imputed (off by default; the flags are otherwise report-only).
    """
    columns = ["price", *preset.fundamentals]
    cells: dict[tuple[dt.date, int], dict[str, list[float]]] = {}
    explicit_missing: set[tuple[dt.date, int]] = set()
    for row_no, date, h, mark, values in _read_rows(path, columns):
        key = (date, h)
        if mark == "missing":
            explicit_missing.add(key)
            continue
        bucket = cells.setdefault(key, {c: [] for c in columns})
        for c, v in values.items():
            if not np.isnan(v):
                bucket[c].append(v)
    if not cells:
        raise SchemaError("file contains no data rows")

    all_dates = sorted({d for d, _ in cells} | {d for d, _ in explicit_missing})
    first, last = all_dates[0], all_dates[-1]
    n_days = (last - first).days + 1
    dates = tuple(first + dt.timedelta(days=i) for i in range(n_days))
    index = {d: i for i, d in enumerate(dates)}

    mats = {c: np.full((n_days, HOURS), np.nan) for c in columns}
    for (date, h), bucket in cells.items():
        t = index[date]
        for c, vals in bucket.items():
            if vals:
                # Duplicate DST hour: arithmetic mean of the observations.
                mats[c][t, h] = float(np.mean(vals))

    for c in columns:
        n_missing = int(np.isnan(mats[c]).sum())
        frac = n_missing / mats[c].size
        if frac > MAX_MISSING_FRACTION:
            raise PanelValidationError(
                f"column {c!r} is missing {frac:.1%} of cells "
                f"(> {MAX_MISSING_FRACTION:.0%}); imputation judged unreliable"
            )
        mats[c] = _impute_column(mats[c])

    panel = HourlyPanel(
        dates=dates,
        prices=mats["price"],
        exog={c: mats[c] for c in preset.fundamentals},
        market_tag=preset.name,
    )
    if drop_outliers:
        report = tukey_outliers(panel)
        if report.n_flagged:
            pruned = panel.prices.copy()
            pruned[report.flags] = np.nan
            panel = HourlyPanel(
                dates=dates,
                prices=_impute_column(pruned),
                exog=panel.exog,
                market_tag=preset.name,
            )
    violations = validate_panel(panel)
    if violations:
        raise PanelValidationError("; ".join(violations))
    return panel


def tukey_outliers(panel: HourlyPanel) -> OutlierReport:
    """Flag cells strictly outside [Q1 - 1.5 IQR, Q3 + 1.5 IQR] per hour.

    Quartiles use linear interpolation of order statistics (the common
    type-7 rule). The panel itself is never modified.
    """
    prices = panel.prices
    fences = np.empty((HOURS, 2))
    flags = np.zeros_like(prices, dtype=bool)
    for h in range(HOURS):
        q1, q3 = np.quantile(prices[:, h], [0.25, 0.75])
        iqr = q3 - q1
        lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        fences[h] = (lo, hi)
        flags[:, h] = (prices[:, h] < lo) | (prices[:, h] > hi)
    return OutlierReport(flags=flags, fences=fences)


def summary_stats(panel: HourlyPanel) -> dict[str, float]:
    """Descriptive statistics over all day x hour price cells."""
    x = panel.prices.ravel()
    if x.size > 1:
        sd = float(np.std(x, ddof=1))
    else:
        sd = 0.0
    q1, q3 = np.quantile(x, [0.25, 0.75])
    return {
        "mean": float(np.mean(x)),
        "sd": sd,
        "q1": float(q1),
        "q3": float(q3),
        "min": float(np.min(x)),
        "max": float(np.max(x)),
    }


def write_panel_csv(panel: HourlyPanel, path) -> None:
    """Serialize a panel back to the ingest schema (bit-exact round trip).

    Floats are written with ``repr``, whose shortest round-trip form
    re-parses to the identical float64.
    """
    exog_cols = sorted(panel.exog)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "hour", "price", *exog_cols])
        for t, date in enumerate(panel.dates):
            for h in range(HOURS):
                row = [date.isoformat(), h + 1, repr(float(panel.prices[t, h]))]
                row += [repr(float(panel.exog[c][t, h])) for c in exog_cols]
                writer.writerow(row)
