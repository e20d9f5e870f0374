"""Rolling out-of-sample orchestration: daily refits over a sliding
parameterization window, per-hour model pipelines, the lattice ablation
runner, and score aggregation.

The scheme shifts the whole window by one day per step. For a target day
d the window is [d - P, d - 1]; its first 8 days are feature-only warm-up
(the lag structure reaches back to t - 8), leaving P - 8 usable rows per
hour. Quantile-averaging weights train on trailing no-leakage point
forecasts cached as the run advances, so nothing a forecast touches sits
at or after its target day price-wise (exogenous columns at the target
day are day-ahead forecasts, known before delivery).

Runs are deterministic given (panel, config): per-window splits derive
from (seed, day), every engine is deterministic, and worker scheduling
never changes results because rows are gathered and ordered by day.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .conformal import (
    ALL_VARIANTS,
    LatticeContext,
    empirical_interval,
    floor_normalizers,
    icp_interval,
    icp_threshold,
    lattice_interval,
    ncp_interval,
)
from .evaluate import christoffersen, pinball, winkler
from .features import WARMUP_DAYS, MarketPreset, build_matrix, get_preset
from .forecasters import ForecasterSpec, knn_fit, lasso_fit, naive_predict, svr_fit
from .panel import HOURS, HourlyPanel, IntervalForecast, make_split
from .qra import qra_fit, qra_predict
from .transform import pca_fit, yj_apply, yj_fit, yj_invert

POINT_KINDS = ("lasso", "knn", "svr")
TRANSFORMED_KINDS = ("lasso", "svr")
# Design-matrix columns on the price level, transformed alongside the target.
PRICE_LEVEL_COLS = (1, 2, 3, 4, 5, 12)

E_MODELS = ("naive_e", "lasso_e", "knn_e", "svr_e")
ICP_MODELS = ("lasso_icp", "knn_icp", "svr_icp")
NCP_MODELS = ("lasso_ncp", "knn_ncp", "svr_ncp")
DEFAULT_ROSTER = E_MODELS + ICP_MODELS + NCP_MODELS + ("qra",)

DEFAULT_PERCENTILES = tuple(p for p in range(5, 100, 5) if p != 50)
DEFAULT_ALPHAS = (0.5, 0.1)

QRA_MIN_ROWS_PER_COL = 10  # trailing pairs required per fitted weight


@dataclass(frozen=True)
class BacktestConfig:
    """Everything a run needs besides the panel itself."""

    market: str = "nordpool"
    parameterization_days: int = 330
    models: tuple[str, ...] = DEFAULT_ROSTER
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    percentiles: tuple[int, ...] = DEFAULT_PERCENTILES
    seed: int = 0
    pi: float = 0.75
    qra_days: int = 56
    knn_k: int | None = None   # None: take the market preset's value
    drop_outliers: bool = False

    def __post_init__(self):
        if self.parameterization_days < 60:
            raise ValueError("parameterization window must span at least 60 days")
        if not self.models:
            raise ValueError("model roster is empty")
        unknown = sorted(set(self.models) - set(DEFAULT_ROSTER))
        if unknown:
            raise ValueError(f"unknown roster models: {unknown}")
        for a in self.alphas:
            if not 0.0 < a < 1.0:
                raise ValueError(f"alpha {a} outside (0,1)")
        bad = [p for p in self.percentiles if p not in range(5, 100, 5) or p == 50]
        if bad:
            raise ValueError(
                f"percentiles must lie on the 5..95 grid without 50: {bad}"
            )
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def preset(self) -> MarketPreset:
        return get_preset(self.market)

    def forecaster_spec(self) -> ForecasterSpec:
        k = self.knn_k if self.knn_k is not None else self.preset.knn_k
        return ForecasterSpec(kind="lasso", knn_k=k)

    def canonical(self) -> dict:
        return {
            "market": self.market,
            "parameterization_days": self.parameterization_days,
            "models": list(self.models),
            "alphas": list(self.alphas),
            "percentiles": list(self.percentiles),
            "seed": self.seed,
            "pi": self.pi,
            "qra_days": self.qra_days,
            "knn_k": self.knn_k,
            "drop_outliers": self.drop_outliers,
        }

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class LedgerRow:
    day: int
    hour: int
    model: str
    alpha: float
    lower: float
    upper: float
    center: float
    realized: float
    hit: int
    unbounded: bool = False
    crossed: bool = False


@dataclass(frozen=True)
class QuantileRow:
    day: int
    hour: int
    model: str
    percentile: int
    value: float
    realized: float


@dataclass
class RunLedger:
    """All interval forecasts of a run plus the metadata that pins it."""

    rows: list[LedgerRow]
    quantile_rows: list[QuantileRow]
    gaps: list[str]
    config: BacktestConfig
    config_hash: str
    seed: int
    wall_clock: float
    dates: tuple
    window_bounds: dict[int, tuple[int, int]]
    error_model_kinds: dict[str, str]


@dataclass(frozen=True)
class AblationRow:
    day: int
    hour: int
    forecaster: str
    symmetric: bool
    sampled: bool
    normalized: bool
    node: str
    alpha: float
    lower: float
    upper: float
    center: float
    realized: float
    hit: int
    unbounded: bool = False
    crossed: bool = False


@dataclass
class AblationResult:
    rows: list[AblationRow]
    gaps: list[str]
    config: BacktestConfig
    config_hash: str
    seed: int
    wall_clock: float
    dates: tuple
    window_bounds: dict[int, tuple[int, int]]


def first_forecast_day(config: BacktestConfig) -> int:
    return config.parameterization_days + WARMUP_DAYS


# ---------------------------------------------------------------------------
# per (day, hour, forecaster) fitting

@dataclass
class _HourFit:
    """Everything one (day, hour, kind) triple contributes downstream.

    Values live on the model's working scale: the fitted transform's for
    lasso/svr (``eta`` set), raw prices for knn (``eta`` None).
    """

    kind: str
    eta: float | None
    center_full: float
    insample_err: np.ndarray                 # signed, full-window fit
    center_split: float | None = None
    calib_err: np.ndarray | None = None      # signed, split fit, calibration rows
    calib_norm: np.ndarray | None = None     # |error-model| estimates, pre-floor
    query_norm_split: float | None = None
    insample_norm: np.ndarray | None = None  # full-window error model, in-sample
    query_norm_full: float | None = None


def _fit_point(kind: str, x: np.ndarray, y: np.ndarray, spec: ForecasterSpec):
    if kind == "lasso":
        return lasso_fit(x, y, grid=spec.lasso_grid, cv_folds=spec.cv_folds)
    if kind == "knn":
        return knn_fit(x, y, spec.knn_k)
    if kind == "svr":
        return svr_fit(x, y, spec)
    raise ValueError(f"unknown point forecaster {kind!r}")


def _transform_design(x_raw: np.ndarray, y_raw: np.ndarray, preset: MarketPreset):
    """Fit the power transform on the in-sample rows (all but the query
    row) and apply it to the whole design.

    The target's shape parameter is shared by the price-level columns,
    which are the same quantity at other lags; each fundamentals column
    gets its own shape; dummies, the regime indicator and the PCA scores
    pass through. Returns (x_t, y_t_insample, eta_price).
    """
    params = yj_fit(y_raw[:-1])
    x_t = x_raw.copy()
    for col in PRICE_LEVEL_COLS:
        x_t[:, col] = yj_apply(params.eta, x_raw[:, col])
    n_base = x_raw.shape[1] - len(preset.fundamentals)
    for j in range(len(preset.fundamentals)):
        col = n_base + j
        col_params = yj_fit(x_raw[:-1, col])
        x_t[:, col] = yj_apply(col_params.eta, x_raw[:, col])
    return x_t, yj_apply(params.eta, y_raw[:-1]), params.eta


class _HourDesigns:
    """Raw and transformed design matrices for one (day, hour), with the
    query day as the last row. The transform is fitted lazily and shared
    by every engine that works on the stabilized scale."""

    def __init__(self, x_raw: np.ndarray, y_raw: np.ndarray, preset: MarketPreset):
        self.x_raw = x_raw
        self.y_raw = y_raw
        self.preset = preset
        self._transformed = None

    def for_kind(self, kind: str):
        """(x_all, y_insample, eta) on the engine's working scale."""
        if kind not in TRANSFORMED_KINDS:
            return self.x_raw, self.y_raw[:-1], None
        if self._transformed is None:
            self._transformed = _transform_design(self.x_raw, self.y_raw, self.preset)
        return self._transformed


def _fit_hour(
    kind: str,
    designs: _HourDesigns,
    spec: ForecasterSpec,
    split,
    need_split: bool,
    need_insample_norm: bool,
) -> _HourFit:
    """Fit one forecaster for one (day, hour): full-window fit always,
    train/calibration fit and error models on demand.

    The last design row is the query day and never enters a fit. Error
    models reuse the identical engine and features with the absolute
    residuals of their point model as response.
    """
    x_all, y, eta = designs.for_kind(kind)
    x, x_query = x_all[:-1], x_all[-1]

    full = _fit_point(kind, x, y, spec)
    center_full = float(full.predict(x_query))
    insample_pred = np.asarray(full.predict(x), dtype=np.float64)
    insample_err = y - insample_pred

    fit = _HourFit(
        kind=kind, eta=eta, center_full=center_full, insample_err=insample_err
    )

    if need_insample_norm:
        err_full = _fit_point(kind, x, np.abs(insample_err), spec)
        fit.insample_norm = np.abs(np.asarray(err_full.predict(x), dtype=np.float64))
        fit.query_norm_full = abs(float(err_full.predict(x_query)))

    if need_split:
        tr, ca = split.train_idx, split.calib_idx
        model = _fit_point(kind, x[tr], y[tr], spec)
        fit.center_split = float(model.predict(x_query))
        calib_pred = np.asarray(model.predict(x[ca]), dtype=np.float64)
        fit.calib_err = y[ca] - calib_pred
        train_resid = np.abs(
            y[tr] - np.asarray(model.predict(x[tr]), dtype=np.float64)
        )
        err_model = _fit_point(kind, x[tr], train_resid, spec)
        fit.calib_norm = np.abs(np.asarray(err_model.predict(x[ca]), dtype=np.float64))
        fit.query_norm_split = abs(float(err_model.predict(x_query)))
    return fit


def _invert(value: float, eta: float | None) -> float:
    if eta is None or math.isinf(value):
        return float(value)
    return float(yj_invert(eta, value))


def _price_scale_bounds(iv: IntervalForecast, eta: float | None):
    """Map interval bounds back to the price scale.

    A finite transformed-scale bound whose image overflows float64 (tiny
    fitted shape, huge half width) is treated like the conformal sentinel:
    the row is flagged unbounded so it drops out of width statistics.
    """
    lower = _invert(iv.lower, eta)
    upper = _invert(iv.upper, eta)
    center = _invert(iv.center, eta)
    unbounded = iv.unbounded or not (math.isfinite(lower) and math.isfinite(upper))
    return lower, upper, center, unbounded


def _interval_row(iv: IntervalForecast, eta: float | None, realized: float,
                  model: str) -> LedgerRow:
    lower, upper, center, unbounded = _price_scale_bounds(iv, eta)
    # containment with infinite bounds is well-defined, so the sentinel
    # interval (-inf, inf) counts as covering automatically
    hit = 1 if lower <= realized <= upper else 0
    return LedgerRow(
        day=iv.day, hour=iv.hour, model=model, alpha=iv.alpha,
        lower=lower, upper=upper, center=center, realized=realized,
        hit=hit, unbounded=unbounded, crossed=iv.crossed,
    )


def _percentile_alpha(p: int) -> tuple[float, str]:
    """Two-sided level and bound side realizing the one-sided percentile."""
    if p < 50:
        return 2.0 * p / 100.0, "lower"
    return 2.0 * (100 - p) / 100.0, "upper"


def _symmetric_quantile_rows(
    day, hour, model, percentiles, realized, center, half_width_at, eta
) -> list[QuantileRow]:
    """Quantile forecasts implied by a symmetric interval family;
    ``half_width_at(alpha)`` supplies the half width at a two-sided level."""
    rows = []
    for p in percentiles:
        alpha_p, side = _percentile_alpha(p)
        half = half_width_at(alpha_p)
        z = center - half if side == "lower" else center + half
        rows.append(QuantileRow(
            day=day, hour=hour, model=model, percentile=p,
            value=_invert(z, eta) if math.isfinite(z) else float(z),
            realized=realized,
        ))
    return rows


# ---------------------------------------------------------------------------
# day workers (run either in-process or in a process pool)

_WORKER: dict = {}


def _init_worker(panel, config):
    _WORKER["panel"] = panel
    _WORKER["config"] = config


def _window_for(config: BacktestConfig, day: int) -> tuple[int, int]:
    """(window start, usable row count) for a target day; windows before a
    full parameterization span expand from the panel start."""
    win_start = max(0, day - config.parameterization_days)
    return win_start, day - (win_start + WARMUP_DAYS)


def _min_cache_rows(config: BacktestConfig) -> int:
    # The PCA needs a 24-day window (16 usable rows); KNN needs k rows.
    return max(HOURS - WARMUP_DAYS, 10, config.forecaster_spec().knn_k)


def _phase1_day(day: int) -> dict:
    panel: HourlyPanel = _WORKER["panel"]
    config: BacktestConfig = _WORKER["config"]
    forecast_day = day >= first_forecast_day(config)
    preset = config.preset
    spec = config.forecaster_spec()
    need_qra = "qra" in config.models

    out = {
        "day": day,
        "centers": np.full((HOURS, len(POINT_KINDS)), np.nan),
        "rows": [],
        "qrows": [],
        "gaps": [],
        "window": None,
    }
    win_start, n_rows = _window_for(config, day)
    out["window"] = (win_start, day - 1)
    if n_rows < _min_cache_rows(config):
        out["gaps"].append(f"day {day}: only {n_rows} usable rows in window")
        return out

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return _phase1_day_inner(out, panel, config, preset, spec, day,
                                 win_start, n_rows, forecast_day, need_qra)


def _phase1_day_inner(out, panel, config, preset, spec, day, win_start,
                      n_rows, forecast_day, need_qra):
    try:
        pca = pca_fit(panel, range(win_start, day))
    except Exception as exc:  # noqa: BLE001 - gap policy: record and move on
        out["gaps"].append(f"day {day}: pca failed: {exc}")
        return out

    feat_days = list(range(win_start + WARMUP_DAYS, day)) + [day]
    split = None
    if forecast_day and any(m in config.models for m in ICP_MODELS + NCP_MODELS):
        split = make_split(n_rows, (config.seed, day), pi=config.pi)

    for h in range(HOURS):
        try:
            x_raw, y_raw = build_matrix(panel, pca, h, feat_days, preset)
        except Exception as exc:  # noqa: BLE001
            out["gaps"].append(f"day {day} hour {h}: features failed: {exc}")
            continue
        realized = float(panel.prices[day, h])
        designs = _HourDesigns(x_raw, y_raw, preset)

        for k_idx, kind in enumerate(POINT_KINDS):
            in_roster = forecast_day and any(
                m in config.models
                for m in (f"{kind}_e", f"{kind}_icp", f"{kind}_ncp")
            )
            if not (in_roster or need_qra):
                continue
            need_split = (
                split is not None
                and (f"{kind}_icp" in config.models or f"{kind}_ncp" in config.models)
            )
            try:
                fit = _fit_hour(
                    kind, designs, spec, split,
                    need_split=need_split, need_insample_norm=False,
                )
            except Exception as exc:  # noqa: BLE001
                out["gaps"].append(f"day {day} hour {h} {kind}: fit failed: {exc}")
                continue
            out["centers"][h, k_idx] = _invert(fit.center_full, fit.eta)
            if not forecast_day:
                continue

            if f"{kind}_e" in config.models:
                abs_err = np.abs(fit.insample_err)
                for alpha in config.alphas:
                    iv = empirical_interval(
                        abs_err, alpha, fit.center_full,
                        day=day, hour=h, model_tag=f"{kind}_e",
                    )
                    out["rows"].append(
                        _interval_row(iv, fit.eta, realized, f"{kind}_e")
                    )
                out["qrows"] += _symmetric_quantile_rows(
                    day, h, f"{kind}_e", config.percentiles, realized,
                    fit.center_full,
                    lambda a, e=abs_err: float(np.quantile(e, 1.0 - a)),
                    fit.eta,
                )
            if need_split and f"{kind}_icp" in config.models:
                scores = np.abs(fit.calib_err)
                for alpha in config.alphas:
                    iv = icp_interval(
                        fit.center_split, icp_threshold(scores, alpha),
                        day=day, hour=h, alpha=alpha, model_tag=f"{kind}_icp",
                    )
                    out["rows"].append(
                        _interval_row(iv, fit.eta, realized, f"{kind}_icp")
                    )
                out["qrows"] += _symmetric_quantile_rows(
                    day, h, f"{kind}_icp", config.percentiles, realized,
                    fit.center_split,
                    lambda a, s=scores: icp_threshold(s, a),
                    fit.eta,
                )
            if need_split and f"{kind}_ncp" in config.models:
                norms = floor_normalizers(fit.calib_norm, fit.calib_norm)
                scores = np.abs(fit.calib_err) / norms
                q_norm = float(floor_normalizers(
                    np.array([fit.query_norm_split]), fit.calib_norm
                )[0])
                for alpha in config.alphas:
                    iv = ncp_interval(
                        fit.center_split, icp_threshold(scores, alpha), q_norm,
                        day=day, hour=h, alpha=alpha, model_tag=f"{kind}_ncp",
                    )
                    out["rows"].append(
                        _interval_row(iv, fit.eta, realized, f"{kind}_ncp")
                    )
                out["qrows"] += _symmetric_quantile_rows(
                    day, h, f"{kind}_ncp", config.percentiles, realized,
                    fit.center_split,
                    lambda a, s=scores, qn=q_norm: icp_threshold(s, a) * qn,
                    fit.eta,
                )

        if forecast_day and "naive_e" in config.models:
            try:
                in_days = feat_days[:-1]
                preds = np.array([naive_predict(panel, t, h) for t in in_days])
                abs_err = np.abs(panel.prices[in_days, h] - preds)
                center = naive_predict(panel, day, h)
                for alpha in config.alphas:
                    iv = empirical_interval(
                        abs_err, alpha, center,
                        day=day, hour=h, model_tag="naive_e",
                    )
                    out["rows"].append(_interval_row(iv, None, realized, "naive_e"))
                out["qrows"] += _symmetric_quantile_rows(
                    day, h, "naive_e", config.percentiles, realized, center,
                    lambda a, e=abs_err: float(np.quantile(e, 1.0 - a)),
                    None,
                )
            except Exception as exc:  # noqa: BLE001
                out["gaps"].append(f"day {day} hour {h} naive_e: {exc}")
    return out


class _QraTask:
    """Picklable phase-2 task carrying the shared center cache."""

    def __init__(self, centers: np.ndarray, taus: tuple[float, ...]):
        self.centers = centers
        self.taus = taus

    def __call__(self, day: int) -> dict:
        panel: HourlyPanel = _WORKER["panel"]
        config: BacktestConfig = _WORKER["config"]
        out = {"day": day, "rows": [], "qrows": [], "gaps": []}
        n_cols = len(POINT_KINDS) + 1  # + intercept
        trailing = np.arange(max(0, day - config.qra_days), day)

        for h in range(HOURS):
            hist = self.centers[trailing, h, :]
            ok = np.all(np.isfinite(hist), axis=1)
            pairs = trailing[ok]
            if pairs.size < QRA_MIN_ROWS_PER_COL * n_cols:
                out["gaps"].append(
                    f"day {day} hour {h} qra: only {pairs.size} trailing pairs"
                )
                continue
            today = self.centers[day, h, :]
            if not np.all(np.isfinite(today)):
                out["gaps"].append(f"day {day} hour {h} qra: missing point forecasts")
                continue
            x = self.centers[pairs, h, :]
            y = panel.prices[pairs, h]
            models = {}
            failed = False
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                for tau in self.taus:
                    try:
                        models[tau] = qra_fit(x, y, tau)
                    except Exception as exc:  # noqa: BLE001
                        out["gaps"].append(
                            f"day {day} hour {h} qra tau={tau}: {exc}"
                        )
                        failed = True
                        break
            if failed:
                continue
            realized = float(panel.prices[day, h])
            for alpha in config.alphas:
                lower = qra_predict(models[round(alpha / 2.0, 6)], today)
                upper = qra_predict(models[round(1.0 - alpha / 2.0, 6)], today)
                crossed = lower > upper
                if crossed:
                    lower, upper = upper, lower
                hit = 1 if lower <= realized <= upper else 0
                out["rows"].append(LedgerRow(
                    day=day, hour=h, model="qra", alpha=alpha,
                    lower=lower, upper=upper, center=0.5 * (lower + upper),
                    realized=realized, hit=hit, crossed=bool(crossed),
                ))
            for p in config.percentiles:
                out["qrows"].append(QuantileRow(
                    day=day, hour=h, model="qra", percentile=p,
                    value=qra_predict(models[round(p / 100.0, 6)], today),
                    realized=realized,
                ))
        return out


def _run_days(task, days, panel, config, threads):
    if threads <= 1:
        _init_worker(panel, config)
        return [task(d) for d in days]
    with ProcessPoolExecutor(
        max_workers=threads,
        initializer=_init_worker,
        initargs=(panel, config),
    ) as ex:
        return list(ex.map(task, days, chunksize=max(1, len(days) // (threads * 4))))


def run_backtest(panel: HourlyPanel, config: BacktestConfig,
                 threads: int = 1) -> RunLedger:
    """Run the daily rolling scheme over every out-of-sample day."""
    t0 = time.perf_counter()
    d0 = first_forecast_day(config)
    if panel.n_days < d0 + 1:
        raise ValueError(
            f"panel has {panel.n_days} days; need at least {d0 + 1} "
            "for one forecast day"
        )
    forecast_days = list(range(d0, panel.n_days))
    need_qra = "qra" in config.models

    phase1_start = d0
    if need_qra:
        feasible = WARMUP_DAYS + _min_cache_rows(config)
        phase1_start = min(d0, max(feasible, d0 - config.qra_days))
    phase1_days = list(range(phase1_start, panel.n_days))

    results = _run_days(_phase1_day, phase1_days, panel, config, threads)
    results.sort(key=lambda r: r["day"])

    rows: list[LedgerRow] = []
    qrows: list[QuantileRow] = []
    gaps: list[str] = []
    window_bounds: dict[int, tuple[int, int]] = {}
    centers = np.full((panel.n_days, HOURS, len(POINT_KINDS)), np.nan)
    for res in results:
        centers[res["day"]] = res["centers"]
        rows += res["rows"]
        qrows += res["qrows"]
        gaps += res["gaps"]
        window_bounds[res["day"]] = res["window"]

    if need_qra:
        taus = tuple(sorted(
            {round(a / 2.0, 6) for a in config.alphas}
            | {round(1.0 - a / 2.0, 6) for a in config.alphas}
            | {round(p / 100.0, 6) for p in config.percentiles}
        ))
        qra_results = _run_days(
            _QraTask(centers, taus), forecast_days, panel, config, threads
        )
        qra_results.sort(key=lambda r: r["day"])
        for res in qra_results:
            rows += res["rows"]
            qrows += res["qrows"]
            gaps += res["gaps"]

    error_kinds = {f"{k}_ncp": k for k in POINT_KINDS if f"{k}_ncp" in config.models}
    return RunLedger(
        rows=rows,
        quantile_rows=qrows,
        gaps=gaps,
        config=config,
        config_hash=config.digest(),
        seed=config.seed,
        wall_clock=time.perf_counter() - t0,
        dates=panel.dates,
        window_bounds=window_bounds,
        error_model_kinds=error_kinds,
    )


# ---------------------------------------------------------------------------
# ablation over the symmetry x sampling x normalization lattice

def _ablation_day(day: int) -> dict:
    panel: HourlyPanel = _WORKER["panel"]
    config: BacktestConfig = _WORKER["config"]
    preset = config.preset
    spec = config.forecaster_spec()
    out = {"day": day, "rows": [], "gaps": [], "window": None}
    win_start, n_rows = _window_for(config, day)
    out["window"] = (win_start, day - 1)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            pca = pca_fit(panel, range(win_start, day))
        except Exception as exc:  # noqa: BLE001
            out["gaps"].append(f"day {day}: pca failed: {exc}")
            return out
        feat_days = list(range(win_start + WARMUP_DAYS, day)) + [day]
        split = make_split(n_rows, (config.seed, day), pi=config.pi)

        for h in range(HOURS):
            try:
                x_raw, y_raw = build_matrix(panel, pca, h, feat_days, preset)
            except Exception as exc:  # noqa: BLE001
                out["gaps"].append(f"day {day} hour {h}: features failed: {exc}")
                continue
            realized = float(panel.prices[day, h])
            designs = _HourDesigns(x_raw, y_raw, preset)
            for kind in POINT_KINDS:
                try:
                    fit = _fit_hour(
                        kind, designs, spec, split,
                        need_split=True, need_insample_norm=True,
                    )
                except Exception as exc:  # noqa: BLE001
                    out["gaps"].append(f"day {day} hour {h} {kind}: fit failed: {exc}")
                    continue
                ctx = LatticeContext(
                    center_full=fit.center_full,
                    center_split=fit.center_split,
                    insample_errors=fit.insample_err,
                    calib_errors=fit.calib_err,
                    insample_norms=fit.insample_norm,
                    calib_norms=fit.calib_norm,
                    query_norm_full=fit.query_norm_full,
                    query_norm_split=fit.query_norm_split,
                )
                for variant in ALL_VARIANTS:
                    for alpha in config.alphas:
                        iv = lattice_interval(variant, ctx, alpha, day=day, hour=h)
                        lower, upper, center, unbounded = _price_scale_bounds(
                            iv, fit.eta
                        )
                        hit = 1 if lower <= realized <= upper else 0
                        out["rows"].append(AblationRow(
                            day=day, hour=h, forecaster=kind,
                            symmetric=variant.symmetric, sampled=variant.sampled,
                            normalized=variant.normalized, node=variant.tag,
                            alpha=alpha, lower=lower, upper=upper,
                            center=center, realized=realized, hit=hit,
                            unbounded=unbounded, crossed=iv.crossed,
                        ))
    return out


def run_ablation(panel: HourlyPanel, config: BacktestConfig,
                 threads: int = 1) -> AblationResult:
    """Evaluate all eight lattice nodes for the three point forecasters
    under the identical rolling scheme and per-day splits as
    :func:`run_backtest`, so the shared nodes reproduce that run exactly.
    """
    t0 = time.perf_counter()
    d0 = first_forecast_day(config)
    if panel.n_days < d0 + 1:
        raise ValueError("panel too short for one forecast day")
    days = list(range(d0, panel.n_days))
    results = _run_days(_ablation_day, days, panel, config, threads)
    results.sort(key=lambda r: r["day"])
    rows: list[AblationRow] = []
    gaps: list[str] = []
    window_bounds: dict[int, tuple[int, int]] = {}
    for res in results:
        rows += res["rows"]
        gaps += res["gaps"]
        window_bounds[res["day"]] = res["window"]
    return AblationResult(
        rows=rows, gaps=gaps, config=config, config_hash=config.digest(),
        seed=config.seed, wall_clock=time.perf_counter() - t0,
        dates=panel.dates, window_bounds=window_bounds,
    )


# ---------------------------------------------------------------------------
# aggregation

def _pi_pinball(row) -> float:
    """Table-style convention: the PI-level pinball averages the two
    bound-quantile losses (the 90% PI averages the 5th and 95th)."""
    lo_tau = row.alpha / 2.0
    return 0.5 * (
        pinball(row.lower, row.realized, lo_tau)
        + pinball(row.upper, row.realized, 1.0 - lo_tau)
    )


_SCORE_COLUMNS = ["model", "hour", "alpha", "n", "n_unbounded", "coverage",
                  "mean_width", "mean_winkler", "mean_pinball"]


def aggregate_scores(rows) -> pd.DataFrame:
    """Per (model, hour, alpha): coverage, width, Winkler and PI-pinball.

    Unbounded intervals count as covering but are excluded from the width,
    Winkler and pinball means.
    """
    records = []
    for row in rows:
        model = row.model if hasattr(row, "model") else row.node
        finite = not row.unbounded
        records.append({
            "model": model,
            "hour": row.hour,
            "alpha": row.alpha,
            "hit": row.hit,
            "unbounded": row.unbounded,
            "width": (row.upper - row.lower) if finite else np.nan,
            "winkler": winkler(row.realized, row.lower, row.upper, row.alpha)
            if finite else np.nan,
            "pinball": _pi_pinball(row) if finite else np.nan,
        })
    if not records:
        return pd.DataFrame(columns=_SCORE_COLUMNS)
    df = pd.DataFrame.from_records(records)
    out = df.groupby(["model", "hour", "alpha"], sort=True).agg(
        n=("hit", "size"),
        n_unbounded=("unbounded", "sum"),
        coverage=("hit", "mean"),
        mean_width=("width", "mean"),
        mean_winkler=("winkler", "mean"),
        mean_pinball=("pinball", "mean"),
    ).reset_index()
    out["n_unbounded"] = out["n_unbounded"].astype(int)
    return out


def christoffersen_table(ledger: RunLedger, min_length: int = 30) -> pd.DataFrame:
    """Hourly likelihood-ratio coverage tests per (model, alpha); series
    shorter than ``min_length`` are skipped."""
    by_key: dict[tuple, list] = {}
    for row in ledger.rows:
        by_key.setdefault((row.model, row.alpha, row.hour), []).append(row)
    records = []
    for (model, alpha, hour), group in sorted(by_key.items()):
        group.sort(key=lambda r: r.day)
        hits = np.array([r.hit for r in group], dtype=np.int8)
        if hits.size < min_length:
            continue
        res = christoffersen(hits, p=1.0 - alpha, min_length=min_length)
        records.append({
            "model": model, "hour": hour, "alpha": alpha,
            "lr_uc": res.lr_uc, "p_uc": res.p_uc,
            "lr_ind": res.lr_ind, "p_ind": res.p_ind,
            "lr_cc": res.lr_cc, "p_cc": res.p_cc,
            "degenerate": res.degenerate,
        })
    return pd.DataFrame.from_records(
        records,
        columns=["model", "hour", "alpha", "lr_uc", "p_uc", "lr_ind",
                 "p_ind", "lr_cc", "p_cc", "degenerate"],
    )


def _node_metrics(result: AblationResult) -> pd.DataFrame:
    records = []
    for r in result.rows:
        finite = not r.unbounded
        records.append({
            "forecaster": r.forecaster,
            "symmetric": r.symmetric,
            "sampled": r.sampled,
            "normalized": r.normalized,
            "node": r.node,
            "alpha": r.alpha,
            "hit": r.hit,
            "width": (r.upper - r.lower) if finite else np.nan,
            "winkler": winkler(r.realized, r.lower, r.upper, r.alpha)
            if finite else np.nan,
            "pinball": _pi_pinball(r) if finite else np.nan,
        })
    df = pd.DataFrame.from_records(records)
    return df.groupby(
        ["forecaster", "alpha", "node", "symmetric", "sampled", "normalized"],
        sort=True,
    ).agg(
        coverage=("hit", "mean"),
        mean_width=("width", "mean"),
        mean_winkler=("winkler", "mean"),
        mean_pinball=("pinball", "mean"),
    ).reset_index()


def ablation_node_table(result: AblationResult) -> pd.DataFrame:
    """8 nodes x 3 forecasters x PI levels with the shared metrics."""
    return _node_metrics(result)


EXTENSION_BITS = (("symmetric", "symmetry"), ("sampled", "sampling"),
                  ("normalized", "normalization"))


def ablation_edge_table(result: AblationResult) -> pd.DataFrame:
    """The 12 directed extension edges of the lattice cube per
    (forecaster, PI level): each edge toggles one extension on and reports
    the metric deltas (to minus from)."""
    nodes = _node_metrics(result)
    records = []
    for (fc, alpha), grp in nodes.groupby(["forecaster", "alpha"], sort=True):
        lookup = {
            (bool(r["symmetric"]), bool(r["sampled"]), bool(r["normalized"])): r
            for _, r in grp.iterrows()
        }
        for bits in sorted(lookup):
            row = lookup[bits]
            for i, (_, label) in enumerate(EXTENSION_BITS):
                if bits[i]:
                    continue
                to_bits = tuple(b or (j == i) for j, b in enumerate(bits))
                if to_bits not in lookup:
                    continue
                to_row = lookup[to_bits]
                records.append({
                    "forecaster": fc,
                    "alpha": alpha,
                    "extension": label,
                    "from_node": row["node"],
                    "to_node": to_row["node"],
                    "delta_winkler": to_row["mean_winkler"] - row["mean_winkler"],
                    "delta_pinball": to_row["mean_pinball"] - row["mean_pinball"],
                    "delta_width": to_row["mean_width"] - row["mean_width"],
                })
    return pd.DataFrame.from_records(records)


def audit_no_lookahead(ledger) -> list[str]:
    """Check the recorded window bounds: every fit window must end strictly
    before its target day. Exogenous values at the target day are
    day-ahead forecasts and exempt by design."""
    problems = []
    for day, (start, end) in sorted(ledger.window_bounds.items()):
        if end >= day:
            problems.append(f"day {day}: window [{start}, {end}] reaches the target")
        if start > end:
            problems.append(f"day {day}: empty window [{start}, {end}]")
    return problems
