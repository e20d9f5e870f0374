"""Command-line surface: validate input files, run backtests and the
lattice ablation, and export plot-ready tidy tables.

Exit codes: 0 success, 2 schema/usage failure, 3 panel validation
failure, 4 backtest/ablation fatal. ``CPP_SEED`` in the environment
overrides ``--seed``. A flat key=value config file (keys named like the
long flags) supplies values for any flag not given explicitly; explicit
flags win, built-in defaults lose.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import __version__
from .backtest import (
    DEFAULT_ALPHAS,
    DEFAULT_PERCENTILES,
    DEFAULT_ROSTER,
    BacktestConfig,
    RunLedger,
    ablation_edge_table,
    ablation_node_table,
    aggregate_scores,
    christoffersen_table,
    run_ablation,
    run_backtest,
)
from .evaluate import coverage_deviation_curve, pinball, winkler
from .features import PRESETS, get_preset
from .ingest import PanelValidationError, SchemaError, load_panel, summary_stats, tukey_outliers

LR_PLOT_CAP = 20.0  # presentation rule for exported test statistics only

_MARKETS = click.Choice(sorted(PRESETS))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config_file(ctx: click.Context, config_path: str | None) -> None:
    """Fill parameters that were left at their defaults from the config file."""
    if not config_path:
        return
    values = _read_config_file(config_path)
    for param in ctx.command.params:
        name = param.name
        if name in ("config", "input_path", "out_dir") or name not in values:
            continue
        if ctx.get_parameter_source(name) is click.core.ParameterSource.DEFAULT:
            ctx.params[name] = param.type_cast_value(ctx, values[name])
    unknown = set(values) - {p.name for p in ctx.command.params}
    if unknown:
        raise click.UsageError(f"unknown config keys: {sorted(unknown)}")


def _parse_models(spec: str) -> tuple[str, ...]:
    names = tuple(m.strip() for m in spec.split(",") if m.strip())
    unknown = sorted(set(names) - set(DEFAULT_ROSTER))
    if unknown:
        raise click.UsageError(
            f"unknown models {unknown}; choose from {','.join(DEFAULT_ROSTER)}"
        )
    return names


def _parse_alphas(spec: str) -> tuple[float, ...]:
    try:
        alphas = tuple(float(a) for a in spec.split(",") if a.strip())
    except ValueError:
        raise click.UsageError(f"cannot parse alpha list {spec!r}") from None
    return alphas


def _parse_percentiles(spec: str) -> tuple[int, ...]:
    if spec.strip().lower() in ("", "none"):
        return ()
    try:
        return tuple(int(p) for p in spec.split(",") if p.strip())
    except ValueError:
        raise click.UsageError(f"cannot parse percentile list {spec!r}") from None


def _effective_seed(seed: int) -> int:
    env = os.environ.get("CPP_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise click.UsageError(f"CPP_SEED={env!r} is not an integer") from None
    return seed


def _load(input_path: str, market: str, drop_outliers: bool = False):
    try:
        return load_panel(input_path, get_preset(market), drop_outliers=drop_outliers)
    except SchemaError as exc:
        click.echo(f"schema error: {exc}", err=True)
        sys.exit(2)
    except PanelValidationError as exc:
        click.echo(f"validation error: {exc}", err=True)
        sys.exit(3)


@click.group()
@click.version_option(version=__version__, prog_name="priceband")
def main() -> None:
    """Prediction intervals for hourly power prices under a rolling backtest."""


@main.command("validate")
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--market", required=True, type=_MARKETS)
def cmd_validate(input_path: str, market: str) -> None:
    """Load and validate a market CSV; print summary statistics and the
    fence-outlier report."""
    panel = _load(input_path, market)
    stats = summary_stats(panel)
    report = tukey_outliers(panel)
    click.echo(f"panel: {panel.n_days} days x 24 hours, market={market}")
    for key in ("mean", "sd", "q1", "q3", "min", "max"):
        click.echo(f"{key}: {stats[key]:.4f}")
    click.echo(f"outliers flagged: {report.n_flagged}")
    for t, h in report.flagged_cells()[:50]:
        lo, hi = report.fences[h]
        click.echo(
            f"  {panel.dates[t].isoformat()} hour {h + 1}: "
            f"{panel.prices[t, h]:.2f} outside [{lo:.2f}, {hi:.2f}]"
        )
    if report.n_flagged > 50:
        click.echo(f"  ... and {report.n_flagged - 50} more")


def _write_ledger_csv(path: Path, ledger: RunLedger) -> None:
    rows = sorted(
        ledger.rows, key=lambda r: (r.day, r.hour, r.model, r.alpha)
    )
    _write_csv(
        path,
        ["date", "hour", "model", "alpha", "lower", "upper", "center",
         "realized", "hit"],
        (
            (ledger.dates[r.day].isoformat(), r.hour + 1, r.model, r.alpha,
             r.lower, r.upper, r.center, r.realized, r.hit)
            for r in rows
        ),
    )


def _write_flags_csv(path: Path, ledger: RunLedger) -> int:
    flagged = [
        (r, "unbounded" if r.unbounded else "crossed")
        for r in sorted(ledger.rows, key=lambda r: (r.day, r.hour, r.model, r.alpha))
        if r.unbounded or r.crossed
    ]
    if flagged:
        _write_csv(
            path,
            ["date", "hour", "model", "alpha", "flag"],
            (
                (ledger.dates[r.day].isoformat(), r.hour + 1, r.model, r.alpha, flag)
                for r, flag in flagged
            ),
        )
    return len(flagged)


def _write_scores_csv(path: Path, ledger: RunLedger) -> None:
    df = aggregate_scores(ledger.rows)
    _write_csv(
        path,
        ["model", "hour", "alpha", "n", "n_unbounded", "coverage",
         "mean_width", "mean_winkler", "mean_pinball"],
        (
            (r.model, int(r.hour) + 1, r.alpha, int(r.n), int(r.n_unbounded),
             float(r.coverage), float(r.mean_width), float(r.mean_winkler),
             float(r.mean_pinball))
            for r in df.itertuples()
        ),
    )


def _write_christoffersen_csv(path: Path, ledger: RunLedger) -> None:
    df = christoffersen_table(ledger)
    _write_csv(
        path,
        ["model", "hour", "alpha", "lr_uc", "p_uc", "lr_ind", "p_ind",
         "lr_cc", "p_cc", "degenerate"],
        (
            (r.model, int(r.hour) + 1, r.alpha, float(r.lr_uc), float(r.p_uc),
             float(r.lr_ind), float(r.p_ind), float(r.lr_cc), float(r.p_cc),
             int(r.degenerate))
            for r in df.itertuples()
        ),
    )


def _write_quantiles_csv(path: Path, ledger: RunLedger) -> None:
    rows = sorted(
        ledger.quantile_rows,
        key=lambda r: (r.day, r.hour, r.model, r.percentile),
    )
    _write_csv(
        path,
        ["date", "hour", "model", "percentile", "value", "realized"],
        (
            (ledger.dates[r.day].isoformat(), r.hour + 1, r.model,
             r.percentile, r.value, r.realized)
            for r in rows
        ),
    )


def _write_manifest(out_dir: Path, command: str, config: BacktestConfig,
                    inputs: dict[str, str], outputs: list[Path],
                    extra: dict, wall_clock: float) -> Path:
    manifest = {
        "artifact": {"name": "priceband", "version": __version__},
        "command": command,
        "config": config.canonical(),
        "config_hash": config.digest(),
        "seed": config.seed,
        "inputs": inputs,
        "outputs": {p.name: _sha256(p) for p in outputs},
        "wall_clock_seconds": wall_clock,
        **extra,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _backtest_options(fn):
    fn = click.option("--input", "input_path", required=True,
                      type=click.Path(exists=True, dir_okay=False))(fn)
    fn = click.option("--market", required=True, type=_MARKETS)(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    fn = click.option("--param-days", "param_days", type=int, default=330,
                      show_default=True,
                      help="Length of the rolling parameterization window.")(fn)
    fn = click.option("--out", "out_dir", required=True,
                      type=click.Path(file_okay=False))(fn)
    fn = click.option("--threads", type=int, default=os.cpu_count() or 1,
                      show_default="available cores")(fn)
    fn = click.option("--knn-k", "knn_k", type=int, default=None,
                      help="Override the market preset's neighbour count "
                           "(desk-scale runs need k below the train rows).")(fn)
    fn = click.option("--drop-outliers", is_flag=True, default=False,
                      help="Remove fence-flagged cells and re-impute before "
                           "modelling (report-only by default).")(fn)
    fn = click.option("--config", "config", type=click.Path(exists=True,
                      dir_okay=False), default=None,
                      help="Flat key=value file supplying defaults for any "
                           "flag not given explicitly.")(fn)
    return fn


@main.command("backtest")
@_backtest_options
@click.option("--models", default=",".join(DEFAULT_ROSTER), show_default=True)
@click.option("--alpha", "alphas", default=",".join(map(str, DEFAULT_ALPHAS)),
              show_default=True)
@click.option("--percentiles", default=",".join(map(str, DEFAULT_PERCENTILES)),
              show_default=True, help="One-sided percentile grid for the "
              "quantile export; 'none' disables it.")
@click.option("--qra-days", "qra_days", type=int, default=56, show_default=True)
@click.pass_context
def cmd_backtest(ctx, input_path, market, seed, param_days, out_dir, threads,
                 knn_k, drop_outliers, config, models, alphas, percentiles,
                 qra_days) -> None:
    """Run the rolling out-of-sample backtest and write the ledger, score,
    coverage-test and quantile tables plus a manifest."""
    _apply_config_file(ctx, config)
    p = ctx.params
    t0 = time.perf_counter()
    run_config = BacktestConfig(
        market=p["market"],
        parameterization_days=int(p["param_days"]),
        models=_parse_models(p["models"]),
        alphas=_parse_alphas(p["alphas"]),
        percentiles=_parse_percentiles(p["percentiles"]),
        seed=_effective_seed(int(p["seed"])),
        qra_days=int(p["qra_days"]),
        knn_k=p["knn_k"],
        drop_outliers=bool(p["drop_outliers"]),
    )
    panel = _load(p["input_path"], p["market"], run_config.drop_outliers)
    try:
        ledger = run_backtest(panel, run_config, threads=int(p["threads"]))
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        click.echo(f"backtest failed: {exc}", err=True)
        sys.exit(4)

    out = Path(p["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    _write_ledger_csv(out / "ledger.csv", ledger)
    outputs.append(out / "ledger.csv")
    _write_scores_csv(out / "scores.csv", ledger)
    outputs.append(out / "scores.csv")
    _write_christoffersen_csv(out / "christoffersen.csv", ledger)
    outputs.append(out / "christoffersen.csv")
    if ledger.quantile_rows:
        _write_quantiles_csv(out / "quantiles.csv", ledger)
        outputs.append(out / "quantiles.csv")
    n_flagged = _write_flags_csv(out / "flags.csv", ledger)
    if n_flagged:
        outputs.append(out / "flags.csv")

    _write_manifest(
        out, "backtest", run_config,
        inputs={str(p["input_path"]): _sha256(Path(p["input_path"]))},
        outputs=outputs,
        extra={
            "gaps": ledger.gaps,
            "n_flagged_rows": n_flagged,
            "error_model_kinds": ledger.error_model_kinds,
            "forecast_days": len(ledger.window_bounds),
        },
        wall_clock=time.perf_counter() - t0,
    )
    click.echo(
        f"wrote {len(outputs) + 1} files to {out} "
        f"({len(ledger.rows)} ledger rows, {len(ledger.gaps)} gaps)"
    )


@main.command("ablate")
@_backtest_options
@click.option("--alpha", "alphas", default=",".join(map(str, DEFAULT_ALPHAS)),
              show_default=True)
@click.pass_context
def cmd_ablate(ctx, input_path, market, seed, param_days, out_dir, threads,
               knn_k, drop_outliers, config, alphas) -> None:
    """Run the symmetry/sampling/normalization lattice for the three point
    forecasters; write the 8-node table and the extension-edge deltas."""
    _apply_config_file(ctx, config)
    p = ctx.params
    t0 = time.perf_counter()
    run_config = BacktestConfig(
        market=p["market"],
        parameterization_days=int(p["param_days"]),
        models=DEFAULT_ROSTER,
        alphas=_parse_alphas(p["alphas"]),
        percentiles=(),
        seed=_effective_seed(int(p["seed"])),
        knn_k=p["knn_k"],
        drop_outliers=bool(p["drop_outliers"]),
    )
    panel = _load(p["input_path"], p["market"], run_config.drop_outliers)
    try:
        result = run_ablation(panel, run_config, threads=int(p["threads"]))
    except Exception as exc:  # noqa: BLE001
        click.echo(f"ablation failed: {exc}", err=True)
        sys.exit(4)

    out = Path(p["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    nodes = ablation_node_table(result)
    _write_csv(
        out / "nodes.csv",
        ["forecaster", "alpha", "node", "symmetric", "sampled", "normalized",
         "coverage", "mean_width", "mean_winkler", "mean_pinball"],
        (
            (r.forecaster, r.alpha, r.node, int(r.symmetric), int(r.sampled),
             int(r.normalized), float(r.coverage), float(r.mean_width),
             float(r.mean_winkler), float(r.mean_pinball))
            for r in nodes.itertuples()
        ),
    )
    edges = ablation_edge_table(result)
    _write_csv(
        out / "edges.csv",
        ["forecaster", "alpha", "extension", "from_node", "to_node",
         "delta_winkler", "delta_pinball", "delta_width"],
        (
            (r.forecaster, r.alpha, r.extension, r.from_node, r.to_node,
             float(r.delta_winkler), float(r.delta_pinball),
             float(r.delta_width))
            for r in edges.itertuples()
        ),
    )
    _write_manifest(
        out, "ablate", run_config,
        inputs={str(p["input_path"]): _sha256(Path(p["input_path"]))},
        outputs=[out / "nodes.csv", out / "edges.csv"],
        extra={"gaps": result.gaps},
        wall_clock=time.perf_counter() - t0,
    )
    click.echo(f"wrote nodes.csv, edges.csv, manifest.json to {out}")


def _plot_winkler_hourly(ledger_df: pd.DataFrame):
    rows = []
    for (model, alpha, hour), grp in ledger_df.groupby(["model", "alpha", "hour"]):
        finite = grp[np.isfinite(grp["lower"]) & np.isfinite(grp["upper"])]
        scores = [
            winkler(r.realized, r.lower, r.upper, r.alpha)
            for r in finite.itertuples()
        ]
        rows.append((model, alpha, hour, float(np.mean(scores)) if scores else math.nan))
    return ["model", "alpha", "hour", "mean_winkler"], rows


def _plot_lr_hourly(run_dir: Path):
    path = run_dir / "christoffersen.csv"
    if not path.exists():
        raise click.UsageError(f"{path} not found next to the ledger")
    df = pd.read_csv(path)
    rows = []
    for r in df.itertuples():
        for test in ("uc", "ind", "cc"):
            rows.append((
                r.model, r.alpha, r.hour, test,
                min(float(getattr(r, f"lr_{test}")), LR_PLOT_CAP),
            ))
    return ["model", "alpha", "hour", "test", "lr"], rows


def _plot_pinball_percentile(run_dir: Path):
    path = run_dir / "quantiles.csv"
    if not path.exists():
        raise click.UsageError(f"{path} not found next to the ledger")
    df = pd.read_csv(path)
    rows = []
    for (model, p), grp in df.groupby(["model", "percentile"]):
        finite = grp[np.isfinite(grp["value"])]
        losses = [
            pinball(r.value, r.realized, p / 100.0) for r in finite.itertuples()
        ]
        rows.append((model, int(p), float(np.mean(losses)) if losses else math.nan))
    return ["model", "percentile", "mean_pinball"], rows


def _plot_coverage_dev(run_dir: Path):
    path = run_dir / "quantiles.csv"
    if not path.exists():
        raise click.UsageError(f"{path} not found next to the ledger")
    df = pd.read_csv(path)
    rows = []
    for model, grp in df.groupby("model"):
        quantiles = {
            int(p): sub["value"].to_numpy()
            for p, sub in grp.groupby("percentile")
        }
        realized = {
            int(p): sub["realized"].to_numpy()
            for p, sub in grp.groupby("percentile")
        }
        first = next(iter(realized))
        try:
            curve = coverage_deviation_curve(quantiles, realized[first])
        except ValueError as exc:
            raise click.UsageError(f"model {model}: {exc}") from None
        rows += [(model, p, dev) for p, dev in curve.items()]
    return ["model", "percentile", "deviation"], rows


@main.command("plotdata")
@click.option("--ledger", "ledger_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", required=True,
              type=click.Choice(["winkler_hourly", "pinball_percentile",
                                 "coverage_dev", "lr_hourly"]))
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Output CSV path; stdout when omitted.")
def cmd_plotdata(ledger_path: str, kind: str, out_path: str | None) -> None:
    """Emit a long-format CSV for one plot family from a backtest run
    directory (sibling files of the ledger are used where needed). The
    likelihood-ratio export caps statistics at 20; stored statistics are
    never capped."""
    run_dir = Path(ledger_path).parent
    if kind == "winkler_hourly":
        header, rows = _plot_winkler_hourly(pd.read_csv(ledger_path))
    elif kind == "lr_hourly":
        header, rows = _plot_lr_hourly(run_dir)
    elif kind == "pinball_percentile":
        header, rows = _plot_pinball_percentile(run_dir)
    else:
        header, rows = _plot_coverage_dev(run_dir)

    if out_path is None:
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    else:
        _write_csv(Path(out_path), header, rows)
        click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
