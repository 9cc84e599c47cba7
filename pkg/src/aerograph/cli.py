"""Command-line driver for the full pipeline.

Every subcommand that consumes a trained run takes --run pointing at the
directory the `train` command produced; relative paths given to --cases,
--flights, --run, and --out resolve under $AEROGRAPH_DATA_DIR when that
variable is set. Exit codes: 0 success, 1 usage, 2 bad data or failed
validation, 3 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import numerics as nx
from .analysis import (
    DEFAULT_HORIZON,
    AnalysisError,
    policy_sweep,
    sensitivity_sweep,
)
from .dataio import (
    REGIONS,
    DataError,
    load_cases,
    load_flights,
    make_windows,
    preprocess,
    region_code,
    split_windows,
)
from .forecast import (
    ForecastError,
    compute_bias_factors,
    corrected_raw,
    forecast_windows_raw,
    qualifying_windows,
)
from .manifest import (
    BIAS_NAME,
    CHECKPOINT_DIR,
    FORECAST_CSV,
    POLICY_CSV,
    POLICY_JSON,
    SENSITIVITY_CSV,
    SENSITIVITY_JSON,
    ManifestError,
    load_run,
    new_manifest,
    save_manifest,
)
from .service import ApiError, evaluate_policy_payload
from .stats import StatsError
from .synthetic import SynthConfig, synthesize
from .training import TrainConfig, TrainingError, train_ensemble


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through the exit-code contract."""

    def error(self, message):
        raise UsageError(message)


def _resolve(path: str | None) -> str | None:
    """Relative paths land under $AEROGRAPH_DATA_DIR when it is set."""
    if path is None:
        return None
    base = os.environ.get("AEROGRAPH_DATA_DIR")
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _percent(text: str, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise UsageError(f"{what} must be a number, got {text!r}")
    if not 0.0 <= value <= 100.0:
        raise UsageError(f"{what} must lie in [0, 100], got {text}")
    return value / 100.0


def _parse_levels(text: str) -> tuple[float, ...]:
    levels = tuple(_percent(part, "level") for part in text.split(",") if part)
    if not levels:
        raise UsageError("at least one level is required")
    if any(l == 0.0 for l in levels):
        raise UsageError("levels must be positive percentages; 0 is always included")
    return levels


def _parse_reductions(text: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for pair in text.split(","):
        pair = pair.strip()
        if not pair:
            continue
        if "=" not in pair:
            raise UsageError(f"reductions look like CODE=PERCENT, got {pair!r}")
        key, _, value = pair.partition("=")
        out[key.strip()] = _percent(value.strip(), f"reduction for {key.strip()}")
    if not out:
        raise UsageError("no reductions given")
    return out


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_ingest(args) -> int:
    cases = load_cases(_resolve(args.cases))
    flights = load_flights(_resolve(args.flights))
    result = preprocess(cases, flights)
    windows = make_windows(result.graphs)
    print(f"dataset spans {result.total_days} days, {len(result.graphs)} retained")
    if result.deleted_days:
        print(f"dropped {len(result.deleted_days)} days with missing values")
    print(f"{len(result.runs)} consecutive runs")
    print(f"{len(windows)} training windows")
    return 0


def cmd_synth(args) -> int:
    config = SynthConfig(days=args.days, seed=args.seed)
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc))
    cases_path, flights_path = synthesize(config, _resolve(args.out))
    print(f"wrote {cases_path}")
    print(f"wrote {flights_path}")
    return 0


def cmd_train(args) -> int:
    cases_path = _resolve(args.cases)
    flights_path = _resolve(args.flights)
    run_dir = _resolve(args.out)
    result = preprocess(load_cases(cases_path), load_flights(flights_path))
    split = split_windows(make_windows(result.graphs))
    config = TrainConfig(
        epochs=args.epochs,
        seed=args.seed,
        ensemble_size=args.ensemble,
        hidden_dim=args.hidden_dim,
    )
    manifest = new_manifest(cases_path, flights_path, config)
    save_manifest(run_dir, manifest)

    def progress(index, report):
        print(
            f"member {index} (seed {report.seed}): best val MASE "
            f"{report.best_val_loss:.6f} at epoch {report.selected_epoch}"
        )

    train_ensemble(
        split, config, out_dir=os.path.join(run_dir, CHECKPOINT_DIR), on_member=progress
    )
    print(f"trained {config.ensemble_size} members into {run_dir}")
    print(f"manifest hash {manifest.hash}")
    return 0


def cmd_bias(args) -> int:
    run_dir = _resolve(args.run)
    state = load_run(run_dir, require_bias=False)
    pairs = qualifying_windows(state.graphs, state.windows, args.days)
    models = state.models[: args.models] if args.models else state.models
    factors = compute_bias_factors(models, pairs, args.days)
    path = os.path.join(run_dir, BIAS_NAME)
    _write_json(path, {"manifest_hash": state.manifest.hash, **factors.to_json()})
    for name, value in zip(REGIONS, factors.factors):
        print(f"{region_code(name):>4s}  {value:.6f}")
    print(
        f"fitted on {factors.num_windows} windows, horizon {factors.horizon}, "
        f"{factors.guarded_terms} guarded terms -> {path}"
    )
    return 0


def cmd_forecast(args) -> int:
    run_dir = _resolve(args.run)
    state = load_run(run_dir)
    pairs = qualifying_windows(state.graphs, state.windows, args.days)
    if not pairs:
        raise DataError(f"no window has {args.days} consecutive observed days after it")
    models = state.models[: args.models] if args.models else state.models
    raw = forecast_windows_raw(models, pairs, args.days)
    corrected = corrected_raw(raw, state.factors)
    out_path = _resolve(args.out) or os.path.join(run_dir, FORECAST_CSV)
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    rows = 0
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["window_start", "model_index", "day", "region",
             "raw_prediction", "corrected_prediction"]
        )
        for wi, (window, _) in enumerate(pairs):
            start = window.start.isoformat()
            for mi in range(len(models)):
                for day in range(args.days):
                    for ri, name in enumerate(REGIONS):
                        writer.writerow(
                            [start, mi, day + 1, name,
                             f"{raw[mi, wi, day, ri]:.6f}",
                             f"{corrected[mi, wi, day, ri]:.6f}"]
                        )
                        rows += 1
    print(f"{rows} rows ({len(pairs)} windows, {len(models)} models) -> {out_path}")
    return 0


def cmd_sensitivity(args) -> int:
    run_dir = _resolve(args.run)
    state = load_run(run_dir)
    pairs = qualifying_windows(state.graphs, state.windows, args.days)
    if not pairs:
        raise DataError(f"no window has {args.days} consecutive observed days after it")
    models = state.models[: args.models] if args.models else state.models
    sweep = sensitivity_sweep(models, pairs, state.factors, args.days)
    out_dir = _resolve(args.out) or run_dir
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, SENSITIVITY_CSV)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_start", "region", "mu", "mu_normalized", "rank"])
        for rec in sweep.records:
            writer.writerow(
                [rec.window_start.isoformat(), rec.region,
                 f"{rec.fit.mu:.6f}", f"{rec.mu_normalized:.6f}", rec.rank]
            )
    json_path = os.path.join(out_dir, SENSITIVITY_JSON)
    _write_json(json_path, {"manifest_hash": state.manifest.hash, **sweep.to_json()})
    print(f"{len(sweep.records)} records over {len(sweep.window_starts)} windows")
    for place, name in enumerate(sweep.overall_ranking, start=1):
        print(
            f"{place:2d}. {region_code(name):>4s}  "
            f"median normalized mu {sweep.region_medians[name]:.4f}"
        )
    print(f"wrote {csv_path} and {json_path}")
    return 0


def _latest_qualifying_start(state, days: int) -> str:
    pairs = qualifying_windows(state.graphs, state.windows, days)
    if not pairs:
        raise DataError(f"no window has {days} consecutive observed days after it")
    return pairs[-1][0].start.isoformat()


def cmd_policy(args) -> int:
    run_dir = _resolve(args.run)
    state = load_run(run_dir)

    if args.reductions:
        reductions = _parse_reductions(args.reductions)
        window_start = args.window or _latest_qualifying_start(state, args.days)
        payload = evaluate_policy_payload(
            state, reductions, window_start, args.days, args.models or None
        )
        text = json.dumps(payload, indent=1)
        print(text)
        if args.out:
            out_path = _resolve(args.out)
            os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
            with open(out_path, "w") as fh:
                fh.write(text + "\n")
            print(f"wrote {out_path}", file=sys.stderr)
        return 0

    if not args.nodes:
        raise UsageError("either --nodes (grid sweep) or --reductions is required")
    nodes = [part.strip() for part in args.nodes.split(",") if part.strip()]
    levels = _parse_levels(args.levels)
    pairs = qualifying_windows(state.graphs, state.windows, args.days)
    if not pairs:
        raise DataError(f"no window has {args.days} consecutive observed days after it")
    models = state.models[: args.models] if args.models else state.models
    sweep = policy_sweep(
        models, pairs, nodes, state.factors, state.graphs,
        levels=levels, horizon=args.days,
        max_policies=args.max_policies, sample_seed=args.seed,
    )
    out_dir = _resolve(args.out) or run_dir
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, POLICY_CSV)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["policy_id", "reductions", "avg_daily_flight_reduction",
             "impact", "quadrant"]
        )
        for r in sweep.results:
            pairs_text = ";".join(
                f"{region_code(name)}:{frac:.2f}"
                for name, frac in r.policy.perturbation.fractions
            )
            writer.writerow(
                [r.policy.id, pairs_text, f"{r.avg_daily_flight_reduction:.6f}",
                 f"{r.impact:.6f}", r.quadrant]
            )
    json_path = os.path.join(out_dir, POLICY_JSON)
    _write_json(json_path, {"manifest_hash": state.manifest.hash, **sweep.to_json()})
    counts = {q: 0 for q in ("Q1", "Q2", "Q3", "Q4")}
    for r in sweep.results:
        counts[r.quadrant] += 1
    print(f"{len(sweep.results)} policies evaluated over {len(pairs)} windows")
    print(
        "quadrants: "
        + "  ".join(f"{q}={counts[q]}" for q in ("Q1", "Q2", "Q3", "Q4"))
    )
    print(f"wrote {csv_path} and {json_path}")
    return 0


def cmd_plots(args) -> int:
    run_dir = _resolve(args.run)
    state = load_run(run_dir, require_bias=False)
    out_dir = _resolve(args.out) or os.path.join(run_dir, "plots")
    os.makedirs(out_dir, exist_ok=True)
    written = []

    reports = []
    ckpt_dir = os.path.join(run_dir, state.manifest.checkpoint_dir)
    for i in range(state.manifest.train_config.ensemble_size):
        report_path = os.path.join(ckpt_dir, f"report_{i:03d}.json")
        if os.path.exists(report_path):
            with open(report_path) as fh:
                reports.append(json.load(fh))

    if reports:
        curves = [
            {
                "member": i,
                "seed": rep["seed"],
                "train_losses": rep["train_losses"],
                "val_losses": rep["val_losses"],
                "selected_epoch": rep["selected_epoch"],
            }
            for i, rep in enumerate(reports)
        ]
        path = os.path.join(out_dir, "training_curves.json")
        _write_json(path, {"manifest_hash": state.manifest.hash, "members": curves})
        written.append(path)

        flow = [
            {"member": i, "seed": rep["seed"], "epochs": rep["grad_flow"]}
            for i, rep in enumerate(reports)
        ]
        path = os.path.join(out_dir, "gradient_flow.json")
        _write_json(path, {"manifest_hash": state.manifest.hash, "members": flow})
        written.append(path)

    if state.factors is not None:
        path = os.path.join(out_dir, "bias_factors.json")
        _write_json(
            path,
            {
                "manifest_hash": state.manifest.hash,
                "factors": {
                    name: float(v) for name, v in zip(REGIONS, state.factors.factors)
                },
                "guarded_terms": state.factors.guarded_terms,
                "horizon": state.factors.horizon,
            },
        )
        written.append(path)

    if state.sensitivity is not None:
        s = state.sensitivity
        path = os.path.join(out_dir, "sensitivity_rankings.json")
        _write_json(
            path,
            {
                "manifest_hash": state.manifest.hash,
                "overall_ranking": s.overall_ranking,
                "region_medians": s.region_medians,
                "windows": [d.isoformat() for d in s.window_starts],
                "records": [rec.to_json() for rec in s.records],
            },
        )
        written.append(path)

    if state.sweep is not None:
        path = os.path.join(out_dir, "policy_map.json")
        _write_json(
            path,
            {
                "manifest_hash": state.manifest.hash,
                "median_reduction": state.sweep.median_reduction,
                "median_impact": state.sweep.median_impact,
                "points": [
                    {
                        "policy_id": r.policy.id,
                        "avg_daily_flight_reduction": r.avg_daily_flight_reduction,
                        "impact": r.impact,
                        "quadrant": r.quadrant,
                    }
                    for r in state.sweep.results
                ],
            },
        )
        written.append(path)

    if args.days and state.factors is not None:
        pairs = qualifying_windows(state.graphs, state.windows, args.days)
        if pairs:
            models = state.models[: args.models] if args.models else state.models
            raw = forecast_windows_raw(models, pairs, args.days)
            corrected = corrected_raw(raw, state.factors).mean(axis=0)
            by_date = {g.date: g for g in state.graphs}
            series = []
            for wi, (window, futures) in enumerate(pairs):
                actual = np.stack([g.raw_cases for g in futures])
                series.append(
                    {
                        "window_start": window.start.isoformat(),
                        "regions": {
                            name: {
                                "predicted": [float(v) for v in corrected[wi, :, ri]],
                                "actual": [float(v) for v in actual[:, ri]],
                            }
                            for ri, name in enumerate(REGIONS)
                        },
                    }
                )
            path = os.path.join(out_dir, "forecast_vs_actual.json")
            _write_json(
                path,
                {
                    "manifest_hash": state.manifest.hash,
                    "days": args.days,
                    "ensemble_size": len(models),
                    "windows": series,
                },
            )
            written.append(path)

    if not written:
        print("nothing to plot yet: train the run first")
        return 0
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    run_dir = _resolve(args.run)
    app = build_app(run_dir)
    port = args.port or int(os.environ.get("AEROGRAPH_PORT", "8000"))
    uvicorn.run(app, host=args.host, port=port, log_level="info")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aerograph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and preprocess a dataset")
    p.add_argument("--cases", required=True, help="daily case counts CSV")
    p.add_argument("--flights", required=True, help="daily flight counts CSV")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("synth", help="emit a synthetic flight-coupled epidemic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--days", type=int, default=420)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="train an ensemble and write a run directory")
    p.add_argument("--cases", required=True)
    p.add_argument("--flights", required=True)
    p.add_argument("--out", required=True, help="run directory to create")
    p.add_argument("--ensemble", type=int, default=TrainConfig.ensemble_size)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden-dim", type=int, default=TrainConfig.hidden_dim)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("bias", help="fit per-region bias-correction factors")
    p.add_argument("--run", required=True, help="run directory from `train`")
    p.add_argument("--days", type=int, default=DEFAULT_HORIZON)
    p.add_argument("--models", type=int, default=0, help="cap members used (0 = all)")
    p.set_defaults(handler=cmd_bias)

    p = sub.add_parser("forecast", help="export recursive forecasts as CSV")
    p.add_argument("--run", required=True)
    p.add_argument("--days", type=int, default=DEFAULT_HORIZON)
    p.add_argument("--models", type=int, default=0, help="cap members used (0 = all)")
    p.add_argument("--out", help="CSV path (default: run dir)")
    p.set_defaults(handler=cmd_forecast)

    p = sub.add_parser("sensitivity", help="perturbation sweep and region rankings")
    p.add_argument("--run", required=True)
    p.add_argument("--days", type=int, default=DEFAULT_HORIZON)
    p.add_argument("--models", type=int, default=0, help="cap members used (0 = all)")
    p.add_argument("--out", help="output directory (default: run dir)")
    p.set_defaults(handler=cmd_sensitivity)

    p = sub.add_parser("policy", help="policy grid sweep, or one policy evaluation")
    p.add_argument("--run", required=True)
    p.add_argument("--nodes", help="regions for the grid, e.g. WE,NA")
    p.add_argument("--levels", default="25,50,75", help="percent levels, e.g. 25,50,75")
    p.add_argument("--days", type=int, default=DEFAULT_HORIZON)
    p.add_argument(
        "--models", type=int, default=0,
        help="cap members used (0 = all for sweeps, 40 for --reductions)",
    )
    p.add_argument("--max-policies", type=int, default=None)
    p.add_argument("--seed", type=int, default=0, help="subsample seed for --max-policies")
    p.add_argument(
        "--reductions",
        help="evaluate one policy instead of sweeping, e.g. WE=75,NA=50 (percent)",
    )
    p.add_argument("--window", help="window start date for --reductions (default: latest)")
    p.add_argument("--out", help="output directory (sweep) or JSON path (--reductions)")
    p.set_defaults(handler=cmd_policy)

    p = sub.add_parser("plots", help="emit plot-ready JSON series from run artifacts")
    p.add_argument("--run", required=True)
    p.add_argument("--out", help="output directory (default: RUN/plots)")
    p.add_argument("--days", type=int, default=0, help="also emit forecasts (0 = skip)")
    p.add_argument("--models", type=int, default=0, help="cap members used (0 = all)")
    p.set_defaults(handler=cmd_plots)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--run", required=True)
    p.add_argument("--port", type=int, default=0, help="default $AEROGRAPH_PORT or 8000")
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(handler=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ApiError as exc:
        where = f" ({exc.field})" if exc.field else ""
        print(f"error: {exc.message}{where}", file=sys.stderr)
        return 3 if exc.status >= 500 else 2
    except (DataError, ManifestError, AnalysisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, ForecastError, StatsError, nx.NumericsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
