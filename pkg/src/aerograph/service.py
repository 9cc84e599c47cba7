"""HTTP service over a provisioned run directory.

Endpoints live under /v1 and are read-only with respect to checkpoints and
bias factors: the only mutable state is the in-memory policy-sweep cache,
which background sweep jobs replace atomically when they finish. Every
response carries the manifest hash of the run it was computed from, both
as a body field on success and as an X-Manifest-Hash header throughout.

Policy evaluation is synchronous and sized for interactive use (it defaults
to 40 ensemble members, fewer when the run holds fewer). Grid sweeps can
take minutes, so POST /v1/policy/sweep queues a job and GET /v1/jobs/{id}
reports its progress.
"""

from __future__ import annotations

import datetime as dt
import threading
import uuid

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import numerics as nx
from .analysis import (
    DEFAULT_HORIZON,
    DEFAULT_LEVELS,
    AnalysisError,
    Perturbation,
    Policy,
    assign_quadrant,
    average_daily_flight_reduction,
    policy_sweep,
    window_forecasts,
)
from .dataio import REGIONS, future_days, region_code, resolve_region
from .forecast import ForecastError, qualifying_windows
from .manifest import RunState, load_run

DEFAULT_EVAL_MODELS = 40


class ApiError(Exception):
    """Carried to the client as a flat {code, message, field} body."""

    def __init__(self, status: int, code: str, message: str, field: str | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.field = field


class ForecastRequest(BaseModel):
    window_start: str
    days: int = DEFAULT_HORIZON


class PolicyEvaluateRequest(BaseModel):
    reductions: dict[str, float]
    window_start: str
    days: int = DEFAULT_HORIZON
    models: int | None = None


class SweepRequest(BaseModel):
    nodes: list[str]
    levels: list[float] = list(DEFAULT_LEVELS)
    days: int = DEFAULT_HORIZON
    models: int | None = None
    max_policies: int | None = None
    seed: int = 0


def _resolve_reductions(reductions: dict[str, float]) -> dict[str, float]:
    """Map request keys to full region names, rejecting bad entries.

    The offending field in the error is the key exactly as the client sent
    it, prefixed with "reductions." so it can be tied back to the request.
    """
    resolved: dict[str, float] = {}
    for key, fraction in reductions.items():
        where = f"reductions.{key}"
        try:
            name = resolve_region(key)
        except Exception:
            raise ApiError(400, "unknown_region", f"unknown region {key!r}", where)
        if name in resolved:
            raise ApiError(400, "duplicate_region", f"region {key!r} given twice", where)
        value = float(fraction)
        if not np.isfinite(value) or not 0.0 <= value <= 1.0:
            raise ApiError(
                400, "invalid_fraction",
                f"reduction fraction must lie in [0, 1], got {fraction!r}", where,
            )
        resolved[name] = value
    return resolved


def _checked_window(state: RunState, window_start: str, days: int, field: str):
    if days < 1:
        raise ApiError(400, "invalid_days", "days must be at least 1", "days")
    window = state.window_by_start.get(window_start)
    if window is None:
        raise ApiError(
            404, "unknown_window", f"no input window starts on {window_start!r}", field
        )
    futures = future_days(state.graphs, window, days)
    if futures is None:
        raise ApiError(
            400, "invalid_days",
            f"window {window_start} lacks {days} consecutive observed days "
            "after it; reduce days or pick an earlier window",
            "days",
        )
    return window, futures


def _model_subset(state: RunState, requested: int | None) -> list:
    if requested is None:
        count = min(DEFAULT_EVAL_MODELS, len(state.models))
    else:
        if requested < 1:
            raise ApiError(400, "invalid_models", "models must be at least 1", "models")
        count = min(requested, len(state.models))
    return state.models[:count]


def regions_payload(state: RunState) -> dict:
    latest = state.graphs[-1]
    return {
        "manifest_hash": state.manifest.hash,
        "regions": [{"name": name, "code": region_code(name)} for name in REGIONS],
        "latest": {
            "date": latest.date.isoformat(),
            "raw_cases": {
                name: float(latest.raw_cases[i]) for i, name in enumerate(REGIONS)
            },
            "raw_flights": [[float(v) for v in row] for row in latest.raw_flights],
        },
    }


def rankings_payload(state: RunState, window: str | None) -> dict:
    sweep = state.sensitivity
    if sweep is None:
        raise ApiError(
            409, "not_provisioned",
            "no sensitivity rankings for this run; run the sensitivity command",
        )
    if window is not None:
        matched = [r for r in sweep.records if r.window_start.isoformat() == window]
        if not matched:
            raise ApiError(
                404, "unknown_window", f"no ranked window starts on {window!r}", "window"
            )
        by_region = {r.region: r for r in matched}
        return {
            "manifest_hash": state.manifest.hash,
            "window_start": window,
            "horizon": sweep.horizon,
            "ensemble_size": sweep.ensemble_size,
            "records": [
                {
                    "region": name,
                    "code": region_code(name),
                    "mu": by_region[name].fit.mu,
                    "mu_normalized": by_region[name].mu_normalized,
                    "rank": by_region[name].rank,
                }
                for name in REGIONS
            ],
        }

    by_key = {(r.window_start, r.region): r for r in sweep.records}
    rankings = []
    for name in sweep.overall_ranking:
        rows = [by_key[(start, name)] for start in sweep.window_starts]
        rankings.append(
            {
                "region": name,
                "code": region_code(name),
                "median_mu_normalized": sweep.region_medians[name],
                "mu": [r.fit.mu for r in rows],
                "mu_normalized": [r.mu_normalized for r in rows],
                "rank": [r.rank for r in rows],
            }
        )
    return {
        "manifest_hash": state.manifest.hash,
        "horizon": sweep.horizon,
        "ensemble_size": sweep.ensemble_size,
        "windows": [d.isoformat() for d in sweep.window_starts],
        "rankings": rankings,
    }


def forecast_payload(state: RunState, window_start: str, days: int) -> dict:
    window, futures = _checked_window(state, window_start, days, "window_start")
    try:
        corrected = window_forecasts(
            state.models, [(window, futures)], state.factors, days
        )
    except (nx.NumericsError, ForecastError) as exc:
        raise ApiError(500, "numeric_failure", str(exc))
    mean = corrected.mean(axis=0)[0]  # (days, regions)
    return {
        "manifest_hash": state.manifest.hash,
        "window_start": window_start,
        "days": days,
        "ensemble_size": len(state.models),
        "series": {
            name: [float(v) for v in mean[:, i]] for i, name in enumerate(REGIONS)
        },
    }


def evaluate_policy_payload(
    state: RunState,
    reductions: dict[str, float],
    window_start: str,
    days: int,
    models: int | None = None,
) -> dict:
    sweep = state.sweep
    if sweep is None:
        raise ApiError(
            409, "not_provisioned",
            "no policy sweep cached for this run; provision one with the "
            "policy command or POST /v1/policy/sweep",
        )
    resolved = _resolve_reductions(reductions)
    window, futures = _checked_window(state, window_start, days, "window_start")
    subset = _model_subset(state, models)
    perturbation = Perturbation.of(resolved)
    policy = Policy.of(resolved)

    pairs = [(window, futures)]
    try:
        base = window_forecasts(subset, pairs, state.factors, days)
        if perturbation.is_null():
            pert = base
        else:
            pert = window_forecasts(subset, pairs, state.factors, days, perturbation)
    except (nx.NumericsError, ForecastError) as exc:
        raise ApiError(500, "numeric_failure", str(exc))

    # same aggregation as the sweep, restricted to this single window
    impact_raw = float(np.abs(pert.sum(-1) - base.sum(-1)).sum(-1).mean())
    impact = impact_raw / sweep.max_impact_raw if sweep.max_impact_raw > 0 else 0.0
    reduction = average_daily_flight_reduction(state.graphs, perturbation)
    quadrant = assign_quadrant(
        reduction, impact, sweep.median_reduction, sweep.median_impact
    )
    base_mean = base.mean(axis=0)[0]
    pert_mean = pert.mean(axis=0)[0]
    return {
        "manifest_hash": state.manifest.hash,
        "policy_id": policy.id,
        "reductions": {name: r for name, r in policy.perturbation.fractions},
        "window_start": window_start,
        "days": days,
        "models_used": len(subset),
        "impact": impact,
        "impact_raw": impact_raw,
        "avg_daily_flight_reduction": reduction,
        "quadrant": quadrant,
        "series": {
            name: {
                "unperturbed": [float(v) for v in base_mean[:, i]],
                "perturbed": [float(v) for v in pert_mean[:, i]],
            }
            for i, name in enumerate(REGIONS)
        },
    }


def sweep_payload(state: RunState) -> dict:
    if state.sweep is None:
        raise ApiError(
            409, "not_provisioned",
            "no policy sweep cached for this run; provision one with the "
            "policy command or POST /v1/policy/sweep",
        )
    return {"manifest_hash": state.manifest.hash, **state.sweep.to_json()}


class _Jobs:
    def __init__(self) -> None:
        self.lock = threading.Lock()
        self.table: dict[str, dict] = {}

    def create(self) -> str:
        job_id = uuid.uuid4().hex[:12]
        with self.lock:
            self.table[job_id] = {"status": "queued", "error": None}
        return job_id

    def set(self, job_id: str, status: str, error: str | None = None) -> None:
        with self.lock:
            self.table[job_id] = {"status": status, "error": error}

    def get(self, job_id: str) -> dict | None:
        with self.lock:
            entry = self.table.get(job_id)
            return dict(entry) if entry is not None else None


def start_sweep_job(state: RunState, jobs: _Jobs, req: SweepRequest) -> dict:
    if not req.nodes:
        raise ApiError(400, "invalid_nodes", "nodes must be non-empty", "nodes")
    for node in req.nodes:
        try:
            resolve_region(node)
        except Exception:
            raise ApiError(400, "unknown_region", f"unknown region {node!r}", "nodes")
    for level in req.levels:
        if not np.isfinite(level) or not 0.0 < level <= 1.0:
            raise ApiError(
                400, "invalid_fraction",
                f"levels must lie in (0, 1], got {level!r}", "levels",
            )
    if req.days < 1:
        raise ApiError(400, "invalid_days", "days must be at least 1", "days")
    subset = _model_subset(state, req.models)
    pairs = qualifying_windows(state.graphs, state.windows, req.days)
    if not pairs:
        raise ApiError(
            400, "invalid_days",
            f"no window has {req.days} consecutive observed days after it", "days",
        )
    job_id = jobs.create()

    def run() -> None:
        jobs.set(job_id, "running")
        try:
            result = policy_sweep(
                subset,
                pairs,
                list(req.nodes),
                state.factors,
                state.graphs,
                levels=tuple(req.levels),
                horizon=req.days,
                max_policies=req.max_policies,
                sample_seed=req.seed,
            )
        except (AnalysisError, ForecastError, nx.NumericsError) as exc:
            jobs.set(job_id, "failed", str(exc))
            return
        state.sweep = result  # atomic reference swap; readers see old or new
        jobs.set(job_id, "done")

    threading.Thread(target=run, name=f"sweep-{job_id}", daemon=True).start()
    return {
        "manifest_hash": state.manifest.hash,
        "job_id": job_id,
        "status": "queued",
    }


def job_payload(state: RunState, jobs: _Jobs, job_id: str) -> dict:
    entry = jobs.get(job_id)
    if entry is None:
        raise ApiError(404, "unknown_job", f"no job {job_id!r}", "job_id")
    return {
        "manifest_hash": state.manifest.hash,
        "job_id": job_id,
        "status": entry["status"],
        "error": entry["error"],
    }


def app_for_state(state: RunState) -> FastAPI:
    if state.factors is None:
        raise ForecastError("the service needs bias factors; run the bias command")
    app = FastAPI(title="aerograph", version="1")
    jobs = _Jobs()

    @app.middleware("http")
    async def stamp_manifest(request: Request, call_next):
        response = await call_next(request)
        response.headers["X-Manifest-Hash"] = state.manifest.hash
        return response

    @app.exception_handler(ApiError)
    async def on_api_error(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "field": exc.field},
            headers={"X-Manifest-Hash": state.manifest.hash},
        )

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        first = exc.errors()[0]
        field = ".".join(str(p) for p in first.get("loc", ()) if p != "body")
        return JSONResponse(
            status_code=400,
            content={
                "code": "invalid_request",
                "message": first.get("msg", "invalid request"),
                "field": field or None,
            },
            headers={"X-Manifest-Hash": state.manifest.hash},
        )

    @app.get("/v1/regions")
    def regions():
        return regions_payload(state)

    @app.get("/v1/sensitivity/rankings")
    def rankings(window: str | None = None):
        return rankings_payload(state, window)

    @app.post("/v1/forecast")
    def post_forecast(req: ForecastRequest):
        return forecast_payload(state, req.window_start, req.days)

    @app.post("/v1/policy/evaluate")
    def post_evaluate(req: PolicyEvaluateRequest):
        return evaluate_policy_payload(
            state, req.reductions, req.window_start, req.days, req.models
        )

    @app.get("/v1/policy/sweep")
    def get_sweep():
        return sweep_payload(state)

    @app.post("/v1/policy/sweep", status_code=202)
    def post_sweep(req: SweepRequest):
        return start_sweep_job(state, jobs, req)

    @app.get("/v1/jobs/{job_id}")
    def get_job(job_id: str):
        return job_payload(state, jobs, job_id)

    return app


def build_app(run_dir: str) -> FastAPI:
    return app_for_state(load_run(run_dir))
