"""Recursive multi-day forecasting and per-region bias correction.

A recursive forecast keeps a rolling 7-day buffer: the model predicts day 1
from the seed window, the oldest buffered day is dropped, and the prediction
becomes the newest day's node features, paired with that day's supplied
flight matrix (flights are known inputs and are never predicted). Feedback
stays in the transformed log10(x + 1) domain; conversion to raw counts
floors at zero and counts how often the floor fired.

Bias factors are per-region constants b_c = (1/W) Σ_w (1/D) Σ_d y/ỹ in the
raw domain, where ỹ is the ensemble-mean forecast. Applying them multiplies
raw forecasts region-wise after the fact; the recursion is never re-run with
corrected values.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .dataio import DailyGraph, WindowSample, future_days
from .model import DcsageModel, predict_batch

BIAS_GUARD = 1e-9


class ForecastError(Exception):
    """Inputs do not satisfy the forecasting contracts."""


def raw_from_transformed(arr: np.ndarray) -> np.ndarray:
    """Back to raw counts: 10**x - 1, floored at zero."""
    return np.maximum(np.power(10.0, np.asarray(arr, dtype=np.float64)) - 1.0, 0.0)


def count_floor_events(transformed: np.ndarray) -> int:
    """Entries whose raw conversion hits the zero floor."""
    return int((np.asarray(transformed) < 0.0).sum())


class _PredictedDay:
    """A future day whose features are a fed-back prediction."""

    __slots__ = ("cases", "flights")

    def __init__(self, cases: np.ndarray, flights: np.ndarray) -> None:
        self.cases = cases
        self.flights = flights


def _adjacency_of(day_or_matrix) -> np.ndarray:
    if isinstance(day_or_matrix, np.ndarray):
        return day_or_matrix
    flights = getattr(day_or_matrix, "flights", None)
    if flights is None:
        raise ForecastError(
            "future adjacency entries must be matrices or objects with .flights"
        )
    return flights


def recursive_predict_batch(
    model: DcsageModel,
    seed_windows,
    future_adjacency,
    horizon: int,
) -> np.ndarray:
    """Recursive forecasts for many windows in lockstep.

    seed_windows: per window, the 7 seed days. future_adjacency: per window,
    `horizon` transformed flight matrices (or day objects carrying them).
    Returns transformed predictions of shape (windows, horizon, regions).
    Buffers advance together, so each step is one batched forward pass, and
    a shared day cache keeps overlapping seed days from being re-embedded.
    """
    if horizon < 1:
        raise ForecastError("horizon must be at least 1")
    if len(seed_windows) != len(future_adjacency):
        raise ForecastError("one future-adjacency sequence is needed per window")
    n_windows = len(seed_windows)
    if n_windows == 0:
        raise ForecastError("recursive prediction needs at least one window")
    futures = []
    for i, seq in enumerate(future_adjacency):
        mats = [_adjacency_of(x) for x in seq]
        if len(mats) < horizon:
            raise ForecastError(
                f"window {i}: {len(mats)} future adjacency days supplied, "
                f"horizon needs {horizon}"
            )
        futures.append(mats)

    n = model.config.num_regions
    buffers = [list(days) for days in seed_windows]
    out = np.empty((n_windows, horizon, n))
    cache: dict = {}
    for d in range(horizon):
        step = predict_batch(model, buffers, day_cache=cache)
        out[:, d, :] = step
        for w in range(n_windows):
            new_day = _PredictedDay(cases=step[w], flights=futures[w][d])
            buffers[w] = buffers[w][1:] + [new_day]
    return out


def recursive_predict(
    model: DcsageModel, seed_days, future_adjacency, horizon: int
) -> np.ndarray:
    """Single-window recursion; returns (horizon, regions) transformed."""
    return recursive_predict_batch(model, [seed_days], [future_adjacency], horizon)[0]


@dataclass(frozen=True)
class RecursiveForecast:
    """Ensemble recursive forecast for one window.

    transformed and raw have shape (models, horizon, regions); raw is the
    floored pow10m1 view. `corrected` marks whether bias factors have been
    applied.
    """

    window_start: dt.date
    horizon: int
    transformed: np.ndarray
    raw: np.ndarray
    floor_events: int
    corrected: bool = False

    def ensemble_mean_raw(self) -> np.ndarray:
        return self.raw.mean(axis=0)


def ensemble_forecast(
    models, window: WindowSample, future_adjacency, horizon: int
) -> RecursiveForecast:
    """Run every ensemble member recursively on one window."""
    if not models:
        raise ForecastError("ensemble_forecast needs at least one model")
    per_model = [
        recursive_predict(m, window.days, future_adjacency, horizon) for m in models
    ]
    transformed = np.stack(per_model)
    return RecursiveForecast(
        window_start=window.start,
        horizon=horizon,
        transformed=transformed,
        raw=raw_from_transformed(transformed),
        floor_events=count_floor_events(transformed),
    )


# ---------------------------------------------------------------------------
# Bias correction


@dataclass(frozen=True)
class BiasFactors:
    """Per-region multiplicative corrections plus fit provenance."""

    factors: np.ndarray  # (regions,)
    ensemble_size: int
    num_windows: int
    horizon: int
    guarded_terms: int  # ratio terms where the ensemble mean needed the guard

    def validate(self) -> None:
        f = self.factors
        if not np.all(np.isfinite(f)) or np.any(f <= 0):
            raise ForecastError("bias factors must be finite and positive")

    def to_json(self) -> dict:
        return {
            "factors": [float(x) for x in self.factors],
            "ensemble_size": self.ensemble_size,
            "num_windows": self.num_windows,
            "horizon": self.horizon,
            "guarded_terms": self.guarded_terms,
        }

    @staticmethod
    def from_json(data: dict) -> "BiasFactors":
        return BiasFactors(
            factors=np.asarray(data["factors"], dtype=np.float64),
            ensemble_size=int(data["ensemble_size"]),
            num_windows=int(data["num_windows"]),
            horizon=int(data["horizon"]),
            guarded_terms=int(data["guarded_terms"]),
        )


def qualifying_windows(
    graphs: list[DailyGraph], windows, horizon: int
) -> list[tuple[WindowSample, list[DailyGraph]]]:
    """Windows whose full `horizon` of subsequent days was retained.

    Recursive evaluation against truth (and historical future adjacency)
    needs every one of the D days after the seed window to have survived
    preprocessing.
    """
    pairs = []
    for w in windows:
        futs = future_days(graphs, w, horizon)
        if futs is not None:
            pairs.append((w, futs))
    return pairs


def forecast_windows_raw(
    models,
    pairs: list[tuple[WindowSample, list[DailyGraph]]],
    horizon: int,
) -> np.ndarray:
    """Raw-domain recursive forecasts, shape (models, windows, horizon, regions)."""
    if not models:
        raise ForecastError("need at least one model")
    if not pairs:
        raise ForecastError("no qualifying windows: every window lacks future days")
    seeds = [w.days for w, _ in pairs]
    futures = [[g.flights for g in futs] for _, futs in pairs]
    stacked = np.stack(
        [recursive_predict_batch(m, seeds, futures, horizon) for m in models]
    )
    return raw_from_transformed(stacked)


def ratio_table(
    models,
    pairs: list[tuple[WindowSample, list[DailyGraph]]],
    horizon: int,
) -> tuple[np.ndarray, int]:
    """y/ỹ per (window, day, region), with the nonpositive-ỹ guard applied.

    Returns the ratio array of shape (windows, horizon, regions) and the
    number of terms that needed the guard.
    """
    raw = forecast_windows_raw(models, pairs, horizon)
    ensemble_mean = raw.mean(axis=0)  # (windows, horizon, regions)
    guard_mask = ensemble_mean <= 0.0
    guarded = ensemble_mean + np.where(guard_mask, BIAS_GUARD, 0.0)
    truth = np.stack([[g.raw_cases for g in futs] for _, futs in pairs])
    return truth / guarded, int(guard_mask.sum())


def compute_bias_factors(
    models,
    pairs: list[tuple[WindowSample, list[DailyGraph]]],
    horizon: int,
) -> BiasFactors:
    """Fit b_c = (1/W) Σ_w (1/D) Σ_d y/ỹ per region on the given windows."""
    ratios, guarded = ratio_table(models, pairs, horizon)
    factors = ratios.mean(axis=(0, 1))
    result = BiasFactors(
        factors=factors,
        ensemble_size=len(models),
        num_windows=len(pairs),
        horizon=horizon,
        guarded_terms=guarded,
    )
    result.validate()
    return result


def apply_bias(forecast: RecursiveForecast, factors: BiasFactors) -> RecursiveForecast:
    """Multiply raw forecasts per region; transformed view is recomputed."""
    factors.validate()
    if factors.factors.shape[0] != forecast.raw.shape[-1]:
        raise ForecastError(
            f"{factors.factors.shape[0]} factors cannot correct "
            f"{forecast.raw.shape[-1]} regions"
        )
    raw = forecast.raw * factors.factors
    return RecursiveForecast(
        window_start=forecast.window_start,
        horizon=forecast.horizon,
        transformed=np.log10(raw + 1.0),
        raw=raw,
        floor_events=forecast.floor_events,
        corrected=True,
    )


def corrected_raw(raw_forecasts: np.ndarray, factors: BiasFactors) -> np.ndarray:
    """Apply factors to a raw-domain forecast array (last axis = regions)."""
    factors.validate()
    return raw_forecasts * factors.factors
