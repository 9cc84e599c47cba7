"""Perturbation sensitivity, Gumbel-based rankings, and policy search.

A perturbation reduces raw flights on every edge incident to chosen regions:
edge (u, v) is scaled by (1 - r_u) * (1 - r_v) before re-applying the log
transform, so r = 1 isolates a region entirely. Node sensitivity measures
how much a model's bias-corrected 30-day forecasts for the other regions
move when one region is isolated; per (window, region), the ensemble's
scores are summarized by the location parameter mu of a Gumbel fit, and
regions are ranked by the median of their normalized mu values.

A policy assigns reduction fractions to a subset of regions. Its impact is
the ensemble- and window-averaged absolute change of the global (all-region)
raw forecast over the horizon, normalized to the sweep maximum; quadrants
split policies by the sweep medians of flight reduction and impact.
"""

from __future__ import annotations

import datetime as dt
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import (
    REGIONS,
    DailyGraph,
    WindowSample,
    region_code,
    region_index,
    resolve_region,
)
from .forecast import BiasFactors, corrected_raw, recursive_predict_batch, raw_from_transformed
from .model import DcsageModel
from .stats import GumbelFit, average_ranks, fit_gumbel

DEFAULT_HORIZON = 30
DEFAULT_LEVELS = (0.25, 0.50, 0.75)


class AnalysisError(Exception):
    """Invalid perturbations, policies, or sweep inputs."""


# ---------------------------------------------------------------------------
# Perturbations


@dataclass(frozen=True)
class Perturbation:
    """Per-region flight-reduction fractions; unlisted regions get 0."""

    fractions: tuple[tuple[str, float], ...]  # (full region name, r), sorted

    @staticmethod
    def of(mapping: dict[str, float]) -> "Perturbation":
        resolved: dict[str, float] = {}
        for name, r in mapping.items():
            full = resolve_region(name)
            r = float(r)
            if not 0.0 <= r <= 1.0:
                raise AnalysisError(
                    f"reduction fraction for {full} must lie in [0, 1], got {r}"
                )
            if full in resolved:
                raise AnalysisError(f"region {full} listed twice")
            resolved[full] = r
        ordered = sorted(resolved.items(), key=lambda kv: region_index(kv[0]))
        return Perturbation(fractions=tuple(ordered))

    @staticmethod
    def isolate(region: str) -> "Perturbation":
        return Perturbation.of({region: 1.0})

    def vector(self) -> np.ndarray:
        r = np.zeros(len(REGIONS))
        for name, frac in self.fractions:
            r[region_index(name)] = frac
        return r

    def edge_multipliers(self) -> np.ndarray:
        keep = 1.0 - self.vector()
        return np.outer(keep, keep)

    def is_null(self) -> bool:
        return all(r == 0.0 for _, r in self.fractions)


def perturb_graph(graph: DailyGraph, multipliers: np.ndarray) -> DailyGraph:
    raw = graph.raw_flights * multipliers
    return DailyGraph(
        date=graph.date,
        cases=graph.cases,
        flights=np.log10(raw + 1.0),
        raw_cases=graph.raw_cases,
        raw_flights=raw,
    )


def perturb_adjacency(graphs, perturbation: Perturbation) -> list[DailyGraph]:
    """Scaled copies of the graphs; raw flights change, cases never do."""
    multipliers = perturbation.edge_multipliers()
    return [perturb_graph(g, multipliers) for g in graphs]


# ---------------------------------------------------------------------------
# Forecast plumbing shared by sensitivity and policy evaluation


def window_forecasts(
    models,
    pairs,
    factors: BiasFactors,
    horizon: int,
    perturbation: Perturbation | None = None,
) -> np.ndarray:
    """Corrected raw forecasts (models, windows, horizon, regions).

    With a perturbation, both the 7 seed days and all future days are
    perturbed before forecasting: a restriction holds for the whole horizon.
    Day objects shared between overlapping windows are perturbed once so the
    batched engine can keep sharing their embeddings.
    """
    if not pairs:
        raise AnalysisError("no qualifying windows to forecast")
    if perturbation is None or perturbation.is_null():
        seeds = [list(w.days) for w, _ in pairs]
        futures = [[g.flights for g in futs] for _, futs in pairs]
    else:
        multipliers = perturbation.edge_multipliers()
        perturbed: dict[int, DailyGraph] = {}

        def lookup(g: DailyGraph) -> DailyGraph:
            hit = perturbed.get(id(g))
            if hit is None:
                hit = perturb_graph(g, multipliers)
                perturbed[id(g)] = hit
            return hit

        seeds = [[lookup(g) for g in w.days] for w, _ in pairs]
        futures = [[lookup(g).flights for g in futs] for _, futs in pairs]

    out = np.stack(
        [recursive_predict_batch(m, seeds, futures, horizon) for m in models]
    )
    return corrected_raw(raw_from_transformed(out), factors)


# ---------------------------------------------------------------------------
# Node sensitivity


def sensitivity_from_forecasts(
    unperturbed: np.ndarray, perturbed: np.ndarray, region: int
) -> np.ndarray:
    """Sum |difference| over the other regions and all days.

    Inputs have shape (..., horizon, regions); the result drops those two
    axes. The perturbed region's own change never counts.
    """
    diff = np.abs(perturbed - unperturbed)
    keep = np.arange(diff.shape[-1]) != region
    return diff[..., keep].sum(axis=(-1, -2))


def node_sensitivity(
    model: DcsageModel,
    window: WindowSample,
    futures: list[DailyGraph],
    region: str,
    factors: BiasFactors,
    horizon: int = DEFAULT_HORIZON,
) -> float:
    """Sensitivity of one model on one window to isolating one region."""
    idx = region_index(region)
    pairs = [(window, futures)]
    base = window_forecasts([model], pairs, factors, horizon)
    pert = window_forecasts(
        [model], pairs, factors, horizon, Perturbation.isolate(region)
    )
    return float(sensitivity_from_forecasts(base, pert, idx)[0, 0])


def region_sensitivity_at_level(
    models,
    pairs,
    region: str,
    level: float,
    factors: BiasFactors,
    horizon: int = DEFAULT_HORIZON,
    _base: np.ndarray | None = None,
) -> float:
    """Mean over models and windows of the sensitivity at a partial
    reduction level r (r = 1 is full isolation)."""
    idx = region_index(region)
    base = window_forecasts(models, pairs, factors, horizon) if _base is None else _base
    pert = window_forecasts(
        models, pairs, factors, horizon, Perturbation.of({region: level})
    )
    return float(sensitivity_from_forecasts(base, pert, idx).mean())


@dataclass(frozen=True)
class SensitivityRecord:
    window_start: dt.date
    region: str
    scores: np.ndarray  # per ensemble member
    fit: GumbelFit
    mu_normalized: float = math.nan
    rank: int = 0  # 1 = most sensitive within the window

    def to_json(self) -> dict:
        return {
            "window_start": self.window_start.isoformat(),
            "region": self.region,
            "scores": [float(s) for s in self.scores],
            "mu": self.fit.mu,
            "beta": None if self.fit.degenerate else self.fit.beta,
            "degenerate": self.fit.degenerate,
            "mu_normalized": self.mu_normalized,
            "rank": self.rank,
        }


@dataclass
class SensitivitySweep:
    records: list[SensitivityRecord]
    horizon: int
    ensemble_size: int
    window_starts: list[dt.date]
    region_medians: dict[str, float] = field(default_factory=dict)
    overall_ranking: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "horizon": self.horizon,
            "ensemble_size": self.ensemble_size,
            "window_starts": [d.isoformat() for d in self.window_starts],
            "region_medians": self.region_medians,
            "overall_ranking": self.overall_ranking,
            "records": [r.to_json() for r in self.records],
        }

    @staticmethod
    def from_json(data: dict) -> "SensitivitySweep":
        records = []
        for rec in data["records"]:
            scores = np.asarray(rec["scores"], dtype=float)
            fit = GumbelFit(
                mu=rec["mu"],
                beta=math.nan if rec["degenerate"] else rec["beta"],
                degenerate=rec["degenerate"],
                iterations=0,
                n=scores.size,
            )
            records.append(
                SensitivityRecord(
                    window_start=dt.date.fromisoformat(rec["window_start"]),
                    region=rec["region"],
                    scores=scores,
                    fit=fit,
                    mu_normalized=rec["mu_normalized"],
                    rank=rec["rank"],
                )
            )
        return SensitivitySweep(
            records=records,
            horizon=data["horizon"],
            ensemble_size=data["ensemble_size"],
            window_starts=[dt.date.fromisoformat(d) for d in data["window_starts"]],
            region_medians=dict(data["region_medians"]),
            overall_ranking=list(data["overall_ranking"]),
        )


def _within_window_ranks(mus: np.ndarray) -> np.ndarray:
    """Competition ranking, 1 = largest mu; ties share the better rank."""
    ranks = np.empty(mus.size, dtype=np.int64)
    for i, value in enumerate(mus):
        ranks[i] = 1 + int((mus > value).sum())
    return ranks


def sensitivity_sweep(
    models,
    pairs,
    factors: BiasFactors,
    horizon: int = DEFAULT_HORIZON,
) -> SensitivitySweep:
    """Isolation sensitivity of every region on every window.

    Per (window, region), the ensemble's scores are fitted with a Gumbel
    distribution; mu values are min-max normalized globally over all
    (window, region) pairs, regions are ranked per window by mu, and the
    overall ranking orders regions by the median of their normalized mu.
    """
    if not models:
        raise AnalysisError("sensitivity sweep needs at least one model")
    base = window_forecasts(models, pairs, factors, horizon)
    n_windows = len(pairs)

    records: list[list[SensitivityRecord]] = [[] for _ in range(n_windows)]
    for region in REGIONS:
        idx = region_index(region)
        pert = window_forecasts(
            models, pairs, factors, horizon, Perturbation.isolate(region)
        )
        scores = sensitivity_from_forecasts(base, pert, idx)  # (models, windows)
        for w, (window, _) in enumerate(pairs):
            sample = scores[:, w]
            fit = (
                fit_gumbel(sample)
                if sample.size >= 3
                else GumbelFit(
                    mu=float(sample.mean()), beta=math.nan, degenerate=True,
                    iterations=0, n=sample.size,
                )
            )
            records[w].append(
                SensitivityRecord(window_start=window.start, region=region,
                                  scores=sample.copy(), fit=fit)
            )

    flat = [rec for per_window in records for rec in per_window]
    mus = np.array([rec.fit.mu for rec in flat])
    lo, hi = float(mus.min()), float(mus.max())
    span = hi - lo
    normalized = (mus - lo) / span if span > 0 else np.zeros_like(mus)

    finished: list[SensitivityRecord] = []
    cursor = 0
    for per_window in records:
        window_mus = np.array([rec.fit.mu for rec in per_window])
        ranks = _within_window_ranks(window_mus)
        for k, rec in enumerate(per_window):
            finished.append(
                SensitivityRecord(
                    window_start=rec.window_start,
                    region=rec.region,
                    scores=rec.scores,
                    fit=rec.fit,
                    mu_normalized=float(normalized[cursor]),
                    rank=int(ranks[k]),
                )
            )
            cursor += 1

    medians = {
        region: float(
            np.median([r.mu_normalized for r in finished if r.region == region])
        )
        for region in REGIONS
    }
    ranking = sorted(REGIONS, key=lambda name: (-medians[name], region_index(name)))
    return SensitivitySweep(
        records=finished,
        horizon=horizon,
        ensemble_size=len(models),
        window_starts=[w.start for w, _ in pairs],
        region_medians=medians,
        overall_ranking=list(ranking),
    )


def fidelity_scores(
    models, pairs, factors: BiasFactors, horizon: int = DEFAULT_HORIZON
) -> dict[str, float]:
    """Signed static-style fidelity diagnostic per region.

    fidelity(s) = (1/W) Σ_w mean over days of (global unperturbed - global
    perturbed), averaged over models. Reported for diagnostics; rankings use
    the sensitivity scores.
    """
    base = window_forecasts(models, pairs, factors, horizon).sum(axis=-1)
    out: dict[str, float] = {}
    for region in REGIONS:
        pert = window_forecasts(
            models, pairs, factors, horizon, Perturbation.isolate(region)
        ).sum(axis=-1)
        out[region] = float((base - pert).mean(axis=-1).mean())
    return out


# ---------------------------------------------------------------------------
# Policies


@dataclass(frozen=True)
class Policy:
    id: str
    perturbation: Perturbation

    @staticmethod
    def of(mapping: dict[str, float]) -> "Policy":
        perturbation = Perturbation.of(mapping)
        nonzero = [(name, r) for name, r in perturbation.fractions if r > 0]
        if not nonzero:
            return Policy(id="null", perturbation=perturbation)
        label = ",".join(f"{region_code(name)}={r:.2f}" for name, r in nonzero)
        return Policy(id=label, perturbation=perturbation)

    @staticmethod
    def null() -> "Policy":
        return Policy.of({})


@dataclass(frozen=True)
class PolicyResult:
    policy: Policy
    impact_raw: float  # unnormalized case-difference average
    avg_daily_flight_reduction: float
    impact: float = math.nan  # normalized to the sweep maximum
    quadrant: str = ""

    def to_json(self) -> dict:
        return {
            "policy_id": self.policy.id,
            "reductions": {name: r for name, r in self.policy.perturbation.fractions if r > 0},
            "impact_raw": self.impact_raw,
            "avg_daily_flight_reduction": self.avg_daily_flight_reduction,
            "impact": self.impact,
            "quadrant": self.quadrant,
        }


def average_daily_flight_reduction(
    graphs: list[DailyGraph], perturbation: Perturbation
) -> float:
    """Mean over days of the raw flights removed by the perturbation, each
    directed edge counted once."""
    if not graphs:
        raise AnalysisError("flight reduction needs at least one day of data")
    multipliers = perturbation.edge_multipliers()
    removed = [(g.raw_flights * (1.0 - multipliers)).sum() for g in graphs]
    return float(np.mean(removed))


def policy_impact_raw(
    models,
    pairs,
    policy: Policy,
    factors: BiasFactors,
    horizon: int = DEFAULT_HORIZON,
    _base: np.ndarray | None = None,
) -> float:
    """Σ_d |perturbed global - unperturbed global|, averaged over models,
    then over windows. Global means summed over all regions in the raw
    domain, bias-corrected on both sides."""
    base = window_forecasts(models, pairs, factors, horizon) if _base is None else _base
    if policy.perturbation.is_null():
        return 0.0
    pert = window_forecasts(models, pairs, factors, horizon, policy.perturbation)
    per_model_window = np.abs(pert.sum(axis=-1) - base.sum(axis=-1)).sum(axis=-1)
    return float(per_model_window.mean(axis=0).mean())


def enumerate_policies(
    node_set: list[str], levels=DEFAULT_LEVELS
) -> list[Policy]:
    """Every assignment of {0} ∪ levels over the node set, minus all-zero."""
    if not node_set:
        raise AnalysisError("policy enumeration needs a non-empty node set")
    names = [resolve_region(n) for n in node_set]
    if len(set(names)) != len(names):
        raise AnalysisError("node set contains a region twice")
    names.sort(key=region_index)
    if not levels:
        raise AnalysisError("policy enumeration needs at least one level")
    options = [0.0] + sorted(float(l) for l in levels)
    policies = []
    for combo in itertools.product(options, repeat=len(names)):
        if all(c == 0.0 for c in combo):
            continue
        policies.append(Policy.of(dict(zip(names, combo))))
    return policies


def assign_quadrant(reduction: float, impact: float,
                    median_reduction: float, median_impact: float) -> str:
    if reduction >= median_reduction:
        return "Q1" if impact >= median_impact else "Q4"
    return "Q2" if impact >= median_impact else "Q3"


@dataclass
class PolicySweep:
    results: list[PolicyResult]
    median_reduction: float
    median_impact: float
    max_impact_raw: float
    horizon: int
    ensemble_size: int
    levels: list[float]
    node_set: list[str]
    window_starts: list[dt.date]

    def to_json(self) -> dict:
        return {
            "median_reduction": self.median_reduction,
            "median_impact": self.median_impact,
            "max_impact_raw": self.max_impact_raw,
            "horizon": self.horizon,
            "ensemble_size": self.ensemble_size,
            "levels": self.levels,
            "node_set": self.node_set,
            "window_starts": [d.isoformat() for d in self.window_starts],
            "results": [r.to_json() for r in self.results],
        }

    @staticmethod
    def from_json(data: dict) -> "PolicySweep":
        results = []
        for rec in data["results"]:
            policy = Policy.of(rec["reductions"])
            results.append(
                PolicyResult(
                    policy=policy,
                    impact_raw=float(rec["impact_raw"]),
                    avg_daily_flight_reduction=float(rec["avg_daily_flight_reduction"]),
                    impact=float(rec["impact"]),
                    quadrant=rec["quadrant"],
                )
            )
        return PolicySweep(
            results=results,
            median_reduction=float(data["median_reduction"]),
            median_impact=float(data["median_impact"]),
            max_impact_raw=float(data["max_impact_raw"]),
            horizon=int(data["horizon"]),
            ensemble_size=int(data["ensemble_size"]),
            levels=[float(l) for l in data["levels"]],
            node_set=[str(n) for n in data["node_set"]],
            window_starts=[dt.date.fromisoformat(d) for d in data["window_starts"]],
        )


def policy_sweep(
    models,
    pairs,
    node_set: list[str],
    factors: BiasFactors,
    graphs: list[DailyGraph],
    levels=DEFAULT_LEVELS,
    horizon: int = DEFAULT_HORIZON,
    max_policies: int | None = None,
    sample_seed: int = 0,
) -> PolicySweep:
    """Grid search over per-region reduction levels.

    Enumerates (len(levels)+1)^k - 1 policies, optionally subsampled
    deterministically to `max_policies`. Impacts are normalized by the sweep
    maximum; quadrants split at the medians of flight reduction and
    normalized impact.
    """
    policies = enumerate_policies(node_set, levels)
    if max_policies is not None:
        if max_policies < 1:
            raise AnalysisError("max_policies must be at least 1")
        if max_policies < len(policies):
            rng = np.random.default_rng(sample_seed)
            chosen = sorted(rng.choice(len(policies), size=max_policies, replace=False))
            policies = [policies[i] for i in chosen]

    base = window_forecasts(models, pairs, factors, horizon)
    raw_impacts = [
        policy_impact_raw(models, pairs, policy, factors, horizon, _base=base)
        for policy in policies
    ]
    reductions = [
        average_daily_flight_reduction(graphs, policy.perturbation)
        for policy in policies
    ]
    max_raw = max(raw_impacts)
    if max_raw > 0:
        normalized = [impact / max_raw for impact in raw_impacts]
    else:
        normalized = [0.0 for _ in raw_impacts]
    median_reduction = float(np.median(reductions))
    median_impact = float(np.median(normalized))
    results = [
        PolicyResult(
            policy=policy,
            impact_raw=raw,
            avg_daily_flight_reduction=red,
            impact=norm,
            quadrant=assign_quadrant(red, norm, median_reduction, median_impact),
        )
        for policy, raw, red, norm in zip(policies, raw_impacts, reductions, normalized)
    ]
    return PolicySweep(
        results=results,
        median_reduction=median_reduction,
        median_impact=median_impact,
        max_impact_raw=max_raw,
        horizon=horizon,
        ensemble_size=len(models),
        levels=sorted(float(l) for l in levels),
        node_set=sorted((resolve_region(n) for n in node_set), key=region_index),
        window_starts=[w.start for w, _ in pairs],
    )
