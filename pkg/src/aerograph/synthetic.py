"""Deterministic synthetic case/flight data with real network coupling.

The generator runs a damped SIR-style process per region in which
infections travel between regions in proportion to daily flight volumes:
each region's new infections combine local seasonal transmission with
imported infections weighted by incoming flights and origin prevalence.
Reported cases are a noisy fraction of new infections. Because the coupling
really flows through the flight matrix, models trained on this data have
a reason to attend to the adjacency, which the sensitivity and policy
machinery then has something to detect.

A "hub" variant concentrates a configurable share of total flight volume
onto one region's incident edges, giving rankings a planted answer.
"""

from __future__ import annotations

import csv
import datetime as dt
import os
from dataclasses import dataclass

import numpy as np

from .dataio import NUM_REGIONS, REGIONS, region_index

# Relative traffic masses per region (arbitrary units) and populations.
_TRAFFIC_MASS = np.array([2.6, 1.1, 0.5, 0.8, 1.0, 0.9, 2.2, 0.45, 1.6, 1.3])
_POPULATION = np.array([5.8, 4.3, 0.4, 13.0, 4.0, 2.9, 4.4, 0.8, 19.0, 6.8]) * 1e7


@dataclass(frozen=True)
class SynthConfig:
    days: int = 420
    seed: int = 0
    hub: str | None = None
    hub_share: float = 0.9
    total_daily_flights: float = 40000.0
    start: dt.date = dt.date(2023, 1, 1)

    def validate(self) -> None:
        if self.days < 30:
            raise ValueError("synthetic datasets need at least 30 days")
        if not 0.0 < self.hub_share < 1.0:
            raise ValueError("hub_share must lie strictly between 0 and 1")
        if self.total_daily_flights <= 0:
            raise ValueError("total_daily_flights must be positive")


@dataclass(frozen=True)
class SynthDataset:
    dates: tuple[dt.date, ...]
    cases: np.ndarray  # (days, regions) integer counts
    flights: np.ndarray  # (days, regions, regions) integer counts


def _traffic_masses(config: SynthConfig) -> np.ndarray:
    masses = _TRAFFIC_MASS.copy()
    if config.hub is None:
        return masses
    hub = region_index(config.hub)
    others = np.delete(np.arange(NUM_REGIONS), hub)
    s_other = masses[others].sum()
    p_other = s_other**2 - (masses[others] ** 2).sum()
    # Choose the hub mass so edges incident to the hub carry hub_share of
    # the total mass product: 2*M*S / (2*M*S + P) = share.
    share = config.hub_share
    masses[hub] = share * p_other / (2.0 * s_other * (1.0 - share))
    return masses


def _base_matrix(config: SynthConfig) -> np.ndarray:
    masses = _traffic_masses(config)
    product = np.outer(masses, masses)
    np.fill_diagonal(product, 0.0)
    return config.total_daily_flights * product / product.sum()


def generate(config: SynthConfig) -> SynthDataset:
    """Simulate the coupled epidemic/mobility system."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, days = NUM_REGIONS, config.days
    dates = tuple(config.start + dt.timedelta(days=t) for t in range(days))

    base = _base_matrix(config)
    weekday_factor = np.where(
        np.array([d.weekday() < 5 for d in dates]), 1.08, 0.78
    )
    noise = rng.lognormal(mean=0.0, sigma=0.10, size=(days, n, n))
    flights = np.rint(base[None, :, :] * weekday_factor[:, None, None] * noise)
    flights = np.maximum(flights, 0.0)
    for t in range(days):
        np.fill_diagonal(flights[t], 0.0)

    pop = _POPULATION
    infectious = 2e-4 * pop * rng.uniform(0.3, 1.7, size=n)
    recovered = np.zeros(n)
    beta0 = 0.145
    gamma = 0.10
    waning = 0.004
    import_rate = 6.0
    report_rate = 0.30
    period = rng.uniform(140.0, 220.0, size=n)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n)

    cases = np.zeros((days, n))
    for t in range(days):
        season = 1.0 + 0.45 * np.sin(2.0 * np.pi * t / period + phase)
        susceptible = np.maximum(pop - infectious - recovered, 0.0)
        local = beta0 * season * infectious * susceptible / pop
        prevalence = infectious / pop
        imported = import_rate * (flights[t].T @ prevalence) * susceptible / pop
        new_infections = local + imported
        infectious = infectious + new_infections - gamma * infectious
        recovered = recovered + gamma * infectious - waning * recovered
        infectious = np.maximum(infectious, 1.0)
        recovered = np.maximum(recovered, 0.0)
        reported = new_infections * report_rate * rng.lognormal(0.0, 0.05, size=n)
        cases[t] = np.rint(np.maximum(reported, 0.0))

    return SynthDataset(dates=dates, cases=cases, flights=flights)


def write_csvs(dataset: SynthDataset, cases_path: str, flights_path: str) -> None:
    """Emit the dataset in the two ingestion schemas. Zero-flight pairs are
    omitted, which ingestion reads back as zero."""
    with open(cases_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "region", "cases"])
        for t, day in enumerate(dataset.dates):
            for r, name in enumerate(REGIONS):
                w.writerow([day.isoformat(), name, int(dataset.cases[t, r])])
    with open(flights_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "src", "dst", "flights"])
        for t, day in enumerate(dataset.dates):
            for u, src in enumerate(REGIONS):
                for v, dst in enumerate(REGIONS):
                    if u == v:
                        continue
                    count = int(dataset.flights[t, u, v])
                    if count > 0:
                        w.writerow([day.isoformat(), src, dst, count])


def synthesize(config: SynthConfig, out_dir: str) -> tuple[str, str]:
    """Generate and write a dataset; returns (cases_path, flights_path)."""
    os.makedirs(out_dir, exist_ok=True)
    cases_path = os.path.join(out_dir, "cases.csv")
    flights_path = os.path.join(out_dir, "flights.csv")
    write_csvs(generate(config), cases_path, flights_path)
    return cases_path, flights_path


def hub_incident_share(flights: np.ndarray, region: int) -> float:
    """Fraction of total flight volume on edges touching one region."""
    total = flights.sum()
    incident = flights[:, region, :].sum() + flights[:, :, region].sum()
    return float(incident / total)


def outgoing_totals(flights: np.ndarray) -> np.ndarray:
    """Total outgoing flights per region across all days."""
    return flights.sum(axis=(0, 2))
