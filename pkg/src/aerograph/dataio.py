"""Loading, cleaning, and windowing of the daily case/flight tables.

Two CSV schemas come in:

    cases.csv    date,region,cases
    flights.csv  date,src,dst,flights

Counts of -1 or blank mean "missing". The pipeline deletes whole days that
contain missing or negative entries, smooths cases with a trailing 7-day
moving average inside each run of consecutive surviving days (the first 6
days of each run fall away), applies the log10(x + 1) transform to both
cases and flights, and cuts the result into 8-day windows (7 input days,
1 target day). Splits are chronological: roughly 64/16/20.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np

REGIONS: tuple[str, ...] = (
    "NorthAmerica",
    "SouthAmerica",
    "Oceania",
    "Africa",
    "MiddleEast",
    "EasternEurope",
    "WesternEurope",
    "CentralAsia",
    "SouthAsia",
    "SoutheastAsia",
)

NUM_REGIONS = len(REGIONS)

# Short codes for CLI flags; SA / SAS / SEA keep the three south/southeast
# entries distinct.
REGION_CODES: dict[str, str] = {
    "NA": "NorthAmerica",
    "SA": "SouthAmerica",
    "OC": "Oceania",
    "AF": "Africa",
    "ME": "MiddleEast",
    "EE": "EasternEurope",
    "WE": "WesternEurope",
    "CA": "CentralAsia",
    "SAS": "SouthAsia",
    "SEA": "SoutheastAsia",
}

_REGION_INDEX = {name: i for i, name in enumerate(REGIONS)}
_CODE_OF = {full: code for code, full in REGION_CODES.items()}

SMOOTHING_DAYS = 7
WINDOW_INPUT_DAYS = 7
MIN_RUN_DAYS = 16  # below this in every run, the dataset is unusable


class DataError(Exception):
    """Malformed input tables or values."""


class PreprocessError(DataError):
    """The cleaned dataset cannot support the pipeline."""


def region_index(name: str) -> int:
    """Index of a region given its full identifier or short code."""
    full = REGION_CODES.get(name, name)
    try:
        return _REGION_INDEX[full]
    except KeyError:
        raise DataError(f"unknown region {name!r}") from None


def resolve_region(name: str) -> str:
    """Full region identifier for a full name or short code."""
    return REGIONS[region_index(name)]


def region_code(name: str) -> str:
    """Short code for a region given either identifier form."""
    return _CODE_OF[resolve_region(name)]


def transform_counts(x: np.ndarray) -> np.ndarray:
    """log10(x + 1), the working domain of the model."""
    return np.log10(np.asarray(x, dtype=np.float64) + 1.0)


@dataclass(frozen=True)
class CaseTable:
    """Daily case counts over a consecutive calendar span; NaN = missing."""

    dates: tuple[dt.date, ...]
    values: np.ndarray  # (T, regions)


@dataclass(frozen=True)
class FlightTable:
    """Daily origin->destination flight counts; NaN = missing."""

    dates: tuple[dt.date, ...]
    values: np.ndarray  # (T, regions, regions), zero diagonal


@dataclass(frozen=True)
class DailyGraph:
    """One retained day: smoothed, transformed cases plus the flight matrix.

    ``cases`` and ``flights`` are in the log10(x + 1) domain; the raw
    (untransformed) values are kept alongside because the bias correction
    and the perturbation machinery work on raw counts.
    """

    date: dt.date
    cases: np.ndarray  # (regions,) transformed smoothed cases
    flights: np.ndarray  # (regions, regions) transformed flights
    raw_cases: np.ndarray  # (regions,) smoothed cases before the transform
    raw_flights: np.ndarray  # (regions, regions) flights before the transform


@dataclass(frozen=True)
class WindowSample:
    """Seven consecutive input days and the day to predict."""

    days: tuple[DailyGraph, ...]
    target: DailyGraph

    @property
    def start(self) -> dt.date:
        return self.days[0].date

    @property
    def target_date(self) -> dt.date:
        return self.target.date


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[WindowSample, ...]
    val: tuple[WindowSample, ...]
    test: tuple[WindowSample, ...]


@dataclass
class PreprocessResult:
    graphs: list[DailyGraph]
    total_days: int
    deleted_days: list[dt.date]
    runs: list[tuple[dt.date, dt.date]] = field(default_factory=list)


def _parse_date(text: str, row: int) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise DataError(f"row {row}: bad date {text!r}, expected YYYY-MM-DD") from None


def _parse_count(text: str, row: int, column: str) -> float:
    s = text.strip() if text is not None else ""
    if s == "":
        return math.nan
    try:
        v = float(s)
    except ValueError:
        raise DataError(f"row {row}: bad {column} value {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}: non-finite {column} value {text!r}")
    if v == -1.0:
        return math.nan
    return v


def _open_table(path: str):
    try:
        return open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _check_header(reader: csv.DictReader, expected: list[str], path: str) -> None:
    got = reader.fieldnames
    if got is None or [c.strip() for c in got] != expected:
        raise DataError(f"{path}: expected header {','.join(expected)}, got {got}")


def _date_span(dates: set[dt.date]) -> tuple[dt.date, ...]:
    lo, hi = min(dates), max(dates)
    return tuple(lo + dt.timedelta(days=i) for i in range((hi - lo).days + 1))


def load_cases(path: str) -> CaseTable:
    """Read a cases CSV into a dense per-day table.

    The table covers the full calendar span between the earliest and latest
    date in the file; (date, region) pairs the file does not mention are
    missing values, as are explicit -1 or blank counts.
    """
    rows: dict[tuple[dt.date, int], float] = {}
    with _open_table(path) as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, ["date", "region", "cases"], path)
        for lineno, rec in enumerate(reader, start=2):
            day = _parse_date(rec["date"], lineno)
            name = rec["region"].strip()
            if name not in _REGION_INDEX:
                raise DataError(f"row {lineno}: unknown region {name!r}")
            key = (day, _REGION_INDEX[name])
            if key in rows:
                raise DataError(f"row {lineno}: duplicate entry for {name} on {day}")
            rows[key] = _parse_count(rec["cases"], lineno, "cases")
    if not rows:
        raise DataError(f"{path}: no data rows")
    dates = _date_span({d for d, _ in rows})
    values = np.full((len(dates), NUM_REGIONS), np.nan)
    index = {d: t for t, d in enumerate(dates)}
    for (day, r), v in rows.items():
        values[index[day], r] = v
    return CaseTable(dates=dates, values=values)


def load_flights(path: str) -> FlightTable:
    """Read a flights CSV into dense per-day matrices.

    Pairs absent from the file count as zero flights (no recorded traffic),
    unlike cases, where absence means missing. Explicit -1 or blank entries
    are missing. Self-loops are rejected.
    """
    rows: dict[tuple[dt.date, int, int], float] = {}
    with _open_table(path) as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, ["date", "src", "dst", "flights"], path)
        for lineno, rec in enumerate(reader, start=2):
            day = _parse_date(rec["date"], lineno)
            src, dst = rec["src"].strip(), rec["dst"].strip()
            for name in (src, dst):
                if name not in _REGION_INDEX:
                    raise DataError(f"row {lineno}: unknown region {name!r}")
            if src == dst:
                raise DataError(f"row {lineno}: self-loop {src} -> {dst}")
            key = (day, _REGION_INDEX[src], _REGION_INDEX[dst])
            if key in rows:
                raise DataError(
                    f"row {lineno}: duplicate entry for {src} -> {dst} on {day}"
                )
            rows[key] = _parse_count(rec["flights"], lineno, "flights")
    if not rows:
        raise DataError(f"{path}: no data rows")
    dates = _date_span({d for d, _, _ in rows})
    values = np.zeros((len(dates), NUM_REGIONS, NUM_REGIONS))
    index = {d: t for t, d in enumerate(dates)}
    for (day, u, v), x in rows.items():
        values[index[day], u, v] = x
    return FlightTable(dates=dates, values=values)


def preprocess(cases: CaseTable, flights: FlightTable) -> PreprocessResult:
    """Clean, smooth, and transform the aligned daily data.

    A day survives only if every case count and every flight count on it is
    present and non-negative. Days in the case span that the flight span does
    not cover get all-zero flight matrices. Within each run of consecutive
    surviving days, cases receive a trailing 7-day moving average, so each
    run's first 6 days are consumed as warmup. Both channels then move to the
    log10(x + 1) domain.
    """
    flight_index = {d: t for t, d in enumerate(flights.dates)}
    n_days = len(cases.dates)

    valid = np.zeros(n_days, dtype=bool)
    day_flights = np.zeros((n_days, NUM_REGIONS, NUM_REGIONS))
    for t, day in enumerate(cases.dates):
        crow = cases.values[t]
        ft = flight_index.get(day)
        frow = flights.values[ft] if ft is not None else day_flights[t]
        day_flights[t] = frow
        bad = (
            np.isnan(crow).any()
            or (crow < 0).any()
            or np.isnan(frow).any()
            or (frow < 0).any()
        )
        valid[t] = not bad

    deleted = [d for t, d in enumerate(cases.dates) if not valid[t]]

    # Runs of consecutive surviving days. The case span is consecutive by
    # construction, so run boundaries are exactly the invalid days.
    runs: list[list[int]] = []
    current: list[int] = []
    for t in range(n_days):
        if valid[t]:
            current.append(t)
        elif current:
            runs.append(current)
            current = []
    if current:
        runs.append(current)

    if not runs or max(len(r) for r in runs) < MIN_RUN_DAYS:
        longest = max((len(r) for r in runs), default=0)
        raise PreprocessError(
            f"no run of consecutive usable days reaches {MIN_RUN_DAYS} "
            f"(longest is {longest}); the dataset cannot be windowed"
        )

    graphs: list[DailyGraph] = []
    spans: list[tuple[dt.date, dt.date]] = []
    for run in runs:
        if len(run) < SMOOTHING_DAYS:
            continue
        raw = cases.values[run]  # (len, regions)
        kernel = np.ones(SMOOTHING_DAYS) / SMOOTHING_DAYS
        smoothed = np.empty((len(run) - SMOOTHING_DAYS + 1, NUM_REGIONS))
        for r in range(NUM_REGIONS):
            smoothed[:, r] = np.convolve(raw[:, r], kernel, mode="valid")
        kept = run[SMOOTHING_DAYS - 1 :]
        spans.append((cases.dates[kept[0]], cases.dates[kept[-1]]))
        for k, t in enumerate(kept):
            raw_c = smoothed[k]
            raw_f = day_flights[t]
            graphs.append(
                DailyGraph(
                    date=cases.dates[t],
                    cases=transform_counts(raw_c),
                    flights=transform_counts(raw_f),
                    raw_cases=raw_c,
                    raw_flights=raw_f,
                )
            )

    return PreprocessResult(
        graphs=graphs, total_days=n_days, deleted_days=deleted, runs=spans
    )


def consecutive_runs(graphs: list[DailyGraph]) -> list[list[DailyGraph]]:
    """Group retained days into runs of consecutive calendar dates."""
    runs: list[list[DailyGraph]] = []
    for g in graphs:
        if runs and (g.date - runs[-1][-1].date).days == 1:
            runs[-1].append(g)
        else:
            runs.append([g])
    return runs


def make_windows(
    graphs: list[DailyGraph], input_days: int = WINDOW_INPUT_DAYS
) -> list[WindowSample]:
    """Slide an (input_days + 1)-day window over each consecutive run."""
    if input_days < 1:
        raise DataError("windows need at least one input day")
    windows: list[WindowSample] = []
    for run in consecutive_runs(graphs):
        for i in range(len(run) - input_days):
            windows.append(
                WindowSample(days=tuple(run[i : i + input_days]), target=run[i + input_days])
            )
    return windows


def split_windows(
    windows: list[WindowSample], val_frac: float = 0.16, test_frac: float = 0.20
) -> DatasetSplit:
    """Chronological split: earliest windows train, latest windows test."""
    n = len(windows)
    n_val = math.floor(val_frac * n)
    n_test = math.floor(test_frac * n)
    n_train = n - n_val - n_test
    if n_train < 1 or n_val < 1 or n_test < 1:
        raise DataError(
            f"{n} windows cannot fill train/val/test "
            f"({n_train}/{n_val}/{n_test}); need more usable days"
        )
    ordered = sorted(windows, key=lambda w: w.start)
    return DatasetSplit(
        train=tuple(ordered[:n_train]),
        val=tuple(ordered[n_train : n_train + n_val]),
        test=tuple(ordered[n_train + n_val :]),
    )


def window_targets(windows: list[WindowSample] | tuple[WindowSample, ...]) -> np.ndarray:
    """Transformed target vectors stacked as a (windows, regions) array."""
    return np.stack([w.target.cases for w in windows])


def future_days(
    graphs: list[DailyGraph], window: WindowSample, horizon: int
) -> list[DailyGraph] | None:
    """The horizon days starting at a window's target date, if all retained.

    Returns None when the retained data does not contain every one of the
    `horizon` consecutive calendar days beginning at the target date; such
    windows cannot anchor a recursive forecast evaluated against truth.
    """
    by_date = {g.date: g for g in graphs}
    start = window.target_date
    out = []
    for d in range(horizon):
        g = by_date.get(start + dt.timedelta(days=d))
        if g is None:
            return None
        out.append(g)
    return out
