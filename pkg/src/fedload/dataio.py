"""Smart-meter data ingestion, outlier filtering, and chronological splitting.

Input CSVs follow the London-households layout: one row per half-hourly
reading with columns LCLid, stdorToU, DateTime, KWH/hh.  A synthetic
generator provides a desk-scale substitute so experiments run without the
full dataset.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import DomainError, SchemaError

# Default column names of the raw export.
DEFAULT_SCHEMA = {
    "household_id": "LCLid",
    "tariff": "stdorToU",
    "timestamp": "DateTime",
    "kwh": "KWH/hh",
}

# kWh per half-hour bounds for household mean consumption; households with
# a mean below/above are treated as outliers (nearly unused / implausibly high).
OUTLIER_LOW = 0.09
OUTLIER_HIGH = 1.35

HALF_HOUR = timedelta(minutes=30)


class Tariff(Enum):
    STANDARD = "Std"
    DYNAMIC = "ToU"


@dataclass(frozen=True)
class MeterReading:
    timestamp: datetime
    kwh: float


@dataclass
class MeterSeries:
    """One household's time-ordered half-hourly consumption readings."""

    household_id: str
    tariff: Tariff
    readings: list[MeterReading]

    def values(self) -> np.ndarray:
        return np.array([r.kwh for r in self.readings], dtype=np.float64)

    def timestamps(self) -> list[datetime]:
        return [r.timestamp for r in self.readings]

    def __len__(self) -> int:
        return len(self.readings)


@dataclass(frozen=True)
class HouseholdStats:
    """Five-number consumption summary used for filtering and clustering."""

    mean_hh: float
    median_hh: float
    total: float
    max_hh: float
    min_hh: float

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.mean_hh, self.median_hh, self.total, self.max_hh, self.min_hh]
        )


@dataclass
class SplitSeries:
    train: MeterSeries
    test: MeterSeries


@dataclass
class ParseResult:
    series: list[MeterSeries]
    rows_skipped: int


def _parse_timestamp(text: str) -> datetime:
    # ISO-8601 with optional fractional seconds; the raw export uses seven
    # fractional digits, which fromisoformat rejects, so trim to six.
    text = text.strip()
    if "." in text:
        base, frac = text.rsplit(".", 1)
        text = f"{base}.{frac[:6]}" if frac else base
    return datetime.fromisoformat(text)


def parse_meter_csv(stream: IO[str], schema: dict[str, str] | None = None) -> ParseResult:
    """Parse a meter-reading CSV into one MeterSeries per household tag.

    Rows with an unparseable kWh value or timestamp (or a timestamp off the
    half-hour grid) are skipped and counted.  Duplicate timestamps within a
    tag keep the last occurrence.  Readings are sorted by timestamp.
    """
    schema = schema or DEFAULT_SCHEMA
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty input: missing header row")
    header = [h.strip() for h in header]
    try:
        idx = {key: header.index(name) for key, name in schema.items()}
    except ValueError as exc:
        raise SchemaError(f"malformed header {header!r}: {exc}")

    skipped = 0
    tariffs: dict[str, Tariff] = {}
    by_tag: dict[str, dict[datetime, float]] = {}
    for row in reader:
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            tag = row[idx["household_id"]].strip()
            tariff = Tariff(row[idx["tariff"]].strip())
            ts = _parse_timestamp(row[idx["timestamp"]])
            kwh = float(row[idx["kwh"]])
        except (ValueError, IndexError, KeyError):
            skipped += 1
            continue
        if not tag or kwh < 0 or not math.isfinite(kwh):
            skipped += 1
            continue
        if ts.minute not in (0, 30) or ts.second != 0 or ts.microsecond != 0:
            skipped += 1
            continue
        tariffs.setdefault(tag, tariff)
        by_tag.setdefault(tag, {})[ts] = kwh  # duplicate timestamp: keep last

    series = [
        MeterSeries(
            household_id=tag,
            tariff=tariffs[tag],
            readings=[MeterReading(ts, by_tag[tag][ts]) for ts in sorted(by_tag[tag])],
        )
        for tag in sorted(by_tag)
    ]
    return ParseResult(series=series, rows_skipped=skipped)


def serialize_meter_csv(series: Iterable[MeterSeries], stream: IO[str]) -> None:
    """Write series back out in the canonical four-column layout."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow([DEFAULT_SCHEMA[k] for k in ("household_id", "tariff", "timestamp", "kwh")])
    for s in series:
        for r in s.readings:
            writer.writerow(
                [s.household_id, s.tariff.value, r.timestamp.strftime("%Y-%m-%d %H:%M:%S"), repr(r.kwh)]
            )


def compute_stats(series: MeterSeries) -> HouseholdStats:
    """Five consumption statistics over all readings.

    Median uses the midpoint-of-two-middle-values convention for even counts.
    """
    if not series.readings:
        raise DomainError(f"empty series for household {series.household_id!r}")
    v = series.values()
    return HouseholdStats(
        mean_hh=float(np.mean(v)),
        median_hh=float(np.median(v)),
        total=float(np.sum(v)),
        max_hh=float(np.max(v)),
        min_hh=float(np.min(v)),
    )


def filter_outliers(
    all_series: Sequence[MeterSeries],
    low: float = OUTLIER_LOW,
    high: float = OUTLIER_HIGH,
) -> tuple[list[MeterSeries], list[MeterSeries]]:
    """Partition households by mean half-hourly consumption.

    Kept iff low <= mean_hh <= high; both partitions are returned for audit.
    """
    if low >= high:
        raise DomainError(f"low threshold {low} must be below high threshold {high}")
    kept: list[MeterSeries] = []
    removed: list[MeterSeries] = []
    for s in all_series:
        mean = compute_stats(s).mean_hh
        (kept if low <= mean <= high else removed).append(s)
    return kept, removed


def chronological_split(series: MeterSeries, boundary: datetime) -> SplitSeries:
    """Split readings strictly before the boundary into train, the rest into test."""
    if not series.readings:
        raise DomainError("cannot split an empty series")
    first = series.readings[0].timestamp
    last = series.readings[-1].timestamp
    if not (first < boundary <= last):
        raise DomainError(
            f"boundary {boundary} outside series range ({first}, {last}] "
            f"for household {series.household_id!r}"
        )
    cut = 0
    for cut, r in enumerate(series.readings):
        if r.timestamp >= boundary:
            break
    return SplitSeries(
        train=MeterSeries(series.household_id, series.tariff, series.readings[:cut]),
        test=MeterSeries(series.household_id, series.tariff, series.readings[cut:]),
    )


def generate_synthetic(
    households: int,
    days: int,
    profile_seed: int,
    noise_amp: float = 0.05,
    seasonal_amp: float = 0.25,
    start: datetime = datetime(2012, 1, 1),
) -> list[MeterSeries]:
    """Deterministic synthetic half-hourly consumption series.

    Each household is a daily sinusoid with weekly modulation, a slow
    seasonal trend, a per-household scale drawn from the seed, and bounded
    uniform noise; values are clipped at zero.  With noise_amp and
    seasonal_amp both zero the series is exactly weekly-periodic.
    """
    if households < 1 or days < 1:
        raise DomainError("households and days must both be >= 1")
    rng = np.random.default_rng(profile_seed)
    n = days * 48
    step = np.arange(n)
    hour = (step % 48) / 2.0
    day = step / 48.0
    daily = 1.0 + 0.6 * np.sin(2 * np.pi * (hour - 7.0) / 24.0)
    weekly = 1.0 + 0.2 * np.sin(2 * np.pi * day / 7.0)
    seasonal = 1.0 + seasonal_amp * np.cos(2 * np.pi * day / 365.0)
    timestamps = [start + i * HALF_HOUR for i in range(n)]

    out: list[MeterSeries] = []
    for h in range(households):
        scale = rng.uniform(0.15, 0.8)
        phase = rng.uniform(0.0, 2 * np.pi)
        shape = daily + 0.15 * np.sin(4 * np.pi * hour / 24.0 + phase)
        values = scale * shape * weekly * seasonal
        if noise_amp > 0:
            values = values + scale * rng.uniform(-noise_amp, noise_amp, size=n)
        values = np.clip(values, 0.0, None)
        tariff = Tariff.STANDARD if h % 2 == 0 else Tariff.DYNAMIC
        out.append(
            MeterSeries(
                household_id=f"SYN{h:05d}",
                tariff=tariff,
                readings=[MeterReading(t, float(v)) for t, v in zip(timestamps, values)],
            )
        )
    return out


def audit_summary(households_in: int, households_kept: int, rows_skipped: int) -> dict:
    return {
        "households_in": households_in,
        "households_kept": households_kept,
        "rows_skipped": rows_skipped,
    }
