"""Forecast metrics and the stratified cluster/type/month reports.

MAE, RMSE, and MAPE over prediction records, iterated rolling forecasts,
persistence baselines, and the per-(cluster, household type, month) report
tables emitted as CSV and JSON.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from typing import IO, Mapping, Sequence

import numpy as np

from .errors import DomainError
from .features import Normalizer, WindowSample
from .nn import ModelParams, forward_batch

MAPE_EPSILON = 1e-6  # kWh; actuals at or below this are excluded from MAPE

TYPE_ALL_UPDATES = "all_updates"
TYPE_NONIID_HIGH = "noniid_high"
TYPE_NONIID_LOW = "noniid_low"

# Reference aggregate accuracy on the real London dataset; deviations beyond
# the bands are flagged as regressions when a user supplies that dataset.
REFERENCE_RMSE = 0.17
REFERENCE_RMSE_BAND = 0.05
REFERENCE_MAPE = 22.01
REFERENCE_MAPE_BAND = 5.0


@dataclass(frozen=True)
class PredictionRecord:
    household_id: str
    target_timestamp: datetime
    actual: float
    predicted: float


@dataclass
class MetricsReport:
    cluster: int | None  # None = aggregated over clusters
    household_type: str | None
    month: int | None
    n: int
    mae: float
    rmse: float
    mape: float | None
    mape_excluded: int


def _arrays(records: Sequence[PredictionRecord]) -> tuple[np.ndarray, np.ndarray]:
    if not records:
        raise DomainError("no prediction records")
    actual = np.array([r.actual for r in records], dtype=np.float64)
    predicted = np.array([r.predicted for r in records], dtype=np.float64)
    return actual, predicted


def mae(records: Sequence[PredictionRecord]) -> float:
    actual, predicted = _arrays(records)
    return float(np.mean(np.abs(actual - predicted)))


def rmse(records: Sequence[PredictionRecord]) -> float:
    actual, predicted = _arrays(records)
    return float(np.sqrt(np.mean((actual - predicted) ** 2)))


def mape(
    records: Sequence[PredictionRecord], epsilon: float = MAPE_EPSILON
) -> tuple[float, int]:
    """Mean absolute percentage error, excluding near-zero actuals.

    Returns (value, excluded count); raises when every record is excluded.
    """
    actual, predicted = _arrays(records)
    keep = actual > epsilon
    excluded = int(np.sum(~keep))
    if not np.any(keep):
        raise DomainError("all records excluded from MAPE (near-zero actuals)")
    value = float(np.mean(np.abs((actual[keep] - predicted[keep]) / actual[keep])) * 100.0)
    return value, excluded


def rolling_forecast(
    params: ModelParams, normalizer: Normalizer, seed_window: np.ndarray, steps: int
) -> np.ndarray:
    """Iterated one-step forecast: each prediction re-enters the window.

    seed_window is in raw kWh; the returned forecast is de-normalized kWh.
    """
    if steps < 1:
        raise DomainError("steps must be >= 1")
    window = np.asarray(normalizer.apply(seed_window), dtype=np.float64).copy()
    preds = np.empty(steps, dtype=np.float64)
    for i in range(steps):
        p = float(forward_batch(params, window[None, :])[0])
        preds[i] = p
        window = np.concatenate([window[1:], [p]])
    return np.asarray(normalizer.invert(preds))


def predict_records(
    params: ModelParams,
    normalizer: Normalizer,
    samples: Sequence[WindowSample],
    household_id: str,
) -> list[PredictionRecord]:
    """One-step-ahead predictions over raw-kWh window samples."""
    if not samples:
        return []
    X = np.stack([normalizer.apply(s.input) for s in samples])
    preds = np.asarray(normalizer.invert(forward_batch(params, X)))
    return [
        PredictionRecord(household_id, s.target_timestamp, s.target, float(p))
        for s, p in zip(samples, preds)
    ]


def persistence_records(
    samples: Sequence[WindowSample], household_id: str
) -> list[PredictionRecord]:
    """Naive baseline: predict the last value of each window."""
    return [
        PredictionRecord(household_id, s.target_timestamp, s.target, float(s.input[-1]))
        for s in samples
    ]


def derive_household_types(
    participation: Mapping[str, set[int]],
    rounds: int,
    mean_consumption: Mapping[str, float],
) -> dict[str, str]:
    """Label each household by what it received during the federation.

    Households selected in every round are the all-updates type; the rest
    split into high/low consumption relative to the cluster median.
    """
    ids = sorted(participation)
    median = float(np.median([mean_consumption[h] for h in ids]))
    types = {}
    for hid in ids:
        if len(participation[hid]) >= rounds:
            types[hid] = TYPE_ALL_UPDATES
        elif mean_consumption[hid] > median:
            types[hid] = TYPE_NONIID_HIGH
        else:
            types[hid] = TYPE_NONIID_LOW
    return types


def _metrics_row(
    records: Sequence[PredictionRecord],
    cluster: int | None,
    household_type: str | None,
    month: int | None,
    epsilon: float,
) -> MetricsReport:
    try:
        mape_value, excluded = mape(records, epsilon)
    except DomainError:
        mape_value, excluded = None, len(records)
    return MetricsReport(
        cluster=cluster,
        household_type=household_type,
        month=month,
        n=len(records),
        mae=mae(records),
        rmse=rmse(records),
        mape=mape_value,
        mape_excluded=excluded,
    )


def stratified_report(
    records: Sequence[PredictionRecord],
    cluster_of: Mapping[str, int],
    type_of: Mapping[str, str],
    epsilon: float = MAPE_EPSILON,
) -> list[MetricsReport]:
    """Metrics per (cluster, type, month), monthly all-cluster rows, grand row."""
    if not records:
        raise DomainError("no records to report on")
    groups: dict[tuple[int, str, int], list[PredictionRecord]] = {}
    monthly: dict[int, list[PredictionRecord]] = {}
    for r in records:
        key = (cluster_of[r.household_id], type_of[r.household_id], r.target_timestamp.month)
        groups.setdefault(key, []).append(r)
        monthly.setdefault(r.target_timestamp.month, []).append(r)
    rows = [
        _metrics_row(groups[key], key[0], key[1], key[2], epsilon)
        for key in sorted(groups)
    ]
    rows.extend(
        _metrics_row(monthly[m], None, None, m, epsilon) for m in sorted(monthly)
    )
    rows.append(_metrics_row(list(records), None, None, None, epsilon))
    return rows


def write_metrics_csv(rows: Sequence[MetricsReport], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["cluster", "type", "month", "n", "mae", "rmse", "mape", "mape_excluded"])
    for row in rows:
        writer.writerow(
            [
                "all" if row.cluster is None else row.cluster,
                "all" if row.household_type is None else row.household_type,
                "all" if row.month is None else row.month,
                row.n,
                f"{row.mae:.12g}",
                f"{row.rmse:.12g}",
                "" if row.mape is None else f"{row.mape:.12g}",
                row.mape_excluded,
            ]
        )


def write_predictions_csv(records: Sequence[PredictionRecord], stream: IO[str]) -> None:
    """Plot-ready per-timestamp predictions."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["household_id", "timestamp", "actual_kwh", "predicted_kwh"])
    for r in sorted(records, key=lambda r: (r.household_id, r.target_timestamp)):
        writer.writerow(
            [
                r.household_id,
                r.target_timestamp.strftime("%Y-%m-%d %H:%M:%S"),
                f"{r.actual:.12g}",
                f"{r.predicted:.12g}",
            ]
        )


def read_predictions_csv(stream: IO[str]) -> list[PredictionRecord]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header != ["household_id", "timestamp", "actual_kwh", "predicted_kwh"]:
        raise DomainError(f"unexpected predictions header: {header}")
    return [
        PredictionRecord(
            household_id=row[0],
            target_timestamp=datetime.strptime(row[1], "%Y-%m-%d %H:%M:%S"),
            actual=float(row[2]),
            predicted=float(row[3]),
        )
        for row in reader
        if row
    ]


def reference_check(grand_rmse: float, grand_mape: float | None) -> dict:
    """Flag aggregate metrics that drift beyond the reference bands."""
    result = {
        "rmse": grand_rmse,
        "rmse_reference": REFERENCE_RMSE,
        "rmse_regression": abs(grand_rmse - REFERENCE_RMSE) > REFERENCE_RMSE_BAND,
        "mape": grand_mape,
        "mape_reference": REFERENCE_MAPE,
        "mape_regression": (
            None if grand_mape is None else abs(grand_mape - REFERENCE_MAPE) > REFERENCE_MAPE_BAND
        ),
    }
    return result
