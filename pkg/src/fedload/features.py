"""Sliding-window supervised samples and per-household max normalization."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Sequence

import numpy as np

from .dataio import HALF_HOUR, MeterSeries
from .errors import DomainError

DEFAULT_WINDOW = 336  # one week at half-hour resolution


@dataclass
class WindowSample:
    """A history window and the reading immediately following it."""

    input: np.ndarray
    target: float
    target_timestamp: datetime


@dataclass(frozen=True)
class Normalizer:
    """Divides by the training-set max so values land in [0, 1]."""

    scale: float

    def apply(self, x):
        return np.asarray(x, dtype=np.float64) / self.scale

    def invert(self, x):
        return np.asarray(x, dtype=np.float64) * self.scale


def make_windows(
    series: MeterSeries, window: int = DEFAULT_WINDOW, stride: int = 1
) -> list[WindowSample]:
    """Extract (window -> next value) samples from a series segment.

    A sample exists at each stride-spaced position where window+1 consecutive
    readings have no timestamp gap (consecutive readings more than 30 minutes
    apart).  A segment shorter than window+1 yields an empty list.
    """
    if window < 1 or stride < 1:
        raise DomainError("window and stride must both be >= 1")
    n = len(series.readings)
    if n < window + 1:
        return []
    values = series.values()
    ts = series.timestamps()
    # breaks[i] == 1 when the step from reading i to i+1 is a gap
    breaks = np.array(
        [1 if ts[i + 1] - ts[i] > HALF_HOUR else 0 for i in range(n - 1)], dtype=np.int64
    )
    cum = np.concatenate([[0], np.cumsum(breaks)])
    samples: list[WindowSample] = []
    for start in range(0, n - window, stride):
        # window+1 readings span steps start .. start+window-1
        if cum[start + window] - cum[start] == 0:
            samples.append(
                WindowSample(
                    input=values[start : start + window].copy(),
                    target=float(values[start + window]),
                    target_timestamp=ts[start + window],
                )
            )
    return samples


def fit_normalizer(samples: Sequence[WindowSample]) -> Normalizer:
    """Scale = max value seen in training inputs and targets; 1.0 if that max is 0."""
    if not samples:
        raise DomainError("cannot fit a normalizer on zero samples")
    peak = max(max(float(np.max(s.input)) for s in samples), max(s.target for s in samples))
    return Normalizer(scale=peak if peak > 0 else 1.0)


def stack_samples(samples: Sequence[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into (inputs, targets) float64 arrays."""
    if not samples:
        raise DomainError("no samples to stack")
    X = np.stack([s.input for s in samples]).astype(np.float64)
    y = np.array([s.target for s in samples], dtype=np.float64)
    return X, y
