"""Household clustering on the five-statistic consumption summary.

Lloyd's algorithm with seeded k-means++ initialization; each cluster later
forms one independent federation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Mapping, Sequence

import numpy as np

from .dataio import HouseholdStats
from .errors import DomainError

DEFAULT_K = 18
DEFAULT_MAX_ITERS = 300


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # cluster id per input row
    centroids: np.ndarray  # (k, dim)
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0


def stats_matrix(stats: Sequence[HouseholdStats]) -> np.ndarray:
    """Rows of (mean, median, total, max, min) per household."""
    return np.stack([s.as_vector() for s in stats])


def standardize(features: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center and scale each dimension to mean 0, stddev 1.

    Zero-variance dimensions are left at 0.  Returns (standardized, mean, std).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise DomainError("standardize needs at least 2 households")
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    safe = np.where(std > 0, std, 1.0)
    z = (features - mean) / safe
    z[:, std == 0] = 0.0
    return z, mean, std


def _squared_distances(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a centroid; pick any
            centroids[j] = X[rng.integers(n)]
        else:
            probs = d2 / total
            centroids[j] = X[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((X - centroids[j]) ** 2).sum(axis=1))
    return centroids


def repair_empty_clusters(
    X: np.ndarray, labels: np.ndarray, centroids: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Re-seed each empty cluster's centroid to the point farthest from it.

    The stolen point is re-labeled to the repaired cluster; at most k repairs
    per call.  No-op when every cluster is populated.
    """
    labels = labels.copy()
    centroids = centroids.copy()
    k = centroids.shape[0]
    taken: set[int] = set()
    for j in range(k):
        if np.any(labels == j):
            continue
        dist = ((X - centroids[j]) ** 2).sum(axis=1)
        for idx in taken:
            dist[idx] = -1.0
        far = int(np.argmax(dist))
        centroids[j] = X[far]
        labels[far] = j
        taken.add(far)
    return labels, centroids


def kmeans(
    features: np.ndarray,
    k: int = DEFAULT_K,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> ClusterAssignment:
    """Lloyd's algorithm with seeded k-means++ start.

    Converges when assignments stop changing or max_iters is hit.  Ties in
    nearest-centroid distance break toward the lower cluster id.
    """
    X = np.asarray(features, dtype=np.float64)
    n = X.shape[0]
    if k < 1 or k > n:
        raise DomainError(f"k={k} must be in 1..{n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(X, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    it = 0
    for it in range(1, max_iters + 1):
        new_labels = np.argmin(_squared_distances(X, centroids), axis=1)
        new_labels, centroids = repair_empty_clusters(X, new_labels, centroids)
        # update step: mean of members, summed in row order for determinism
        for j in range(k):
            members = X[new_labels == j]
            centroids[j] = members.mean(axis=0)
        history.append(float(_squared_distances(X, centroids)[np.arange(n), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    inertia = float(_squared_distances(X, centroids)[np.arange(n), labels].sum())
    return ClusterAssignment(
        labels=labels, centroids=centroids, inertia=inertia,
        inertia_history=history, n_iter=it,
    )


def assign_clusters(
    stats_by_id: Mapping[str, HouseholdStats],
    k: int = DEFAULT_K,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> tuple[dict[str, int], ClusterAssignment]:
    """Standardize per-household statistics and cluster; ids in sorted order."""
    ids = sorted(stats_by_id)
    if len(ids) < 2:
        raise DomainError("clustering needs at least 2 households")
    z, _, _ = standardize(stats_matrix([stats_by_id[i] for i in ids]))
    assignment = kmeans(z, k=k, seed=seed, max_iters=max_iters)
    return {hid: int(lab) for hid, lab in zip(ids, assignment.labels)}, assignment


def write_assignment_csv(cluster_of: Mapping[str, int], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["household_id", "cluster_id"])
    for hid in sorted(cluster_of):
        writer.writerow([hid, cluster_of[hid]])
