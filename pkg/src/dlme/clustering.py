"""Typical-day reduction of a scenario pool with k-means++."""

from __future__ import annotations

import numpy as np
from sklearn.cluster import KMeans

from .grid import ScenarioSet


class ClusteringError(ValueError):
    pass


def _feature_matrix(pool) -> np.ndarray:
    shapes = {(s.p_demand.shape, s.pv_availability.shape) for s in pool}
    if len(shapes) != 1:
        raise ClusteringError("pool members have different dimensions")
    return np.vstack([s.features() for s in pool])


def normalize(features: np.ndarray):
    """Column z-scores; constant columns are centred only."""
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    return (features - mean) / std, mean, std


def cluster_scenarios(pool, k: int, seed: int = 0, n_init: int = 10, label_prefix: str = "typical"):
    """Reduce ``pool`` to ``k`` centroid scenarios.

    Features are the concatenated load and PV profiles, z-scored per column.
    Centroids are member means in physical units, ordered by descending
    cluster size (ties by first member). Returns ``(centroids, sse, sizes)``
    where ``sse`` is measured in the normalised feature space.
    """
    pool = list(pool)
    if k < 1:
        raise ClusteringError("k must be >= 1")
    if not pool:
        raise ClusteringError("empty scenario pool")
    if k > len(pool):
        raise ClusteringError(f"k = {k} exceeds pool size {len(pool)}")
    X, _, _ = normalize(_feature_matrix(pool))
    n_distinct = len(np.unique(X, axis=0))
    if k > n_distinct:
        raise ClusteringError(f"k = {k} exceeds the number of distinct pool members ({n_distinct})")
    km = KMeans(n_clusters=k, init="k-means++", n_init=n_init, random_state=seed)
    labels = km.fit_predict(X)
    order = sorted(range(k), key=lambda c: (-int(np.sum(labels == c)), int(np.argmax(labels == c))))
    centroids, sizes = [], []
    sse = 0.0
    for rank, cl in enumerate(order):
        members = [pool[i] for i in np.flatnonzero(labels == cl)]
        sizes.append(len(members))
        sse += float(np.sum((X[labels == cl] - X[labels == cl].mean(axis=0)) ** 2))
        centroids.append(
            ScenarioSet(
                label=f"{label_prefix}{rank + 1}",
                p_demand=np.mean([m.p_demand for m in members], axis=0),
                q_demand=np.mean([m.q_demand for m in members], axis=0),
                pv_availability=np.mean([m.pv_availability for m in members], axis=0),
            )
        )
    return centroids, sse, sizes


def sse_curve(pool, k_values, seed: int = 0) -> dict:
    """SSE for each ``k`` (the elbow curve used to pick the cluster count)."""
    return {int(k): cluster_scenarios(pool, k, seed)[1] for k in k_values}
