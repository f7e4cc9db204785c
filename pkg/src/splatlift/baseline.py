"""Two-stage comparator: density clustering of rendered embeddings followed
by nearest-centroid labelling."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .codec import COVERAGE_GATE
from .core import BACKGROUND, EmbeddingMap, LabelMap, MaskKind
from .losses import sigmoid

DEFAULT_EPS = 0.05
DEFAULT_MIN_PTS = 16
DEFAULT_MAX_SAMPLES = 50_000
NOISE = -1


class NoClustersFound(ValueError):
    pass


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray  # (C, d) in sigmoid space
    radius: float


def dbscan(samples: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Cluster index per sample, NOISE for noise.

    A point is core when its closed eps-ball (itself included) holds at
    least ``min_pts`` samples. Seeds are taken in index order and clusters
    grow breadth-first with neighbours in ascending index, so a border point
    reachable from two clusters joins the one discovered first.
    """
    x = np.asarray(samples, dtype=np.float64)
    n = x.shape[0]
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    tree = cKDTree(x)
    core = tree.query_ball_point(x, eps, return_length=True) >= min_pts
    cluster = 0
    for seed in range(n):
        if labels[seed] != NOISE or not core[seed]:
            continue
        labels[seed] = cluster
        queue = deque([seed])
        while queue:
            j = queue.popleft()
            nbrs = np.sort(np.asarray(tree.query_ball_point(x[j], eps), dtype=np.int64))
            fresh = nbrs[labels[nbrs] == NOISE]
            labels[fresh] = cluster
            queue.extend(fresh[core[fresh]].tolist())
        cluster += 1
    return labels


def fit_density_clusters(samples: np.ndarray, eps: float = DEFAULT_EPS,
                         min_pts: int = DEFAULT_MIN_PTS) -> ClusterModel:
    x = np.asarray(samples, dtype=np.float64)
    if x.shape[0] < min_pts:
        raise ValueError(f"need at least min_pts={min_pts} samples, got {x.shape[0]}")
    labels = dbscan(x, eps, min_pts)
    k = int(labels.max()) + 1
    if k == 0:
        raise NoClustersFound(f"no dense cluster at eps={eps}, min_pts={min_pts}; try a larger eps")
    centroids = []
    for c in range(k):
        members = x[labels == c]
        # offset from the first member so a cluster of identical points is exact
        centroids.append(members[0] + (members - members[0]).mean(axis=0))
    centroids = np.stack(centroids)
    return ClusterModel(centroids=centroids, radius=float(eps))


def nearest_centroid(points: np.ndarray, centroids: np.ndarray, block: int = 8192) -> np.ndarray:
    """Index of the closest centroid; exact ties go to the lower index.

    Distances come from explicit differences rather than the expanded dot
    product form, so equidistant points tie exactly.
    """
    points = np.asarray(points, dtype=np.float64)
    out = np.empty(points.shape[0], dtype=np.int64)
    for start in range(0, points.shape[0], block):
        diff = points[start:start + block, None, :] - centroids[None, :, :]
        out[start:start + block] = np.argmin(np.einsum("pcd,pcd->pc", diff, diff), axis=1)
    return out


def assign_labels(emb_map: EmbeddingMap, model: ClusterModel,
                  kind: MaskKind = MaskKind.INSTANCE) -> LabelMap:
    """Label covered pixels with their nearest centroid (1-based)."""
    if model.centroids.shape[0] == 0:
        raise ValueError("cluster model has no centroids")
    probs = sigmoid(emb_map.flat())
    labels = nearest_centroid(probs, model.centroids).astype(np.int64) + 1
    labels[emb_map.coverage.ravel() < COVERAGE_GATE] = BACKGROUND
    return LabelMap(labels.reshape(emb_map.coverage.shape), kind)


def sample_pixels(maps: Sequence[EmbeddingMap], max_samples: int = DEFAULT_MAX_SAMPLES,
                  rng_seed: int = 0) -> np.ndarray:
    """Sigmoid embeddings of covered pixels pooled over maps, subsampled without replacement."""
    pooled = np.concatenate([sigmoid(m.flat()[m.coverage.ravel() >= COVERAGE_GATE]) for m in maps])
    if pooled.shape[0] > max_samples:
        rng = np.random.default_rng(rng_seed)
        pooled = pooled[np.sort(rng.choice(pooled.shape[0], size=max_samples, replace=False))]
    return pooled


def two_stage_labels(maps: Sequence[EmbeddingMap], eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS,
                     max_samples: int = DEFAULT_MAX_SAMPLES, rng_seed: int = 0,
                     kind: MaskKind = MaskKind.INSTANCE) -> tuple[ClusterModel, list[LabelMap]]:
    """Fit clusters on pooled pixels of ``maps`` and label every map."""
    model = fit_density_clusters(sample_pixels(maps, max_samples, rng_seed), eps, min_pts)
    return model, [assign_labels(m, model, kind) for m in maps]
