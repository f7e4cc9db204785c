"""Segmentation losses on rendered embeddings and on primitive neighbourhoods.

Each loss returns its value together with analytic gradients. Mask-driven
losses see only a :class:`Partition`, never raw label values, which makes
them blind to how a view happened to number its segments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EmbeddingMap, Partition, Scene
from .raster import Channel

DEFAULT_MARGIN = 1.0
DEFAULT_NEIGHBOR_THRESHOLD = 1e-2


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


@dataclass
class LinearProjection:
    matrix: np.ndarray  # (d, d)

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, noise: float = 0.01) -> "LinearProjection":
        return cls(np.eye(dim) + noise * rng.standard_normal((dim, dim)))


@dataclass(frozen=True)
class TripletBatch:
    anchor: np.ndarray  # flat pixel indices
    positive: np.ndarray
    negative: np.ndarray
    margin: float = DEFAULT_MARGIN

    def __len__(self) -> int:
        return int(self.anchor.size)

    @classmethod
    def empty(cls, margin: float = DEFAULT_MARGIN) -> "TripletBatch":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, margin)


@dataclass(frozen=True)
class NeighborGraph:
    adjacency: tuple[np.ndarray, ...]
    threshold: float

    def edges(self) -> np.ndarray:
        """Ordered pairs (i, j), each undirected edge listed both ways, shape (E, 2)."""
        src = [np.full(a.size, i, dtype=np.int64) for i, a in enumerate(self.adjacency)]
        if not src:
            return np.zeros((0, 2), dtype=np.int64)
        return np.stack([np.concatenate(src), np.concatenate(self.adjacency).astype(np.int64)], axis=1)


# ---------------------------------------------------------------- cluster


def cluster_loss_probs(probs: np.ndarray, partition: Partition) -> tuple[float, np.ndarray]:
    """Cluster loss on sigmoid-space values ``probs`` of shape (P, d).

    The pull term is averaged over segment pixels and the push term over
    ordered centroid pairs. Centroids depend on their pixels, so the
    gradient includes their contribution.
    """
    grad = np.zeros_like(probs)
    k = len(partition)
    if k == 0:
        return 0.0, grad
    sizes = np.array([s.size for s in partition.segments], dtype=np.float64)
    total = sizes.sum()
    # offset from the first pixel keeps constant segments exactly on their centroid
    centroids = np.stack([probs[s[0]] + (probs[s] - probs[s[0]]).mean(axis=0) for s in partition.segments])

    pull = 0.0
    for seg, m in zip(partition.segments, centroids):
        diff = probs[seg] - m
        pull += float(np.sum(diff * diff))
        # the centroid term vanishes: sum of diffs within a segment is zero
        grad[seg] = 2.0 * diff / total
    pull /= total

    push = 0.0
    if k > 1:
        mean = centroids.mean(axis=0)
        spread = centroids - mean
        pairs = k * (k - 1)
        # sum_{i != j} |m_i - m_j|^2 == 2k sum_i |m_i - mean|^2
        push = 2.0 * k * float(np.sum(spread * spread)) / pairs
        for seg, dm, n in zip(partition.segments, spread, sizes):
            grad[seg] -= 4.0 * k * dm / (pairs * n)
    return pull - push, grad


def cluster_loss(emb_map: EmbeddingMap, partition: Partition) -> tuple[float, np.ndarray]:
    """Cluster loss on sigmoid(map); gradient w.r.t. the raw map values."""
    raw = emb_map.flat()
    probs = sigmoid(raw)
    loss, grad_p = cluster_loss_probs(probs, partition)
    grad = grad_p * probs * (1.0 - probs)
    return loss, grad.reshape(emb_map.values.shape)


# ---------------------------------------------------------------- triplets


def mine_triplets(
    emb_map: EmbeddingMap | None,
    partition: Partition,
    max_triplets: int = 3000,
    rng_seed: int | np.random.Generator = 0,
    margin: float = DEFAULT_MARGIN,
) -> TripletBatch:
    """Sample (anchor, positive, negative) pixels with boundary positives/negatives.

    Anchors are drawn without replacement from all pixels of segments that
    have a boundary; the positive comes from the anchor segment's boundary
    and the negative from the union of every other segment's boundary.
    The map itself is not consulted; it is accepted for interface symmetry.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if len(partition) < 2:
        return TripletBatch.empty(margin)
    bsizes = np.array([b.size for b in partition.boundary], dtype=np.int64)
    total_b = int(bsizes.sum())
    eligible = [k for k in range(len(partition)) if bsizes[k] > 0 and total_b - bsizes[k] > 0]
    if not eligible:
        return TripletBatch.empty(margin)

    pool = np.concatenate([partition.segments[k] for k in eligible])
    owner = np.concatenate([np.full(partition.segments[k].size, k, dtype=np.int64) for k in eligible])
    count = min(int(max_triplets), pool.size)
    pick = np.sort(rng.choice(pool.size, size=count, replace=False))
    anchor = pool[pick]
    seg = owner[pick]

    all_b = np.concatenate(partition.boundary)
    starts = np.concatenate([[0], np.cumsum(bsizes)[:-1]])
    u_pos = rng.random(count)
    u_neg = rng.random(count)
    pos_idx = starts[seg] + np.minimum((u_pos * bsizes[seg]).astype(np.int64), bsizes[seg] - 1)
    others = total_b - bsizes[seg]
    r = np.minimum((u_neg * others).astype(np.int64), others - 1)
    # skip over the anchor segment's own block in the concatenated boundary list
    r = np.where(r >= starts[seg], r + bsizes[seg], r)
    return TripletBatch(anchor=anchor, positive=all_b[pos_idx], negative=all_b[r], margin=margin)


def triplet_loss_probs(
    probs: np.ndarray, batch: TripletBatch, matrix: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean hinge over triplets on projected sigmoid values; grads for probs and matrix."""
    grad_p = np.zeros_like(probs)
    grad_w = np.zeros_like(matrix)
    t = len(batch)
    if t == 0:
        return 0.0, grad_p, grad_w
    sa, sp_, sn = probs[batch.anchor], probs[batch.positive], probs[batch.negative]
    a, p, n = sa @ matrix.T, sp_ @ matrix.T, sn @ matrix.T
    d_ap = a - p
    d_an = a - n
    hinge = np.sum(d_ap * d_ap, axis=1) - np.sum(d_an * d_an, axis=1) + batch.margin
    active = hinge > 0
    loss = float(np.sum(hinge[active])) / t

    scale = active[:, None] * (2.0 / t)
    g_a = scale * (n - p)
    g_p = -scale * d_ap
    g_n = scale * d_an
    grad_w = g_a.T @ sa + g_p.T @ sp_ + g_n.T @ sn
    np.add.at(grad_p, batch.anchor, g_a @ matrix)
    np.add.at(grad_p, batch.positive, g_p @ matrix)
    np.add.at(grad_p, batch.negative, g_n @ matrix)
    return loss, grad_p, grad_w


def triplet_loss(
    emb_map: EmbeddingMap, batch: TripletBatch, proj: LinearProjection
) -> tuple[float, np.ndarray, np.ndarray]:
    """Triplet hinge after sigmoid and linear projection.

    Returns (loss, dLoss/dmap of shape (H, W, d), dLoss/dmatrix).
    """
    probs = sigmoid(emb_map.flat())
    loss, grad_p, grad_w = triplet_loss_probs(probs, batch, proj.matrix)
    grad = grad_p * probs * (1.0 - probs)
    return loss, grad.reshape(emb_map.values.shape), grad_w


# ---------------------------------------------------------------- 3D neighbourhood


def build_neighbor_graph(scene: Scene, neighbor_threshold: float = DEFAULT_NEIGHBOR_THRESHOLD) -> NeighborGraph:
    """Exact graph of primitive pairs with squared centre distance <= threshold.

    Candidates come from a uniform grid with cell size sqrt(threshold), so
    only the 27 surrounding cells are searched for each primitive.
    """
    if neighbor_threshold <= 0:
        raise ValueError("neighbor_threshold must be positive")
    pos = scene.positions
    n = pos.shape[0]
    cell = np.sqrt(neighbor_threshold)
    keys = np.floor(pos / cell).astype(np.int64)
    buckets: dict[tuple[int, int, int], list[int]] = {}
    for i, key in enumerate(map(tuple, keys)):
        buckets.setdefault(key, []).append(i)
    members = {k: np.array(v, dtype=np.int64) for k, v in buckets.items()}
    offsets = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)]

    src_parts, dst_parts = [], []
    for key, idx in members.items():
        cand = [members[k2] for off in offsets
                if (k2 := (key[0] + off[0], key[1] + off[1], key[2] + off[2])) in members]
        cand = np.concatenate(cand)
        diff = pos[idx][:, None, :] - pos[cand][None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        ii, jj = np.nonzero((d2 <= neighbor_threshold) & (idx[:, None] != cand[None, :]))
        src_parts.append(idx[ii])
        dst_parts.append(cand[jj])

    src = np.concatenate(src_parts) if src_parts else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dst_parts) if dst_parts else np.zeros(0, dtype=np.int64)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    bounds = np.searchsorted(src, np.arange(n + 1))
    adjacency = tuple(dst[bounds[i]:bounds[i + 1]] for i in range(n))
    return NeighborGraph(adjacency=adjacency, threshold=float(neighbor_threshold))


def regularization_embeddings(embeddings: np.ndarray, graph: NeighborGraph) -> tuple[float, np.ndarray]:
    """Sum over ordered neighbour pairs of |v_i - v_j|^2, with its gradient."""
    edges = graph.edges()
    grad = np.zeros_like(embeddings)
    if edges.size == 0:
        return 0.0, grad
    diff = embeddings[edges[:, 0]] - embeddings[edges[:, 1]]
    loss = float(np.sum(diff * diff))
    # each unordered pair appears twice, so d/dv_i collects 2 * 2 (v_i - v_j)
    np.add.at(grad, edges[:, 0], 4.0 * diff)
    return loss, grad


def regularization_3d(
    scene: Scene, graph: NeighborGraph, channel: Channel | str = Channel.INSTANCE
) -> tuple[float, np.ndarray]:
    channel = Channel(channel)
    if channel is Channel.COLOR:
        raise ValueError("3D regularization applies to embedding channels only")
    emb = scene.instance_embeddings if channel is Channel.INSTANCE else scene.semantic_embeddings
    return regularization_embeddings(emb, graph)
