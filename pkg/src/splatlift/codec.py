"""Embedding-to-label decoding: sigmoid, threshold, read the bits as an integer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BACKGROUND, EmbeddingMap, LabelMap, MaskKind, Partition

MAX_CODE_BITS = 31
COVERAGE_GATE = 0.5
DECODE_BLOCK = 4096  # pixels per block


@dataclass(frozen=True)
class DecodeConfig:
    decode_threshold: float = 0.5
    embedding_dim: int = 12

    def __post_init__(self):
        if not 0.0 < self.decode_threshold < 1.0:
            raise ValueError(f"decode_threshold must lie in (0, 1), got {self.decode_threshold}")
        if not 1 <= self.embedding_dim <= MAX_CODE_BITS:
            raise ValueError(f"embedding_dim must be in [1, {MAX_CODE_BITS}], got {self.embedding_dim}")


def _bit_weights(d: int) -> np.ndarray:
    # coordinate k (1-based) carries weight 2^(k-1)
    return np.left_shift(np.int64(1), np.arange(d, dtype=np.int64))


def decode_pixel(embedding, cfg: DecodeConfig | None = None) -> int:
    emb = np.asarray(embedding, dtype=np.float64).ravel()
    if emb.size > MAX_CODE_BITS:
        raise ValueError(f"embedding of length {emb.size} exceeds the {MAX_CODE_BITS}-bit label width")
    thr = 0.5 if cfg is None else cfg.decode_threshold
    bits = emb > logit(thr)
    return int(bits.astype(np.int64) @ _bit_weights(emb.size))


def logit(p: float) -> float:
    """Inverse sigmoid; ``logit(0.5)`` is exactly 0."""
    return float(np.log(p / (1.0 - p)))


def decode_values(values: np.ndarray, decode_threshold: float = 0.5) -> np.ndarray:
    """Vectorised decode of (..., d) raw embeddings to integer codes (...).

    sigmoid(v) > t is tested as v > logit(t): same order, no transcendental
    per element, and no rounding of sigmoid near t. Pixels go through in
    blocks that stay in cache, so cost per pixel does not grow with map size.
    """
    values = np.asarray(values, dtype=np.float64)
    d = values.shape[-1]
    if d > MAX_CODE_BITS:
        raise ValueError(f"embedding dimension {d} exceeds the {MAX_CODE_BITS}-bit label width")
    cut = logit(decode_threshold)
    weights = _bit_weights(d)
    flat = values.reshape(-1, d)
    out = np.empty(flat.shape[0], dtype=np.int64)
    for start in range(0, flat.shape[0], DECODE_BLOCK):
        out[start:start + DECODE_BLOCK] = (flat[start:start + DECODE_BLOCK] > cut) @ weights
    return out.reshape(values.shape[:-1])


def decode_map(emb_map: EmbeddingMap, cfg: DecodeConfig | None = None,
               kind: MaskKind = MaskKind.INSTANCE) -> LabelMap:
    """One pass over the pixels; coverage below 0.5 decodes to background."""
    thr = 0.5 if cfg is None else cfg.decode_threshold
    labels = decode_values(emb_map.values, thr)
    labels[emb_map.coverage < COVERAGE_GATE] = BACKGROUND
    return LabelMap(labels=labels, kind=kind)


@dataclass(frozen=True)
class SegmentReport:
    segment: int
    reference_label: int
    majority_label: int
    purity: float
    size: int


@dataclass(frozen=True)
class CollisionReport:
    segments: tuple[SegmentReport, ...]
    collisions: int
    colliding_pairs: tuple[tuple[int, int], ...]

    def as_dict(self) -> dict:
        return {
            "collisions": self.collisions,
            "colliding_pairs": [list(p) for p in self.colliding_pairs],
            "segments": [
                {
                    "segment": s.segment,
                    "reference_label": s.reference_label,
                    "majority_label": s.majority_label,
                    "purity": s.purity,
                    "size": s.size,
                }
                for s in self.segments
            ],
        }


def _majority(values: np.ndarray) -> tuple[int, int]:
    """Most frequent value and its count; ties go to the smallest value."""
    uniq, counts = np.unique(values, return_counts=True)
    best = int(np.argmax(counts))
    return int(uniq[best]), int(counts[best])


def collision_report(decoded: LabelMap, reference: Partition) -> CollisionReport:
    """Majority decoded label and purity per reference segment, plus the
    number of segment pairs that share a majority label."""
    flat = np.asarray(decoded.labels).ravel()
    if decoded.labels.shape != reference.shape:
        raise ValueError(f"decoded map {decoded.labels.shape} and partition {reference.shape} differ in shape")
    rows = []
    for k, seg in enumerate(reference.segments):
        label, count = _majority(flat[seg])
        ref_label = reference.labels[k] if reference.labels else k + 1
        rows.append(SegmentReport(k, int(ref_label), label, count / seg.size, int(seg.size)))
    pairs = tuple(
        (a.segment, b.segment)
        for i, a in enumerate(rows)
        for b in rows[i + 1:]
        if a.majority_label == b.majority_label
    )
    return CollisionReport(segments=tuple(rows), collisions=len(pairs), colliding_pairs=pairs)
