"""Render -> decode -> score, shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codec import DecodeConfig, collision_report, decode_map
from .core import BACKGROUND, Camera, EmbeddingMap, LabelMap, MaskKind, Scene, partition_from_mask
from .metrics import class_ious, miou, pq_scene
from .raster import blend_weights, compose


@dataclass
class RenderedView:
    instance: EmbeddingMap
    semantic: EmbeddingMap


def render_view(scene: Scene, camera: Camera) -> RenderedView:
    weights, coverage = blend_weights(scene, camera)
    return RenderedView(
        instance=compose(weights, coverage, scene.instance_embeddings),
        semantic=compose(weights, coverage, scene.semantic_embeddings),
    )


def decode_views(rendered: Sequence[RenderedView], threshold: float = 0.5) -> tuple[list[LabelMap], list[LabelMap]]:
    inst, sem = [], []
    for r in rendered:
        inst.append(decode_map(r.instance, DecodeConfig(threshold, r.instance.dim), MaskKind.INSTANCE))
        sem.append(decode_map(r.semantic, DecodeConfig(threshold, r.semantic.dim), MaskKind.SEMANTIC))
    return inst, sem


@dataclass(frozen=True)
class CodeClassTable:
    """Semantic code -> class id, learnt by majority vote on training views.

    Codes never seen in training fall back to the seen code at the smallest
    Hamming distance (ties to the smaller code).
    """

    codes: np.ndarray
    classes: np.ndarray

    def lookup(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        out = np.zeros_like(codes)
        if self.codes.size == 0:
            return out
        uniq, inv = np.unique(codes, return_inverse=True)
        mapped = np.empty(uniq.size, dtype=np.int64)
        for k, c in enumerate(uniq):
            if c == BACKGROUND:
                mapped[k] = BACKGROUND
                continue
            dist = np.array([bin(int(c) ^ int(s)).count("1") for s in self.codes])
            mapped[k] = self.classes[int(np.argmin(dist))]
        return mapped[inv.reshape(codes.shape)]

    def as_dict(self) -> dict[str, int]:
        return {str(int(c)): int(k) for c, k in zip(self.codes, self.classes)}


def fit_code_classes(semantic_codes: Sequence[LabelMap], semantic_gt: Sequence[LabelMap]) -> CodeClassTable:
    pred = np.concatenate([np.asarray(m.labels).ravel() for m in semantic_codes])
    gt = np.concatenate([np.asarray(m.labels).ravel() for m in semantic_gt])
    fg = pred != BACKGROUND
    if not np.any(fg):
        return CodeClassTable(np.zeros(0, np.int64), np.zeros(0, np.int64))
    pairs, counts = np.unique(np.stack([pred[fg], gt[fg]]), axis=1, return_counts=True)
    codes = np.unique(pairs[0])
    classes = np.empty(codes.size, dtype=np.int64)
    for k, c in enumerate(codes):
        sel = pairs[0] == c
        classes[k] = pairs[1][sel][np.argmax(counts[sel])]
    return CodeClassTable(codes, classes)


def apply_classes(semantic_codes: Sequence[LabelMap], table: CodeClassTable) -> list[LabelMap]:
    return [LabelMap(table.lookup(m.labels), MaskKind.SEMANTIC) for m in semantic_codes]


def evaluate_predictions(pred_instance: Sequence[LabelMap], pred_semantic: Sequence[LabelMap],
                         gt_instance: Sequence[LabelMap], gt_semantic: Sequence[LabelMap]) -> dict:
    """PQ^scene, mIoU, and decoder collisions for aligned per-view predictions."""
    pq = pq_scene(pred_instance, pred_semantic, gt_instance, gt_semantic)
    collisions = [collision_report(p, partition_from_mask(g)) for p, g in zip(pred_instance, gt_instance)]
    return {
        "pq_scene": pq.pq,
        "pq_scene_x100": round(100.0 * pq.pq, 2),
        "miou": miou(pred_semantic, gt_semantic),
        "class_iou": {str(c): v for c, v in sorted(class_ious(pred_semantic, gt_semantic).items())},
        "pq_detail": pq.as_dict(),
        "collisions": int(sum(c.collisions for c in collisions)),
        "scene_collisions": scene_collisions(pred_instance, gt_instance),
        "collision_reports": [c.as_dict() for c in collisions],
    }


def scene_collisions(pred_instance: Sequence[LabelMap], gt_instance: Sequence[LabelMap]) -> int:
    """Pairs of ground-truth objects whose majority code, taken over all
    views at once, coincides."""
    pred = np.concatenate([np.asarray(m.labels).ravel() for m in pred_instance])
    gt = np.concatenate([np.asarray(m.labels).ravel() for m in gt_instance])
    majority = {}
    for obj in np.unique(gt):
        if obj == BACKGROUND:
            continue
        codes, counts = np.unique(pred[gt == obj], return_counts=True)
        majority[int(obj)] = int(codes[np.argmax(counts)])
    values = list(majority.values())
    return sum(values[i] == values[j] for i in range(len(values)) for j in range(i + 1, len(values)))
