"""Segmentation metrics: pooled mIoU and scene-level panoptic quality.

Scene-level PQ merges every (class, instance) segment across all views
before matching, so a prediction only scores if its instance ids agree
between views.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import BACKGROUND, LabelMap


def _arr(m) -> np.ndarray:
    return np.asarray(m.labels if isinstance(m, LabelMap) else m)


def _stack(maps: Sequence) -> np.ndarray:
    return np.concatenate([_arr(m).ravel() for m in maps]) if maps else np.zeros(0, dtype=np.int64)


def _check_aligned(pred: Sequence, gt: Sequence) -> None:
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predicted views vs {len(gt)} ground-truth views")
    for k, (p, g) in enumerate(zip(pred, gt)):
        if _arr(p).shape != _arr(g).shape:
            raise ValueError(f"view {k}: shapes {_arr(p).shape} and {_arr(g).shape} differ")


def class_ious(pred: Sequence, gt: Sequence) -> dict[int, float]:
    """Per-class IoU pooled over views, for every non-background GT class."""
    _check_aligned(pred, gt)
    p, g = _stack(pred), _stack(gt)
    out = {}
    for c in np.unique(g):
        if c == BACKGROUND:
            continue
        pc, gc = p == c, g == c
        inter = int(np.count_nonzero(pc & gc))
        union = int(np.count_nonzero(pc | gc))
        out[int(c)] = inter / union
    return out


def miou(pred: Sequence, gt: Sequence) -> float:
    ious = class_ious(pred, gt)
    if not ious:
        raise ValueError("mIoU is undefined: ground truth has no non-background class")
    return float(np.mean([ious[c] for c in sorted(ious)]))


# ---------------------------------------------------------------- PQ^scene


@dataclass(frozen=True)
class ClassPQ:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class PQResult:
    pq: float
    per_class: dict[int, ClassPQ]
    matches: tuple[tuple[tuple[int, int], tuple[int, int], float], ...]  # (pred key, gt key, IoU)

    def as_dict(self) -> dict:
        return {
            "pq": self.pq,
            "per_class": {
                str(c): {"pq": r.pq, "sq": r.sq, "rq": r.rq, "tp": r.tp, "fp": r.fp, "fn": r.fn}
                for c, r in sorted(self.per_class.items())
            },
            "matches": [
                {"pred": list(p), "gt": list(g), "iou": iou} for p, g, iou in self.matches
            ],
        }


def _majority_class(inst: np.ndarray, sem: np.ndarray) -> dict[int, int]:
    """Class of each predicted instance: most frequent semantic label over
    its pixels, ties to the smaller label."""
    out = {}
    fg = inst != BACKGROUND
    if not np.any(fg):
        return out
    pairs, counts = np.unique(np.stack([inst[fg], sem[fg]]), axis=1, return_counts=True)
    for i in np.unique(pairs[0]):
        sel = pairs[0] == i
        classes, cnt = pairs[1][sel], counts[sel]
        out[int(i)] = int(classes[np.argmax(cnt)])
    return out


def scene_segments(instance: Sequence, semantic: Sequence, majority: bool
                   ) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Segment id per pixel (all views concatenated, -1 for none) and the
    (class, instance) key of each segment, sorted by key."""
    inst, sem = _stack(instance), _stack(semantic)
    if majority:
        cls_of = _majority_class(inst, sem)
        cls = np.array([cls_of.get(int(i), BACKGROUND) for i in range(int(inst.max(initial=0)) + 1)],
                       dtype=np.int64)[inst]
    else:
        cls = sem
    fg = (inst != BACKGROUND) & (cls != BACKGROUND)
    seg = np.full(inst.size, -1, dtype=np.int64)
    if not np.any(fg):
        return seg, []
    keys, ids = np.unique(np.stack([cls[fg], inst[fg]]), axis=1, return_inverse=True)
    seg[fg] = ids.ravel()
    return seg, [(int(c), int(i)) for c, i in keys.T]


def overlap_table(pred_seg: np.ndarray, gt_seg: np.ndarray, n_pred: int, n_gt: int):
    """Segment sizes and the (n_pred, n_gt) intersection-count matrix."""
    pred_size = np.bincount(pred_seg[pred_seg >= 0], minlength=n_pred)
    gt_size = np.bincount(gt_seg[gt_seg >= 0], minlength=n_gt)
    both = (pred_seg >= 0) & (gt_seg >= 0)
    inter = np.zeros((n_pred, n_gt), dtype=np.int64)
    np.add.at(inter, (pred_seg[both], gt_seg[both]), 1)
    return pred_size, gt_size, inter


def pq_from_table(pred_keys, gt_keys, pred_size, gt_size, inter) -> PQResult:
    """PQ from segment keys and overlaps; a match needs IoU strictly above 0.5."""
    gt_classes = sorted({c for c, _ in gt_keys})
    per_class: dict[int, ClassPQ] = {}
    matches = []
    for c in gt_classes:
        pi = [k for k, key in enumerate(pred_keys) if key[0] == c]
        gi = [k for k, key in enumerate(gt_keys) if key[0] == c]
        iou_sum, tp = 0.0, 0
        matched_p, matched_g = set(), set()
        for a in pi:
            for b in gi:
                i = int(inter[a, b])
                union = int(pred_size[a] + gt_size[b]) - i
                # integer test keeps IoU == 0.5 exactly out
                if 2 * i > union:
                    iou = i / union
                    iou_sum += iou
                    tp += 1
                    matched_p.add(a)
                    matched_g.add(b)
                    matches.append((pred_keys[a], gt_keys[b], iou))
        fp = len(pi) - len(matched_p)
        fn = len(gi) - len(matched_g)
        denom = tp + 0.5 * fp + 0.5 * fn
        sq = iou_sum / tp if tp else 0.0
        rq = tp / denom if denom else 0.0
        per_class[c] = ClassPQ(pq=iou_sum / denom if denom else 0.0, sq=sq, rq=rq, tp=tp, fp=fp, fn=fn)
    pq = float(np.mean([per_class[c].pq for c in gt_classes])) if gt_classes else 0.0
    return PQResult(pq=pq, per_class=per_class, matches=tuple(matches))


def pq_scene(pred_instance: Sequence, pred_semantic: Sequence,
             gt_instance: Sequence, gt_semantic: Sequence) -> PQResult:
    """Scene-level PQ, averaged over ground-truth classes.

    Predicted segments take the majority semantic label of their pixels as
    their class; ground-truth segments are keyed by (class, instance) directly.
    """
    _check_aligned(pred_instance, gt_instance)
    _check_aligned(pred_semantic, gt_semantic)
    _check_aligned(pred_instance, pred_semantic)
    pseg, pkeys = scene_segments(pred_instance, pred_semantic, majority=True)
    gseg, gkeys = scene_segments(gt_instance, gt_semantic, majority=False)
    ps, gs, inter = overlap_table(pseg, gseg, len(pkeys), len(gkeys))
    return pq_from_table(pkeys, gkeys, ps, gs, inter)


# ---------------------------------------------------------------- timing


def median_time(fn: Callable[[], object], repeats: int = 5, min_seconds: float = 0.0) -> float:
    """Median wall time of ``fn`` over ``repeats`` runs.

    With ``min_seconds`` each run loops ``fn`` until at least that long has
    passed and reports the per-call average, which steadies very short calls.
    """
    samples = []
    for _ in range(repeats):
        calls = 0
        start = time.perf_counter()
        while True:
            fn()
            calls += 1
            elapsed = time.perf_counter() - start
            if elapsed >= min_seconds:
                break
        samples.append(elapsed / calls)
    return statistics.median(samples)


def timing_compare(decode: Callable[[], object], baseline: Callable[[], object], num_pixels: int,
                   repeats: int = 5) -> dict:
    """Wall time of the single-stage decode against cluster-then-assign on the same maps."""
    t_decode = median_time(decode, repeats)
    t_base = median_time(baseline, repeats)
    return {
        "pixels": int(num_pixels),
        "decode_seconds": t_decode,
        "baseline_seconds": t_base,
        "decode_seconds_per_pixel": t_decode / num_pixels,
        "baseline_seconds_per_pixel": t_base / num_pixels,
        "decode_pixels_per_second": num_pixels / t_decode,
        "baseline_pixels_per_second": num_pixels / t_base,
        "speedup": t_base / t_decode,
    }


def linear_scaling(sizes: Sequence[int], seconds: Sequence[float]) -> dict:
    """Slopes between consecutive (size, time) points and their max/min ratio."""
    slopes = [(seconds[k + 1] - seconds[k]) / (sizes[k + 1] - sizes[k]) for k in range(len(sizes) - 1)]
    positive = [s for s in slopes if s > 0]
    ratio = max(positive) / min(positive) if len(positive) == len(slopes) else float("inf")
    return {"sizes": list(map(int, sizes)), "seconds": list(seconds), "slopes": slopes, "slope_ratio": ratio}
