"""Synthetic benchmark scenes: Gaussian-blob objects, a ring of cameras,
exact per-view masks, and per-view label scrambling."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import BACKGROUND, Camera, LabelMap, MaskKind, Scene, look_at
from .raster import blend_weights

MAX_PLACEMENT_ATTEMPTS = 10_000
PLACEMENT_RESTART = 500  # failed draws in a row before starting the layout over


class SpecInfeasible(ValueError):
    """The requested synthetic scene cannot be generated."""


class Inconsistency(str, Enum):
    NONE = "none"
    PERMUTE_PER_VIEW = "permute_per_view"


@dataclass(frozen=True)
class SynthSpec:
    num_objects: int = 8
    primitives_per_object: int = 24
    num_classes: int = 3
    num_views: int = 20
    num_eval_views: int = 5
    image_size: tuple[int, int] = (128, 128)  # (H, W)
    camera_radius: float = 1.5
    camera_height: float = 3.5
    rng_seed: int = 0
    inconsistency: Inconsistency = Inconsistency.PERMUTE_PER_VIEW
    embedding_dim: int = 12
    semantic_dim: int = 12
    arena: float = 1.2  # object centres lie in [-arena, arena]^2
    object_spread: float = 0.1
    min_separation: float = 0.9

    def validate(self) -> list[str]:
        problems = []
        if self.num_objects < 1:
            problems.append("num_objects must be >= 1")
        if self.primitives_per_object < 1:
            problems.append("primitives_per_object must be >= 1")
        if not 1 <= self.num_classes <= self.num_objects:
            problems.append("num_classes must lie in [1, num_objects]")
        if self.num_views < 1:
            problems.append("num_views must be >= 1")
        if self.num_eval_views < 0:
            problems.append("num_eval_views must be >= 0")
        if self.image_size[0] <= 0 or self.image_size[1] <= 0:
            problems.append("image_size must be positive")
        if 2**self.embedding_dim <= self.num_objects:
            problems.append(
                f"decoder capacity 2^{self.embedding_dim} = {2**self.embedding_dim} codes "
                f"cannot separate {self.num_objects} objects"
            )
        if 2**self.semantic_dim <= self.num_classes:
            problems.append(f"semantic capacity 2^{self.semantic_dim} cannot separate {self.num_classes} classes")
        return problems


@dataclass
class SynthDataset:
    scene: Scene
    cameras: list[Camera]
    instance_masks: list[LabelMap]  # consistent ground truth, one per camera
    semantic_masks: list[LabelMap]
    object_class: np.ndarray  # (num_objects + 1,), entry 0 is background
    primitive_object: np.ndarray  # (N,) object id (1-based) of each primitive
    train_views: list[int] = field(default_factory=list)
    eval_views: list[int] = field(default_factory=list)


def _random_unit_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _place_centres(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    centres: list[np.ndarray] = []
    streak = 0
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        c = np.array([*rng.uniform(-spec.arena, spec.arena, 2), rng.uniform(0.0, 0.3)])
        if all(np.linalg.norm(c - o) >= spec.min_separation for o in centres):
            centres.append(c)
            streak = 0
            if len(centres) == spec.num_objects:
                return np.array(centres)
        else:
            streak += 1
            if streak >= PLACEMENT_RESTART:
                centres, streak = [], 0
    raise SpecInfeasible(
        f"could not place {spec.num_objects} objects {spec.min_separation} apart "
        f"after {MAX_PLACEMENT_ATTEMPTS} attempts"
    )


def ring_cameras(count: int, spec: SynthSpec, phase: float = 0.0, height: float | None = None) -> list[Camera]:
    h, w = spec.image_size
    focal = 1.1 * max(h, w)
    cams = []
    for k in range(count):
        theta = 2.0 * np.pi * (k + phase) / max(count, 1)
        eye = (spec.camera_radius * np.cos(theta), spec.camera_radius * np.sin(theta),
               spec.camera_height if height is None else height)
        cams.append(Camera(look_at(eye, (0.0, 0.0, 0.1)), (focal, focal), ((w - 1) / 2.0, (h - 1) / 2.0), w, h))
    return cams


def id_masks(scene: Scene, camera: Camera, primitive_object: np.ndarray,
             num_objects: int) -> np.ndarray:
    """Per-pixel argmax of per-object blend mass; background below 0.5 coverage."""
    weights, coverage = blend_weights(scene, camera)
    onehot = np.zeros((len(scene), num_objects))
    onehot[np.arange(len(scene)), primitive_object - 1] = 1.0
    mass = np.asarray(weights @ onehot)
    labels = np.argmax(mass, axis=1).astype(np.int64) + 1
    labels[coverage.ravel() < 0.5] = BACKGROUND
    return labels.reshape(coverage.shape)


def generate(spec: SynthSpec) -> SynthDataset:
    problems = spec.validate()
    if problems:
        raise SpecInfeasible("; ".join(problems))
    rng = np.random.default_rng(spec.rng_seed)
    centres = _place_centres(spec, rng)
    n_obj, per = spec.num_objects, spec.primitives_per_object
    n = n_obj * per

    primitive_object = np.repeat(np.arange(1, n_obj + 1), per)
    offsets = spec.object_spread * rng.standard_normal((n, 3))
    # keep blobs compact: pull outliers back onto the 2-sigma sphere
    norms = np.linalg.norm(offsets, axis=1, keepdims=True)
    limit = 2.0 * spec.object_spread
    offsets *= np.minimum(1.0, limit / np.maximum(norms, 1e-12))
    positions = centres[primitive_object - 1] + offsets
    scales = rng.uniform(0.04, 0.08, (n, 3))
    rotations = _random_unit_quaternions(rng, n)
    opacities = rng.uniform(0.6, 0.95, n)
    base_colors = rng.uniform(0.1, 0.9, (n_obj, 3))
    colors = np.clip(base_colors[primitive_object - 1] + 0.05 * rng.standard_normal((n, 3)), 0.0, 1.0)
    object_class = np.zeros(n_obj + 1, dtype=np.int64)
    object_class[1:] = rng.permutation(np.arange(n_obj) % spec.num_classes) + 1

    margin = 4 * spec.object_spread
    lo = np.array([-spec.arena - margin, -spec.arena - margin, -margin])
    hi = np.array([spec.arena + margin, spec.arena + margin, 0.3 + margin])
    positions = np.clip(positions, lo, hi)
    scene = Scene(
        positions=positions,
        scales=scales,
        rotations=rotations,
        opacities=opacities,
        colors=colors,
        instance_embeddings=np.zeros((n, spec.embedding_dim)),
        semantic_embeddings=np.zeros((n, spec.semantic_dim)),
        bound=np.stack([lo, hi]),
    )

    cameras = ring_cameras(spec.num_views, spec)
    cameras += ring_cameras(spec.num_eval_views, spec, phase=0.37, height=spec.camera_height * 0.8)
    inst, sem = [], []
    for cam in cameras:
        labels = id_masks(scene, cam, primitive_object, n_obj)
        inst.append(LabelMap(labels, MaskKind.INSTANCE))
        sem.append(LabelMap(object_class[labels], MaskKind.SEMANTIC))

    seen = set()
    for m in inst[: spec.num_views]:
        seen.update(np.unique(m.labels).tolist())
    missing = sorted(set(range(1, n_obj + 1)) - seen)
    if missing:
        raise SpecInfeasible(f"objects {missing} are not visible in any training view")

    return SynthDataset(
        scene=scene,
        cameras=cameras,
        instance_masks=inst,
        semantic_masks=sem,
        object_class=object_class,
        primitive_object=primitive_object,
        train_views=list(range(spec.num_views)),
        eval_views=list(range(spec.num_views, spec.num_views + spec.num_eval_views)),
    )


def make_inconsistent(masks: list[LabelMap], rng_seed: int, num_labels: int | None = None
                      ) -> tuple[list[LabelMap], list[np.ndarray]]:
    """Relabel each view with its own random permutation of {1..num_labels}.

    Returns the scrambled masks and, per view, the lookup table ``perm`` with
    ``new = perm[old]`` (``perm[0] == 0``). The tables are for diagnostics.
    """
    if not masks:
        raise ValueError("no masks to relabel")
    if num_labels is None:
        num_labels = int(max(int(m.labels.max()) for m in masks))
    rng = np.random.default_rng(rng_seed)
    out, tables = [], []
    for m in masks:
        perm = np.concatenate([[0], rng.permutation(num_labels) + 1]).astype(np.int64)
        out.append(LabelMap(perm[m.labels], m.kind, m.background_id))
        tables.append(perm)
    return out, tables
