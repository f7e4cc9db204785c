"""Domain types shared by every stage: primitives, scenes, cameras, masks."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import scipy.sparse as sp

BACKGROUND = 0
LABEL_LIMIT = 2**31


class MaskKind(str, Enum):
    INSTANCE = "instance"
    SEMANTIC = "semantic"


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) quaternions in (w, x, y, z) order."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


@dataclass(frozen=True)
class GaussianPrimitive:
    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray
    instance_embedding: np.ndarray
    semantic_embedding: np.ndarray


@dataclass
class Scene:
    """Struct-of-arrays Gaussian scene.

    Geometry and appearance (``positions`` .. ``colors``) are treated as
    frozen; only the two embedding arrays are ever updated.
    """

    positions: np.ndarray  # (N, 3)
    scales: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4) unit quaternions, w first
    opacities: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)
    instance_embeddings: np.ndarray  # (N, d)
    semantic_embeddings: np.ndarray  # (N, d_s)
    bound: np.ndarray  # (2, 3): min corner, max corner

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.instance_embeddings.shape[1]

    @property
    def semantic_dim(self) -> int:
        return self.semantic_embeddings.shape[1]

    def primitive(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            position=self.positions[i],
            scale=self.scales[i],
            rotation=self.rotations[i],
            opacity=float(self.opacities[i]),
            color=self.colors[i],
            instance_embedding=self.instance_embeddings[i],
            semantic_embedding=self.semantic_embeddings[i],
        )

    @classmethod
    def from_primitives(cls, prims: list[GaussianPrimitive], bound=None) -> "Scene":
        positions = np.array([p.position for p in prims], dtype=np.float64).reshape(-1, 3)
        if bound is None:
            bound = np.stack([positions.min(0), positions.max(0)])
        return cls(
            positions=positions,
            scales=np.array([p.scale for p in prims], dtype=np.float64).reshape(-1, 3),
            rotations=np.array([p.rotation for p in prims], dtype=np.float64).reshape(-1, 4),
            opacities=np.array([p.opacity for p in prims], dtype=np.float64),
            colors=np.array([p.color for p in prims], dtype=np.float64).reshape(-1, 3),
            instance_embeddings=np.array([p.instance_embedding for p in prims], dtype=np.float64),
            semantic_embeddings=np.array([p.semantic_embedding for p in prims], dtype=np.float64),
            bound=np.asarray(bound, dtype=np.float64),
        )

    def with_embeddings(self, instance=None, semantic=None) -> "Scene":
        return replace(
            self,
            instance_embeddings=self.instance_embeddings if instance is None else np.asarray(instance, float),
            semantic_embeddings=self.semantic_embeddings if semantic is None else np.asarray(semantic, float),
        )

    def copy(self) -> "Scene":
        return Scene(**{k: np.array(v, copy=True) for k, v in self.__dict__.items()})

    def covariances(self) -> np.ndarray:
        """World-space 3x3 covariances R S S^T R^T, shape (N, 3, 3)."""
        r = quat_to_rotmat(self.rotations / np.linalg.norm(self.rotations, axis=1, keepdims=True))
        m = r * self.scales[:, None, :]
        return m @ np.swapaxes(m, 1, 2)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera, OpenCV axes (x right, y down, z forward)."""

    world_to_camera: np.ndarray  # (4, 4)
    focal: tuple[float, float]
    principal_point: tuple[float, float]
    width: int
    height: int

    def scaled(self, factor: float) -> "Camera":
        """Same pose at a resampled resolution; pixel i of the result sits at
        pixel i/factor of the original."""
        return Camera(
            world_to_camera=self.world_to_camera,
            focal=(self.focal[0] * factor, self.focal[1] * factor),
            principal_point=(self.principal_point[0] * factor, self.principal_point[1] * factor),
            width=max(1, int(round(self.width * factor))),
            height=max(1, int(round(self.height * factor))),
        )

    def validate(self) -> list[str]:
        problems = []
        t = np.asarray(self.world_to_camera, dtype=np.float64)
        if t.shape != (4, 4):
            return [f"world_to_camera has shape {t.shape}, expected (4, 4)"]
        rot = t[:3, :3]
        if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-6:
            problems.append("world_to_camera rotation block is not orthonormal")
        if self.width <= 0 or self.height <= 0:
            problems.append(f"image size {self.width}x{self.height} is not positive")
        return problems


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera transform for a camera at ``eye`` facing ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    out = np.eye(4)
    out[:3, :3] = rot
    out[:3, 3] = -rot @ eye
    return out


@dataclass(frozen=True)
class LabelMap:
    labels: np.ndarray  # (H, W) non-negative integers
    kind: MaskKind = MaskKind.INSTANCE
    background_id: int = BACKGROUND

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def validate(self, camera: Camera | None = None) -> list[str]:
        problems = []
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            return [f"labels must be 2-D, got shape {lab.shape}"]
        if lab.size and (lab.min() < 0 or lab.max() >= LABEL_LIMIT):
            problems.append("label values outside [0, 2^31)")
        if camera is not None and lab.shape != (camera.height, camera.width):
            problems.append(f"mask {lab.shape} does not match camera {(camera.height, camera.width)}")
        return problems


@dataclass
class EmbeddingMap:
    """Rendered H x W x d field plus the blend weights that produced it.

    ``blend_weights`` is a CSR matrix of shape (H*W, N): row p holds the
    per-primitive weights alpha'_i T_i of pixel p (raster order).
    """

    values: np.ndarray  # (H, W, d)
    blend_weights: sp.csr_matrix
    coverage: np.ndarray  # (H, W)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1, self.dim)


@dataclass(frozen=True)
class Partition:
    """Disjoint pixel sets of a mask, in flat raster indices.

    Segments are ordered by their first pixel in raster order, so two masks
    that differ only by a relabeling yield identical partitions.
    """

    segments: tuple[np.ndarray, ...]
    boundary: tuple[np.ndarray, ...]
    shape: tuple[int, int]
    labels: tuple[int, ...] = field(default=())  # source label per segment, diagnostics only

    def __len__(self) -> int:
        return len(self.segments)

    def segment_ids(self) -> np.ndarray:
        """Flat array with the segment index of each pixel, -1 outside all segments."""
        out = np.full(self.shape[0] * self.shape[1], -1, dtype=np.int64)
        for k, seg in enumerate(self.segments):
            out[seg] = k
        return out

    def to_mask(self) -> np.ndarray:
        """Reconstruct a mask (labels 1..K in segment order, unless source labels are known)."""
        out = np.zeros(self.shape[0] * self.shape[1], dtype=np.int64)
        for k, seg in enumerate(self.segments):
            out[seg] = self.labels[k] if self.labels else k + 1
        return out.reshape(self.shape)


def validate_scene(scene: Scene) -> list[str]:
    """Return one message per violated invariant; empty when the scene is valid."""
    problems: list[str] = []
    n = len(scene)
    if n < 1:
        problems.append("scene has no primitives")
    arrays = {
        "position": (scene.positions, 3),
        "scale": (scene.scales, 3),
        "rotation": (scene.rotations, 4),
        "color": (scene.colors, 3),
    }
    for name, (arr, width) in arrays.items():
        if arr.shape != (n, width):
            problems.append(f"{name} array has shape {arr.shape}, expected ({n}, {width})")
    if scene.opacities.shape != (n,):
        problems.append(f"opacity array has shape {scene.opacities.shape}, expected ({n},)")
    if scene.instance_embeddings.ndim != 2 or scene.instance_embeddings.shape[0] != n:
        problems.append("instance_embedding length differs from the scene embedding dimension")
    if scene.semantic_embeddings.ndim != 2 or scene.semantic_embeddings.shape[0] != n:
        problems.append("semantic_embedding length differs from the scene semantic dimension")
    if problems:
        return problems

    lo, hi = scene.bound
    for i in range(n):
        norm = np.linalg.norm(scene.rotations[i])
        if abs(norm - 1.0) > 1e-6:
            problems.append(f"primitive {i}: rotation norm {norm:.6g} is not 1")
        if not np.all(scene.scales[i] > 0):
            problems.append(f"primitive {i}: scale {scene.scales[i].tolist()} not strictly positive")
        a = scene.opacities[i]
        if not 0.0 <= a <= 1.0:
            problems.append(f"primitive {i}: opacity {a:.6g} outside [0, 1]")
        if np.any(scene.positions[i] < lo) or np.any(scene.positions[i] > hi):
            problems.append(f"primitive {i}: position outside the scene bound")
        if np.any(scene.colors[i] < 0) or np.any(scene.colors[i] > 1):
            problems.append(f"primitive {i}: color outside [0, 1]")
    return problems


def partition_from_mask(mask: LabelMap | np.ndarray) -> Partition:
    """Split a mask into one segment per non-background label.

    Boundary pixels are those with a 4-neighbour of a different label
    (background included); the image border is not a boundary.
    """
    labels = np.asarray(mask.labels if isinstance(mask, LabelMap) else mask)
    bg = mask.background_id if isinstance(mask, LabelMap) else BACKGROUND
    h, w = labels.shape
    edge = np.zeros((h, w), dtype=bool)
    dv = labels[1:, :] != labels[:-1, :]
    edge[1:, :] |= dv
    edge[:-1, :] |= dv
    dh = labels[:, 1:] != labels[:, :-1]
    edge[:, 1:] |= dh
    edge[:, :-1] |= dh

    flat = labels.ravel()
    flat_edge = edge.ravel()
    fg = np.flatnonzero(flat != bg)
    if fg.size == 0:
        return Partition(segments=(), boundary=(), shape=(h, w), labels=())
    # stable sort keeps raster order inside each label group
    order = np.argsort(flat[fg], kind="stable")
    sorted_pix = fg[order]
    uniq, starts = np.unique(flat[sorted_pix], return_index=True)
    groups = np.split(sorted_pix, starts[1:])
    groups.sort(key=lambda g: g[0])
    segments = tuple(groups)
    boundary = tuple(g[flat_edge[g]] for g in segments)
    seg_labels = tuple(int(flat[g[0]]) for g in segments)
    return Partition(segments=segments, boundary=boundary, shape=(h, w), labels=seg_labels)
