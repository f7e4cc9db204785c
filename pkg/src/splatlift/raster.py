"""Per-pixel Gaussian splatting: projection, front-to-back blending, and the
embedding backward pass.

Geometry never changes while embeddings are optimized, so the blend weights
of a view are a fixed sparse (pixels x primitives) matrix. Rendering any
per-primitive feature is a sparse product and its gradient is the transpose.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .core import Camera, EmbeddingMap, Scene

NEAR_PLANE = 0.01
COV2D_REGULARIZER = 0.3  # px^2 added to both diagonal entries
FOOTPRINT_SIGMA = 3.0
MIN_TRANSMITTANCE = 1e-4


class Channel(str, Enum):
    COLOR = "color"
    INSTANCE = "instance"
    SEMANTIC = "semantic"


@dataclass(frozen=True)
class Splat2D:
    center: np.ndarray
    cov2d: np.ndarray
    depth: float
    primitive_index: int
    base_opacity: float


@dataclass(frozen=True)
class _Projected:
    """Depth-sorted splats as parallel arrays."""

    index: np.ndarray  # (S,) primitive ids
    center: np.ndarray  # (S, 2)
    cov2d: np.ndarray  # (S, 2, 2)
    depth: np.ndarray  # (S,)
    opacity: np.ndarray  # (S,)


def _project_arrays(scene: Scene, camera: Camera, near: float = NEAR_PLANE) -> _Projected:
    w2c = np.asarray(camera.world_to_camera, dtype=np.float64)
    rot, trans = w2c[:3, :3], w2c[:3, 3]
    cam = scene.positions @ rot.T + trans
    keep = np.flatnonzero(cam[:, 2] > near)
    if keep.size == 0:
        empty = np.zeros(0)
        return _Projected(np.zeros(0, dtype=np.int64), empty.reshape(0, 2), empty.reshape(0, 2, 2), empty, empty)
    cam = cam[keep]
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    fx, fy = camera.focal
    cx, cy = camera.principal_point

    jac = np.zeros((keep.size, 2, 3))
    jac[:, 0, 0] = fx / z
    jac[:, 0, 2] = -fx * x / (z * z)
    jac[:, 1, 1] = fy / z
    jac[:, 1, 2] = -fy * y / (z * z)
    cov_cam = rot @ scene.covariances()[keep] @ rot.T
    cov2d = jac @ cov_cam @ np.swapaxes(jac, 1, 2)
    cov2d[:, 0, 0] += COV2D_REGULARIZER
    cov2d[:, 1, 1] += COV2D_REGULARIZER
    center = np.stack([fx * x / z + cx, fy * y / z + cy], axis=1)

    # depth ascending, ties broken by primitive index
    order = np.lexsort((keep, z))
    return _Projected(
        index=keep[order],
        center=center[order],
        cov2d=cov2d[order],
        depth=z[order],
        opacity=scene.opacities[keep][order],
    )


def project(scene: Scene, camera: Camera, near: float = NEAR_PLANE) -> list[Splat2D]:
    """Project every primitive in front of ``near`` to a 2D splat, sorted by depth."""
    p = _project_arrays(scene, camera, near)
    return [
        Splat2D(
            center=p.center[k],
            cov2d=p.cov2d[k],
            depth=float(p.depth[k]),
            primitive_index=int(p.index[k]),
            base_opacity=float(p.opacity[k]),
        )
        for k in range(p.index.size)
    ]


def blend_weights(scene: Scene, camera: Camera, band: int = 16) -> tuple[sp.csr_matrix, np.ndarray]:
    """Blend-weight matrix (H*W, N) and coverage (H, W) of one view.

    Pixel (row r, col c) is sampled at image coordinates (c, r). Splats
    contribute inside their 3-sigma ellipse; a pixel stops accumulating once
    its transmittance drops below MIN_TRANSMITTANCE.
    """
    h, w, n = camera.height, camera.width, len(scene)
    p = _project_arrays(scene, camera)
    if p.index.size == 0:
        return sp.csr_matrix((h * w, n)), np.zeros((h, w))

    cov = p.cov2d
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2
    conic_a = cov[:, 1, 1] / det
    conic_b = -cov[:, 0, 1] / det
    conic_c = cov[:, 0, 0] / det
    # axis-aligned extent of the 3-sigma ellipse
    rx = FOOTPRINT_SIGMA * np.sqrt(cov[:, 0, 0])
    ry = FOOTPRINT_SIGMA * np.sqrt(cov[:, 1, 1])
    ux, uy = p.center[:, 0], p.center[:, 1]
    on_screen = (ux + rx >= 0) & (ux - rx <= w - 1) & (uy + ry >= 0) & (uy - ry <= h - 1)

    cols = np.arange(w, dtype=np.float64)
    rows_out, cols_out, vals_out = [], [], []
    for r0 in range(0, h, band):
        r1 = min(h, r0 + band)
        sel = np.flatnonzero(on_screen & (uy + ry >= r0) & (uy - ry <= r1 - 1))
        if sel.size == 0:
            continue
        py = np.repeat(np.arange(r0, r1, dtype=np.float64), w)
        px = np.tile(cols, r1 - r0)
        dx = px[:, None] - ux[sel][None, :]
        dy = py[:, None] - uy[sel][None, :]
        power = conic_a[sel] * dx * dx + 2.0 * conic_b[sel] * dx * dy + conic_c[sel] * dy * dy
        alpha = p.opacity[sel] * np.exp(-0.5 * power)
        alpha[power > FOOTPRINT_SIGMA**2] = 0.0
        trans = np.cumprod(1.0 - alpha, axis=1)
        before = np.empty_like(trans)
        before[:, 0] = 1.0
        before[:, 1:] = trans[:, :-1]
        weight = alpha * before
        weight[before < MIN_TRANSMITTANCE] = 0.0
        pix, k = np.nonzero(weight)
        rows_out.append(pix + r0 * w)
        cols_out.append(p.index[sel][k])
        vals_out.append(weight[pix, k])

    if rows_out:
        rows = np.concatenate(rows_out)
        cols_idx = np.concatenate(cols_out)
        vals = np.concatenate(vals_out)
    else:
        rows = cols_idx = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    weights = sp.csr_matrix((vals, (rows, cols_idx)), shape=(h * w, n))
    weights.sort_indices()
    coverage = np.asarray(weights.sum(axis=1)).reshape(h, w)
    return weights, coverage


def _features(scene: Scene, channel: Channel | str) -> np.ndarray:
    channel = Channel(channel)
    if channel is Channel.COLOR:
        return scene.colors
    if channel is Channel.INSTANCE:
        return scene.instance_embeddings
    return scene.semantic_embeddings


def compose(weights: sp.csr_matrix, coverage: np.ndarray, features: np.ndarray) -> EmbeddingMap:
    """Blend per-primitive ``features`` (N, d) with precomputed weights."""
    h, w = coverage.shape
    values = np.asarray(weights @ features).reshape(h, w, features.shape[1])
    return EmbeddingMap(values=values, blend_weights=weights, coverage=coverage)


def render(scene: Scene, camera: Camera, channel: Channel | str = Channel.INSTANCE) -> EmbeddingMap:
    """Alpha-blend one channel of the scene (color has d = 3)."""
    weights, coverage = blend_weights(scene, camera)
    return compose(weights, coverage, _features(scene, channel))


def backward_embeddings(emb_map: EmbeddingMap, pixel_grad: np.ndarray) -> np.ndarray:
    """Per-primitive gradient (N, d) given dLoss/dValues of shape (H, W, d).

    The blend is linear in each primitive's feature, so the gradient is the
    transposed weight matrix applied to the pixel gradient.
    """
    pixel_grad = np.asarray(pixel_grad, dtype=np.float64)
    if pixel_grad.shape != emb_map.values.shape:
        raise ValueError(
            f"pixel_grad shape {pixel_grad.shape} does not match map shape {emb_map.values.shape}"
        )
    flat = pixel_grad.reshape(-1, emb_map.dim)
    return np.asarray(emb_map.blend_weights.T @ flat)
