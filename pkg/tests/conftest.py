from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from splatlift.core import Camera, Scene, look_at  # noqa: E402

settings.register_profile(
    "repo", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("repo")

ACCEPTANCE_KEY = pytest.StashKey[dict]()


def make_scene(n: int, rng: np.random.Generator, d: int = 4, ds: int = 3, spread: float = 0.4,
               scale=(0.05, 0.2), opacity=(0.3, 0.95)) -> Scene:
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    pos = rng.uniform(-spread, spread, (n, 3))
    return Scene(
        positions=pos,
        scales=rng.uniform(*scale, (n, 3)),
        rotations=q,
        opacities=rng.uniform(*opacity, n),
        colors=rng.uniform(0, 1, (n, 3)),
        instance_embeddings=rng.standard_normal((n, d)),
        semantic_embeddings=rng.standard_normal((n, ds)),
        bound=np.stack([pos.min(0) - 1, pos.max(0) + 1]),
    )


def front_camera(width: int = 8, height: int = 8, distance: float = 2.5, focal: float | None = None) -> Camera:
    f = focal if focal is not None else 1.6 * max(width, height)
    return Camera(look_at((0.0, -distance, 0.3), (0.0, 0.0, 0.0)), (f, f),
                  ((width - 1) / 2.0, (height - 1) / 2.0), width, height)


def axis_camera(focal=(100.0, 100.0), pp=(64.0, 64.0), width=128, height=128) -> Camera:
    """Identity pose: camera at the origin looking down +z."""
    return Camera(np.eye(4), focal, pp, width, height)


def single_scene(positions, scales, opacities, embeddings=None, colors=None) -> Scene:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = positions.shape[0]
    rot = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    if embeddings is None:
        emb = np.zeros((n, 2))
    else:
        emb = np.asarray(embeddings, dtype=np.float64)
        emb = emb.reshape(n, -1) if n else emb.reshape(0, emb.shape[-1])
    lo = positions.min(0) - 1 if n else -np.ones(3)
    hi = positions.max(0) + 1 if n else np.ones(3)
    return Scene(
        positions=positions,
        scales=np.asarray(scales, dtype=np.float64).reshape(n, 3),
        rotations=rot,
        opacities=np.asarray(opacities, dtype=np.float64).reshape(n),
        colors=np.full((n, 3), 0.5) if colors is None else np.asarray(colors, dtype=np.float64).reshape(n, 3),
        instance_embeddings=emb,
        semantic_embeddings=emb.copy(),
        bound=np.stack([lo, hi]),
    )


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
