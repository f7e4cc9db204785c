"""Training loop for the per-primitive embeddings and the triplet projections."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import Camera, LabelMap, Partition, Scene, partition_from_mask
from .losses import (
    LinearProjection,
    NeighborGraph,
    build_neighbor_graph,
    cluster_loss,
    cluster_loss_probs,
    mine_triplets,
    regularization_embeddings,
    sigmoid,
    triplet_loss,
)
from .raster import backward_embeddings, blend_weights, compose

LOSS_TERMS = ("cluster", "triplet", "reg3d", "total")
MASK_SCALES = (0.25, 0.5, 1.0)


class ConfigError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    learning_rate: float = 1e-4
    lambda_cluster: float = 0.1
    lambda_triplet: float = 0.1
    lambda_3d: float = 0.1
    margin: float = 1.0
    neighbor_threshold: float = 1e-2
    late_loss_start: int | None = None  # None means iterations // 2
    max_triplets: int = 3000
    embedding_dim: int = 12
    semantic_dim: int = 12
    rng_seed: int = 0
    mask_fraction: float = 1.0
    mask_scale: float = 1.0
    init_std: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @property
    def late_start(self) -> int:
        return self.iterations // 2 if self.late_loss_start is None else self.late_loss_start

    def validate(self) -> list[str]:
        problems = []
        for name in ("lambda_cluster", "lambda_triplet", "lambda_3d"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if self.learning_rate <= 0:
            problems.append("learning_rate must be > 0")
        if self.iterations < 0:
            problems.append("iterations must be >= 0")
        if self.iterations > 0 and not self.late_start < self.iterations:
            problems.append("late_loss_start must be < iterations")
        if not 0.0 < self.mask_fraction <= 1.0:
            problems.append("mask_fraction must lie in (0, 1]")
        if self.mask_scale not in MASK_SCALES:
            problems.append(f"mask_scale must be one of {MASK_SCALES}")
        if self.neighbor_threshold <= 0:
            problems.append("neighbor_threshold must be > 0")
        if self.init_std <= 0:
            problems.append("init_std must be > 0")
        return problems

    def as_dict(self) -> dict:
        out = asdict(self)
        out["late_loss_start"] = self.late_start
        return out


class Adam:
    """Adam over a dict of named numpy arrays, updated in place."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] *= self.beta1
            self.m[k] += (1.0 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * self.m[k] / (np.sqrt(self.v[k] / bc2) + self.eps)


@dataclass
class View:
    """A training view reduced to its labelled pixels.

    Geometry is frozen, so the blend weights are computed once. Only rows of
    pixels that belong to some segment are kept; the partitions index into
    that compact (1, P) pixel strip, which is all the losses ever read.
    """

    camera: Camera
    weights: sp.csr_matrix  # (P, N)
    coverage: np.ndarray  # (1, P)
    instance: Partition
    semantic: Partition


def downsample_mask(mask: LabelMap, factor: float) -> LabelMap:
    """Nearest-neighbour resampling; output pixel i takes input pixel i/factor."""
    if factor == 1.0:
        return mask
    h, w = mask.labels.shape
    nh, nw = max(1, int(round(h * factor))), max(1, int(round(w * factor)))
    rows = np.minimum(np.round(np.arange(nh) / factor).astype(np.int64), h - 1)
    cols = np.minimum(np.round(np.arange(nw) / factor).astype(np.int64), w - 1)
    return LabelMap(mask.labels[np.ix_(rows, cols)], mask.kind, mask.background_id)


def _compact(part: Partition, lookup: np.ndarray, size: int) -> Partition:
    return Partition(
        segments=tuple(lookup[s] for s in part.segments),
        boundary=tuple(lookup[b] for b in part.boundary),
        shape=(1, size),
        labels=part.labels,
    )


def prepare_view(scene: Scene, camera: Camera, instance: LabelMap, semantic: LabelMap,
                 mask_scale: float = 1.0) -> View:
    cam = camera.scaled(mask_scale) if mask_scale != 1.0 else camera
    inst = downsample_mask(instance, mask_scale)
    sem = downsample_mask(semantic, mask_scale)
    for m in (inst, sem):
        problems = m.validate(cam)
        if problems:
            raise ConfigError("; ".join(problems))
    weights, coverage = blend_weights(scene, cam)
    pi, ps = partition_from_mask(inst), partition_from_mask(sem)
    used = np.unique(np.concatenate([np.zeros(0, np.int64), *pi.segments, *ps.segments]))
    lookup = np.full(coverage.size, -1, dtype=np.int64)
    lookup[used] = np.arange(used.size)
    return View(
        camera=cam,
        weights=weights[used],
        coverage=coverage.ravel()[used][None, :],
        instance=_compact(pi, lookup, used.size),
        semantic=_compact(ps, lookup, used.size),
    )


@dataclass
class TrainState:
    scene: Scene
    projection: LinearProjection  # instance channel
    semantic_projection: LinearProjection
    optimizer: Adam
    iteration: int = 0
    history: dict[str, list[float]] = field(default_factory=lambda: {k: [] for k in LOSS_TERMS})
    graph: NeighborGraph | None = None

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {
            "instance": self.scene.instance_embeddings,
            "semantic": self.scene.semantic_embeddings,
            "w_instance": self.projection.matrix,
            "w_semantic": self.semantic_projection.matrix,
        }


def init_state(scene: Scene, cfg: TrainConfig) -> TrainState:
    """Fresh embeddings from a zero-mean normal and near-identity projections."""
    rng = np.random.default_rng(cfg.rng_seed)
    n = len(scene)
    trained = scene.with_embeddings(
        instance=cfg.init_std * rng.standard_normal((n, cfg.embedding_dim)),
        semantic=cfg.init_std * rng.standard_normal((n, cfg.semantic_dim)),
    )
    return TrainState(
        scene=trained,
        projection=LinearProjection.init(cfg.embedding_dim, rng),
        semantic_projection=LinearProjection.init(cfg.semantic_dim, rng),
        optimizer=Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps),
    )


def _check(name: str, value: float) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"{name} loss is not finite ({value})")
    return value


def _channel_terms(view_w, coverage, emb, partition, proj, late, cfg, seed):
    emb_map = compose(view_w, coverage, emb)
    lc, gc = cluster_loss(emb_map, partition)
    pixel_grad = cfg.lambda_cluster * gc
    lt, gw = 0.0, np.zeros_like(proj.matrix)
    if late and cfg.lambda_triplet > 0:
        batch = mine_triplets(emb_map, partition, cfg.max_triplets, seed, cfg.margin)
        lt, gt, gw = triplet_loss(emb_map, batch, proj)
        pixel_grad = pixel_grad + cfg.lambda_triplet * gt
        gw = cfg.lambda_triplet * gw
    elif late:
        batch = mine_triplets(emb_map, partition, cfg.max_triplets, seed, cfg.margin)
        lt = triplet_loss(emb_map, batch, proj)[0]
    return lc, lt, backward_embeddings(emb_map, pixel_grad), gw


def train_step(state: TrainState, view: View | tuple, cfg: TrainConfig) -> TrainState:
    """One optimisation step on one view; mutates and returns ``state``."""
    if not isinstance(view, View):
        camera, inst, sem = view
        view = prepare_view(state.scene, camera, inst, sem, cfg.mask_scale)
    late = state.iteration >= cfg.late_start
    scene = state.scene

    seed = np.random.default_rng((cfg.rng_seed, state.iteration))
    lc_i, lt_i, g_inst, gw_i = _channel_terms(
        view.weights, view.coverage, scene.instance_embeddings, view.instance, state.projection, late, cfg, seed)
    lc_s, lt_s, g_sem, gw_s = _channel_terms(
        view.weights, view.coverage, scene.semantic_embeddings, view.semantic, state.semantic_projection,
        late, cfg, seed)

    reg = 0.0
    if late:
        if state.graph is None:
            state.graph = build_neighbor_graph(scene, cfg.neighbor_threshold)
        r_i, gr_i = regularization_embeddings(scene.instance_embeddings, state.graph)
        r_s, gr_s = regularization_embeddings(scene.semantic_embeddings, state.graph)
        reg = r_i + r_s
        g_inst = g_inst + cfg.lambda_3d * gr_i
        g_sem = g_sem + cfg.lambda_3d * gr_s

    cluster = _check("cluster", lc_i + lc_s)
    triplet = _check("triplet", lt_i + lt_s)
    reg = _check("reg3d", reg)
    total = _check("total", cfg.lambda_cluster * cluster + cfg.lambda_triplet * triplet + cfg.lambda_3d * reg)

    grads = {"instance": g_inst, "semantic": g_sem, "w_instance": gw_i, "w_semantic": gw_s}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"gradient of {name} is not finite")
    state.optimizer.step(state.params, grads)

    for key, value in zip(LOSS_TERMS, (cluster, triplet, reg, total)):
        state.history[key].append(float(value))
    state.iteration += 1
    return state


def masked_view_indices(num_views: int, mask_fraction: float, rng_seed: int) -> list[int]:
    """The subset of views whose masks are available to training."""
    count = max(1, int(round(mask_fraction * num_views)))
    if count >= num_views:
        return list(range(num_views))
    rng = np.random.default_rng((rng_seed, 7919))
    return sorted(rng.choice(num_views, size=count, replace=False).tolist())


@dataclass
class TrainResult:
    scene: Scene
    projection: LinearProjection
    semantic_projection: LinearProjection
    history: dict[str, list[float]]
    masked_views: list[int]


def train(scene: Scene, cameras: list[Camera], instance_masks: list[LabelMap | None],
          semantic_masks: list[LabelMap | None], cfg: TrainConfig, progress=None) -> TrainResult:
    """Optimise embeddings over the views that have masks, one view per step.

    Views are visited in a seeded shuffle that is redrawn every epoch.
    ``progress`` (optional) is called as ``progress(iteration, state)``.
    """
    problems = cfg.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    if not cameras:
        raise ConfigError("at least one view is required")
    available = [i for i in range(len(cameras)) if instance_masks[i] is not None and semantic_masks[i] is not None]
    if not available:
        raise ConfigError("no view has a segmentation mask")
    chosen = masked_view_indices(len(available), cfg.mask_fraction, cfg.rng_seed)
    masked = [available[i] for i in chosen]

    state = init_state(scene, cfg)
    views = [prepare_view(scene, cameras[i], instance_masks[i], semantic_masks[i], cfg.mask_scale)
             for i in masked]
    order_rng = np.random.default_rng((cfg.rng_seed, 104729))
    order: list[int] = []
    for _ in range(cfg.iterations):
        if not order:
            order = order_rng.permutation(len(views)).tolist()
        train_step(state, views[order.pop(0)], cfg)
        if progress is not None:
            progress(state.iteration, state)
    return TrainResult(state.scene, state.projection, state.semantic_projection, state.history, masked)


# ---------------------------------------------------------------- toy experiment


@dataclass
class ToyResult:
    trajectory: np.ndarray  # (steps + 1, num_points, 2) sigmoid positions
    groups: np.ndarray  # (num_points,)
    group_means: np.ndarray  # (num_groups, 2)
    losses: np.ndarray  # (steps,)


TOY_INIT_MARGIN = 0.02


def toy_corner_experiment(num_points: int = 200, num_groups: int = 4, steps: int = 5000,
                          rng_seed: int = 0, learning_rate: float = 1e-2) -> ToyResult:
    """Free 2-d points squashed by a sigmoid, grouped, trained on the cluster loss alone."""
    if num_groups < 1 or num_groups > 4:
        raise ConfigError("num_groups must lie in [1, 4] for 2-d codes")
    if num_points < num_groups:
        raise ConfigError("need at least one point per group")
    rng = np.random.default_rng(rng_seed)
    # start uniformly spread over the square; the bounds keep the logits finite
    start = rng.uniform(TOY_INIT_MARGIN, 1.0 - TOY_INIT_MARGIN, (num_points, 2))
    raw = np.log(start / (1.0 - start))
    groups = np.arange(num_points) % num_groups
    segments = tuple(np.flatnonzero(groups == g) for g in range(num_groups))
    partition = Partition(segments=segments, boundary=tuple(np.zeros(0, np.int64) for _ in segments),
                          shape=(1, num_points), labels=tuple(range(1, num_groups + 1)))
    opt = Adam(learning_rate)
    traj = np.empty((steps + 1, num_points, 2))
    losses = np.empty(steps)
    traj[0] = sigmoid(raw)
    for t in range(steps):
        probs = traj[t]
        loss, grad_p = cluster_loss_probs(probs, partition)
        losses[t] = loss
        opt.step({"raw": raw}, {"raw": grad_p * probs * (1.0 - probs)})
        traj[t + 1] = sigmoid(raw)
    final = traj[-1]
    means = np.stack([final[s].mean(axis=0) for s in segments])
    return ToyResult(trajectory=traj, groups=groups, group_means=means, losses=losses)
