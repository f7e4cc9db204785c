"""Single-stage label lifting for Gaussian splat scenes.

Per-primitive embeddings are rendered through a frozen splat rasteriser,
trained against per-view instance masks whose ids need not agree across
views, and decoded straight to integer labels by thresholding each
sigmoid channel into one bit of a binary code.
"""

from .codec import DecodeConfig, collision_report, decode_map
from .core import BACKGROUND, Camera, EmbeddingMap, LabelMap, MaskKind, Partition, Scene, partition_from_mask
from .losses import cluster_loss, mine_triplets, regularization_3d, triplet_loss
from .metrics import miou, pq_scene
from .optim import ConfigError, NumericalError, TrainConfig, toy_corner_experiment, train, train_step
from .raster import Channel, blend_weights, project, render
from .synth import SynthSpec, generate, make_inconsistent

__all__ = [
    "BACKGROUND", "Camera", "Channel", "ConfigError", "DecodeConfig", "EmbeddingMap", "LabelMap", "MaskKind",
    "NumericalError", "Partition", "Scene", "SynthSpec", "TrainConfig", "blend_weights", "cluster_loss",
    "collision_report", "decode_map", "generate", "make_inconsistent", "mine_triplets", "miou",
    "partition_from_mask", "pq_scene", "project", "regularization_3d", "render", "toy_corner_experiment",
    "train", "train_step", "triplet_loss",
]
