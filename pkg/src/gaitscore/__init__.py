"""Gait severity scoring (MDS-UPDRS 3.10, classes 0-3) from 3D skeleton sequences."""

from gaitscore.features import jcd, motion, clip_features
from gaitscore.losses import LossConfig, focal, ordinal, hybrid, hybrid_logits
from gaitscore.pose import (
    Clip,
    PoseSequence,
    SkeletonLayout,
    DEFAULT_LAYOUT,
    augment_crops,
    clip_sequence,
    normalize_center,
    synth_gait,
)

__version__ = "0.1.0"

__all__ = [
    "Clip",
    "PoseSequence",
    "SkeletonLayout",
    "DEFAULT_LAYOUT",
    "augment_crops",
    "clip_sequence",
    "normalize_center",
    "synth_gait",
    "jcd",
    "motion",
    "clip_features",
    "LossConfig",
    "focal",
    "ordinal",
    "hybrid",
    "hybrid_logits",
]
