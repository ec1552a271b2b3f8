"""Pose sequences: data model, normalization, clipping, crops, synthetic gait.

Joint coordinates are stored as float64 arrays of shape ``(K, n_joints, 3)``;
a frame is one ``(n_joints, 3)`` slice and a joint one ``(3,)`` row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gaitscore.errors import DegenerateInputError, SequenceTooShortError
from gaitscore.rng import make_rng

N_CLASSES = 4


@dataclass(frozen=True)
class SkeletonLayout:
    n_joints: int
    hip_left_idx: int
    hip_right_idx: int
    neck_idx: int

    def __post_init__(self):
        idx = (self.hip_left_idx, self.hip_right_idx, self.neck_idx)
        if self.n_joints < 2:
            raise ValueError(f"n_joints must be >= 2, got {self.n_joints}")
        if len(set(idx)) != 3:
            raise ValueError(f"layout indices must be distinct, got {idx}")
        if any(i < 0 or i >= self.n_joints for i in idx):
            raise ValueError(f"layout indices {idx} out of range for {self.n_joints} joints")


# SMPL 24-joint ordering: 1/2 = left/right hip, 12 = neck.
SMPL_JOINTS = (
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle",
    "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand", "r_hand",
)
DEFAULT_LAYOUT = SkeletonLayout(n_joints=24, hip_left_idx=1, hip_right_idx=2, neck_idx=12)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _check_label(label):
    if label is not None and label not in range(N_CLASSES):
        raise ValueError(f"label must be in 0..{N_CLASSES - 1}, got {label}")


@dataclass(frozen=True)
class PoseSequence:
    frames: np.ndarray
    fps: float
    subject_id: str
    label: int | None = None
    layout: SkeletonLayout | None = None

    def __post_init__(self):
        frames = _frozen(self.frames)
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise ValueError(f"frames must have shape (K, n_joints, 3), got {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 2:
            raise ValueError(f"need K >= 1 frames and >= 2 joints, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("joint coordinates must be finite")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        _check_label(self.label)
        if self.layout is not None and self.layout.n_joints != frames.shape[1]:
            raise ValueError("layout n_joints does not match frame joint count")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_joints(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class Clip:
    """Fixed-length window of an exam. ``start`` is the offset in the parent
    sequence; ``kind`` is ``"clip"`` or ``"crop"``."""

    frames: np.ndarray
    subject_id: str
    label: int | None = None
    start: int = 0
    kind: str = field(default="clip")

    def __post_init__(self):
        object.__setattr__(self, "frames", _frozen(self.frames))
        _check_label(self.label)

    @property
    def window(self) -> int:
        return self.frames.shape[0]


def _check_layout(layout: SkeletonLayout, n_joints: int):
    if layout.n_joints != n_joints:
        raise ValueError(f"layout declares {layout.n_joints} joints, sequence has {n_joints}")


def normalize_center(seq: PoseSequence, layout: SkeletonLayout) -> PoseSequence:
    """Put the mid-hip at the origin of every frame and rescale to unit mean torso length.

    Torso length is the mid-hip to neck distance, averaged over frames.

    Raises
    ------
    DegenerateInputError
        If the mean torso length is zero.
    """
    _check_layout(layout, seq.n_joints)
    x = seq.frames
    mid_hip = 0.5 * (x[:, layout.hip_left_idx] + x[:, layout.hip_right_idx])
    centered = x - mid_hip[:, None, :]
    torso = np.linalg.norm(centered[:, layout.neck_idx], axis=1).mean()
    if not torso > 1e-12:
        raise DegenerateInputError(f"mean torso length is {torso:g}; cannot normalize")
    return PoseSequence(centered / torso, seq.fps, seq.subject_id, seq.label, seq.layout)


def _pad_last(frames: np.ndarray, length: int) -> np.ndarray:
    if frames.shape[0] >= length:
        return frames[:length]
    pad = np.repeat(frames[-1:], length - frames.shape[0], axis=0)
    return np.concatenate([frames, pad], axis=0)


def clip_sequence(seq: PoseSequence, window: int = 200, min_tail: int = 100) -> list[Clip]:
    """Cut ``seq`` into ``window``-frame clips.

    Clips tile the sequence from frame 0 at stride ``window``. A leftover
    tail gets one more clip aligned to the last frame, overlapping its
    neighbour. Sequences shorter than ``window`` give one clip padded by
    repeating the last frame; sequences shorter than ``min_tail`` are refused.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    k = seq.n_frames
    if k < min_tail:
        raise SequenceTooShortError(f"sequence has {k} frames, need at least {min_tail}")
    if k < window:
        return [Clip(_pad_last(seq.frames, window), seq.subject_id, seq.label, 0)]
    starts = list(range(0, k - window + 1, window))
    if starts[-1] + window < k:
        starts.append(k - window)
    return [Clip(seq.frames[s:s + window], seq.subject_id, seq.label, s) for s in starts]


def augment_crops(clip: Clip, n_crops: int, crop_fraction: float = 0.8, seed: int = 0) -> list[Clip]:
    """Temporal crops of ``clip`` at seeded random offsets, re-padded to full length."""
    if not 0 < crop_fraction <= 1:
        raise ValueError(f"crop_fraction must be in (0, 1], got {crop_fraction}")
    if n_crops < 0:
        raise ValueError(f"n_crops must be >= 0, got {n_crops}")
    w = clip.window
    length = max(1, int(round(w * crop_fraction)))
    offsets = make_rng(seed, "crop").integers(0, w - length + 1, size=n_crops)
    return [
        Clip(_pad_last(clip.frames[o:o + length], w), clip.subject_id, clip.label,
             clip.start + int(o), "crop")
        for o in offsets
    ]


def exam_clips(
    seq: PoseSequence,
    layout: SkeletonLayout,
    window: int = 200,
    min_tail: int = 100,
    n_crops: int = 0,
    crop_fraction: float = 0.8,
    seed: int = 0,
) -> list[Clip]:
    """Normalize an exam, clip it, and append ``n_crops`` crops.

    Crops are taken round-robin from the exam's clips, each with its own
    seeded stream, so the exam's clip and crop set is reproducible.
    """
    clips = clip_sequence(normalize_center(seq, layout), window, min_tail)
    crops = []
    for i in range(n_crops):
        src = clips[i % len(clips)]
        crop_seed = int(make_rng(seed, "exam-crop", seq.subject_id, i).integers(2**31))
        crops.extend(augment_crops(src, 1, crop_fraction, crop_seed))
    return clips + crops


# --- synthetic gait -------------------------------------------------------

# Per-class kinematic schedule; arm swing and stride shrink from class 0 to 2,
# class 3 adds a stoop and lateral sway.
ARM_SWING = (0.55, 0.36, 0.18, 0.06)      # shoulder swing amplitude, rad
STRIDE = (0.45, 0.32, 0.20, 0.14)         # hip flexion amplitude, rad
FOOT_LIFT = (0.70, 0.50, 0.32, 0.20)      # peak knee flexion, rad
CADENCE = (0.95, 0.88, 0.80, 0.70)        # gait cycles per second
TORSO_PITCH = (0.04, 0.08, 0.14, 0.45)    # forward lean, rad
SWAY = (0.0, 0.0, 0.0, 0.10)              # lateral roll noise scale, rad

_THIGH, _SHANK, _UPPER_ARM, _FOREARM, _HAND = 0.42, 0.42, 0.28, 0.25, 0.08
_PELVIS_HEIGHT = 0.95


def _rot_x(theta):
    """Pitch about the lateral (x) axis, broadcasting over ``theta``; +theta leans toward +z."""
    c, s = np.cos(theta), np.sin(theta)
    z, o = np.zeros_like(theta), np.ones_like(theta)
    return np.stack([
        np.stack([o, z, z], -1),
        np.stack([z, c, -s], -1),
        np.stack([z, s, c], -1),
    ], -2)


def _rot_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    z, o = np.zeros_like(theta), np.ones_like(theta)
    return np.stack([
        np.stack([c, -s, z], -1),
        np.stack([s, c, z], -1),
        np.stack([z, z, o], -1),
    ], -2)


def _limb(angle):
    """Unit vector hanging down (-y) swung forward (+z) by ``angle``."""
    return np.stack([np.zeros_like(angle), -np.cos(angle), np.sin(angle)], -1)


def _smooth_noise(rng, n, fps, cutoff_hz=0.7):
    raw = rng.standard_normal(n + 2 * int(fps))
    width = max(1, int(fps / cutoff_hz / 2))
    kernel = np.hanning(2 * width + 1)
    kernel /= np.linalg.norm(kernel)
    return np.convolve(raw, kernel, mode="same")[int(fps):int(fps) + n]


def synth_gait(
    class_label: int,
    layout: SkeletonLayout = DEFAULT_LAYOUT,
    duration_frames: int = 300,
    seed: int = 0,
    fps: float = 30.0,
    subject_id: str | None = None,
    noise: float = 0.005,
) -> PoseSequence:
    """Deterministic walking skeleton for a gait severity class.

    Sinusoidal leg and arm kinematics on the SMPL 24-joint skeleton, walking
    along +z. The per-subject jitter (amplitudes, cadence, phase) and the
    joint noise depend only on ``seed``, so two classes generated with the
    same seed differ only through the class schedule.
    """
    _check_label(class_label)
    if class_label is None:
        raise ValueError("class_label is required")
    if duration_frames < 1:
        raise ValueError(f"duration_frames must be >= 1, got {duration_frames}")
    if layout != DEFAULT_LAYOUT:
        raise ValueError("synth_gait generates the default 24-joint layout only")
    c = class_label
    rng = make_rng(seed, "synth-subject")
    amp_jitter = 1.0 + 0.04 * rng.uniform(-1, 1, size=4)
    cadence = CADENCE[c] * (1.0 + 0.04 * rng.uniform(-1, 1))
    phase0 = rng.uniform(0, 2 * np.pi)
    height = 1.0 + 0.05 * rng.uniform(-1, 1)

    arm, stride, lift = ARM_SWING[c] * amp_jitter[0], STRIDE[c] * amp_jitter[1], FOOT_LIFT[c] * amp_jitter[2]
    t = np.arange(duration_frames) / fps
    phi = 2 * np.pi * cadence * t + phase0
    n = duration_frames
    x = np.zeros((n, 24, 3))

    step_len = 2 * _THIGH * np.sin(stride)
    pelvis = np.stack([
        np.zeros(n),
        np.full(n, _PELVIS_HEIGHT) + 0.4 * step_len * 0.1 * np.cos(2 * phi),
        2 * step_len * cadence * t,
    ], -1)

    sway_rng = make_rng(seed, "synth-sway")
    roll = SWAY[c] * _smooth_noise(sway_rng, n, fps)
    pitch = np.full(n, TORSO_PITCH[c] * amp_jitter[3])
    upper = _rot_z(roll) @ _rot_x(pitch)  # (n, 3, 3)

    def body(offset):
        return pelvis + height * np.einsum("nij,j->ni", upper, np.asarray(offset, dtype=float))

    x[:, 0] = pelvis
    x[:, 3] = body([0, 0.10, 0])
    x[:, 6] = body([0, 0.25, 0])
    x[:, 9] = body([0, 0.40, 0])
    x[:, 12] = body([0, 0.55, 0])
    x[:, 15] = body([0, 0.72, 0])
    x[:, 13] = body([0.07, 0.50, 0])
    x[:, 14] = body([-0.07, 0.50, 0])
    x[:, 16] = body([0.18, 0.48, 0])
    x[:, 17] = body([-0.18, 0.48, 0])

    for side, (hip, knee, ankle, foot, sign) in enumerate(((1, 4, 7, 10, 1.0), (2, 5, 8, 11, -1.0))):
        leg_phase = phi + np.pi * side
        x[:, hip] = pelvis + height * np.array([0.09 * sign, -0.05, 0.0])
        hip_angle = stride * np.sin(leg_phase)
        knee_flex = lift * np.clip(np.sin(leg_phase + 0.6 * np.pi), 0, None) ** 2
        x[:, knee] = x[:, hip] + height * _THIGH * _limb(hip_angle)
        x[:, ankle] = x[:, knee] + height * _SHANK * _limb(hip_angle - knee_flex)
        x[:, foot] = x[:, ankle] + height * np.array([0.0, -0.05, 0.14])

    for side, (shoulder, elbow, wrist, hand) in enumerate(((16, 18, 20, 22), (17, 19, 21, 23))):
        # arms swing against the ipsilateral leg
        swing = arm * np.sin(phi + np.pi * (1 - side)) + pitch
        bend = 0.25 + 0.6 * arm * (1 + np.sin(phi + np.pi * (1 - side)))
        x[:, elbow] = x[:, shoulder] + height * _UPPER_ARM * _limb(swing)
        x[:, wrist] = x[:, elbow] + height * _FOREARM * _limb(swing + bend)
        x[:, hand] = x[:, wrist] + height * _HAND * _limb(swing + bend)

    x += noise * make_rng(seed, "synth-noise").standard_normal(x.shape)
    sid = subject_id if subject_id is not None else f"synth-c{c}-s{seed}"
    return PoseSequence(x, fps, sid, c, layout)


def torso_pitch(seq: PoseSequence, layout: SkeletonLayout) -> np.ndarray:
    """Per-frame forward lean (rad) of the mid-hip to neck vector, +z forward."""
    x = seq.frames
    v = x[:, layout.neck_idx] - 0.5 * (x[:, layout.hip_left_idx] + x[:, layout.hip_right_idx])
    return np.arctan2(v[:, 2], v[:, 1])
