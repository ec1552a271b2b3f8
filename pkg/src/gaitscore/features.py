"""Network inputs: joint collection distances and two-scale motion.

Joint collection distances (JCD) are the per-frame pairwise joint distances,
upper triangle only, pairs ordered ``(0,1), (0,2), ..., (0,n-1), (1,2), ...``.
Motion is frame differencing at stride 1 (slow, every frame) and stride 2
(fast, taken at every other frame starting from the first).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gaitscore.errors import SequenceTooShortError


def _frames(clip) -> np.ndarray:
    x = clip.frames if hasattr(clip, "frames") else clip
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"expected frames of shape (K, n_joints, 3), got {x.shape}")
    return x


def pair_indices(n_joints: int):
    return np.triu_indices(n_joints, k=1)


def jcd(clip) -> np.ndarray:
    """``(K, n*(n-1)/2)`` matrix of pairwise joint distances per frame."""
    x = _frames(clip)
    i, j = pair_indices(x.shape[1])
    # norm() can hand back a pair-major layout; batches expect time-major memory
    return np.ascontiguousarray(np.linalg.norm(x[:, i] - x[:, j], axis=-1))


def motion(clip) -> tuple[np.ndarray, np.ndarray]:
    """Slow and fast motion, shapes ``(K-1, n, 3)`` and ``((K-1)//2, n, 3)``.

    With 1-based frames ``S_1..S_K``: ``slow[k] = S_{k+1} - S_k`` for
    ``k = 1..K-1`` and ``fast[k] = S_{k+2} - S_k`` for odd ``k <= K-2``.
    """
    x = _frames(clip)
    k = x.shape[0]
    if k < 3:
        raise SequenceTooShortError(f"motion features need K >= 3 frames, got {k}")
    slow = x[1:] - x[:-1]
    n_fast = (k - 1) // 2
    starts = np.arange(0, 2 * n_fast, 2)
    fast = x[starts + 2] - x[starts]
    return slow, fast


@dataclass(frozen=True)
class FeatureTensor:
    """Network input for one clip, time-major: ``(T, channels)`` per branch."""

    jcd: np.ndarray
    slow: np.ndarray
    fast: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.jcd.shape[0]


def clip_features(clip) -> FeatureTensor:
    slow, fast = motion(clip)
    return FeatureTensor(
        jcd=jcd(clip),
        slow=slow.reshape(slow.shape[0], -1),
        fast=fast.reshape(fast.shape[0], -1),
    )


def stack_features(features) -> FeatureTensor:
    """Batch single-clip tensors into ``(N, T, channels)`` arrays."""
    features = list(features)
    if not features:
        raise ValueError("no features to stack")
    return FeatureTensor(
        jcd=np.stack([f.jcd for f in features]),
        slow=np.stack([f.slow for f in features]),
        fast=np.stack([f.fast for f in features]),
    )
