"""SORT-style tracking of per-frame bounding boxes and participant selection.

Tracks carry a constant-velocity Kalman filter on ``(u, v, s, r)``: box
centre, area and aspect ratio, with velocities for the first three.
Detections are associated to predicted boxes each frame by minimum-cost
assignment on negated IoU.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gaitscore.errors import NoParticipantError


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float
    score: float = 1.0

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2, self.score)
        if not all(np.isfinite(vals)):
            raise ValueError(f"box fields must be finite, got {vals}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"box needs x2 > x1 and y2 > y1, got {vals[:4]}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    return inter / (a.area + b.area - inter)


def hungarian_assign(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment of ``min(m, n)`` (row, col) pairs.

    Shortest augmenting path with row/column potentials, O(m^2 n) for
    ``m <= n``. A tall matrix is solved on its transpose. Pairs are returned
    sorted by row.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {c.shape}")
    if c.size == 0:
        return []
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix must be finite")
    transposed = c.shape[0] > c.shape[1]
    if transposed:
        c = c.T
    m, n = c.shape

    # 1-based potentials; column 0 is a virtual start column.
    u = np.zeros(m + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)  # owner[j] = row matched to column j (1-based), 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, m + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            reduced = c[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    pairs = [(int(owner[j]) - 1, j - 1) for j in range(1, n + 1) if owner[j]]
    if transposed:
        pairs = [(col, row) for row, col in pairs]
    return sorted(pairs)


# --- Kalman filter ----------------------------------------------------------

@dataclass(frozen=True)
class KalmanConfig:
    measurement_noise: tuple = (1.0, 1.0, 10.0, 10.0)
    process_noise: tuple = (1.0, 1.0, 1.0, 1.0, 1e-2, 1e-2, 1e-4)
    initial_position_var: float = 10.0
    initial_velocity_var: float = 1e4


_F = np.eye(7)
_F[0, 4] = _F[1, 5] = _F[2, 6] = 1.0
_H = np.eye(4, 7)


@dataclass(frozen=True)
class KalmanBoxState:
    x: np.ndarray  # (7,) u, v, s, r, du, dv, ds
    P: np.ndarray  # (7, 7)

    def to_box(self, score: float = 1.0) -> BoundingBox:
        u, v, s, r = self.x[:4]
        s, r = max(s, 1e-9), max(r, 1e-9)
        w = np.sqrt(s * r)
        h = s / w
        return BoundingBox(u - w / 2, v - h / 2, u + w / 2, v + h / 2, score)


def box_to_z(b: BoundingBox) -> np.ndarray:
    w, h = b.x2 - b.x1, b.y2 - b.y1
    return np.array([b.x1 + w / 2, b.y1 + h / 2, w * h, w / h])


def kalman_init(box: BoundingBox, cfg: KalmanConfig = KalmanConfig()) -> KalmanBoxState:
    x = np.zeros(7)
    x[:4] = box_to_z(box)
    P = np.diag([cfg.initial_position_var] * 4 + [cfg.initial_velocity_var] * 3)
    return KalmanBoxState(x, P)


def _symmetrize(P):
    P = 0.5 * (P + P.T)
    if np.linalg.eigvalsh(P).min() < -1e-9 * max(1.0, np.abs(P).max()):
        raise FloatingPointError("Kalman covariance lost positive semi-definiteness")
    return P


def kalman_predict(state: KalmanBoxState, cfg: KalmanConfig = KalmanConfig()) -> KalmanBoxState:
    x = state.x.copy()
    if x[2] + x[6] <= 0:
        x[6] = 0.0  # area must stay positive
    x = _F @ x
    P = _F @ state.P @ _F.T + np.diag(cfg.process_noise)
    return KalmanBoxState(x, _symmetrize(P))


def kalman_update(state: KalmanBoxState, measurement: BoundingBox,
                  cfg: KalmanConfig = KalmanConfig()) -> KalmanBoxState:
    R = np.diag(cfg.measurement_noise)
    innovation = box_to_z(measurement) - _H @ state.x
    S = _H @ state.P @ _H.T + R
    K = np.linalg.solve(S, _H @ state.P).T
    x = state.x + K @ innovation
    # Joseph form keeps P symmetric PSD under rounding
    A = np.eye(7) - K @ _H
    P = A @ state.P @ A.T + K @ R @ K.T
    return KalmanBoxState(x, _symmetrize(P))


# --- tracking ------------------------------------------------------------------

@dataclass(frozen=True)
class TrackerConfig:
    iou_min: float = 0.3
    max_age: int = 5
    min_hits: int = 3
    kalman: KalmanConfig = KalmanConfig()

    def __post_init__(self):
        if not 0 <= self.iou_min <= 1:
            raise ValueError("iou_min must be in [0, 1]")
        if self.max_age < 0:
            raise ValueError("max_age must be >= 0")
        if self.min_hits < 1:
            raise ValueError("min_hits must be >= 1")


@dataclass
class Track:
    id: int
    kalman: KalmanBoxState
    hits: int = 1
    age: int = 0
    time_since_update: int = 0
    history: list = field(default_factory=list)  # (frame_idx, BoundingBox) of matched detections


def track_frames(detections, cfg: TrackerConfig = TrackerConfig()) -> list[Track]:
    """Run the tracker over ``detections[frame]`` lists of boxes.

    Returns every track, alive or terminated, that reached ``min_hits``
    matched detections, ordered by id. Ids start at 1.
    """
    active: list[Track] = []
    finished: list[Track] = []
    next_id = 1
    for frame, dets in enumerate(detections):
        for tr in active:
            tr.kalman = kalman_predict(tr.kalman, cfg.kalman)
            tr.age += 1
            tr.time_since_update += 1

        matched_tracks, matched_dets = set(), set()
        if active and dets:
            predicted = [tr.kalman.to_box() for tr in active]
            overlap = np.array([[iou(p, d) for d in dets] for p in predicted])
            for ti, di in hungarian_assign(-overlap):
                if overlap[ti, di] < cfg.iou_min:
                    continue
                tr = active[ti]
                tr.kalman = kalman_update(tr.kalman, dets[di], cfg.kalman)
                tr.hits += 1
                tr.time_since_update = 0
                tr.history.append((frame, dets[di]))
                matched_tracks.add(ti)
                matched_dets.add(di)

        for di, det in enumerate(dets):
            if di not in matched_dets:
                active.append(Track(next_id, kalman_init(det, cfg.kalman), history=[(frame, det)]))
                next_id += 1

        alive = []
        for tr in active:
            (finished if tr.time_since_update > cfg.max_age else alive).append(tr)
        active = alive

    out = [tr for tr in finished + active if tr.hits >= cfg.min_hits]
    return sorted(out, key=lambda tr: tr.id)


def select_participant(tracks: list[Track], n_frames: int | None = None) -> Track:
    """The track with the most boxes; ties go to the smaller id.

    ``n_frames`` is accepted for reporting coverage and does not change the choice.
    """
    if not tracks:
        raise NoParticipantError("no tracks to select a participant from")
    return min(tracks, key=lambda tr: (-len(tr.history), tr.id))
