"""Text formats for pose sequences, detections and tracks, plus atomic writes.

Pose file (one exam per file)::

    # comment lines are ignored
    fps: 30
    n_joints: 24
    layout: hip_left=1, hip_right=2, neck=12
    subject_id: S001
    label: 2
    x0 y0 z0 x1 y1 z1 ...      <- one row per frame, n_joints triples

Rows may separate numbers with whitespace, commas or both. ``label`` is optional.

Detection file: ``frame_idx, x1, y1, x2, y2, score`` per line. Track file:
the same fields followed by ``track_id``.
"""

from __future__ import annotations

import math
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from gaitscore.errors import PoseFormatError
from gaitscore.pose import PoseSequence, SkeletonLayout

_SPLIT = re.compile(r"[,\s]+")
_HEADER_KEYS = ("fps", "n_joints", "layout", "subject_id", "label")


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file in the same directory and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _finite_floats(tokens, lineno):
    try:
        vals = [float(t) for t in tokens]
    except ValueError as exc:
        raise PoseFormatError(f"not a number: {exc}", lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise PoseFormatError("NaN/Inf values are not allowed", lineno)
    return vals


def _parse_layout(value: str, n_joints: int, lineno: int) -> SkeletonLayout:
    fields = {}
    for part in _SPLIT.split(value.strip()):
        if not part:
            continue
        key, sep, idx = part.partition("=")
        if not sep:
            raise PoseFormatError(f"layout entry {part!r} is not name=index", lineno)
        try:
            fields[key.strip()] = int(idx)
        except ValueError:
            raise PoseFormatError(f"layout index {idx!r} is not an integer", lineno) from None
    missing = {"hip_left", "hip_right", "neck"} - fields.keys()
    if missing:
        raise PoseFormatError(f"layout is missing {sorted(missing)}", lineno)
    try:
        return SkeletonLayout(n_joints, fields["hip_left"], fields["hip_right"], fields["neck"])
    except ValueError as exc:
        raise PoseFormatError(str(exc), lineno) from None


def parse_pose_text(text: str) -> PoseSequence:
    header: dict[str, tuple[str, int]] = {}
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" in line:
            if rows:
                raise PoseFormatError("header field after data rows", lineno)
            key, _, value = line.partition(":")
            key = key.strip()
            if key not in _HEADER_KEYS:
                raise PoseFormatError(f"unknown header field {key!r}", lineno)
            header[key] = (value.strip(), lineno)
            continue
        rows.append((_finite_floats(_SPLIT.split(line.strip(",").strip()), lineno), lineno))

    for key in ("fps", "n_joints", "layout", "subject_id"):
        if key not in header:
            raise PoseFormatError(f"missing header field {key!r}")
    try:
        fps = float(header["fps"][0])
        n_joints = int(header["n_joints"][0])
    except ValueError as exc:
        raise PoseFormatError(f"bad numeric header: {exc}") from None
    if not (math.isfinite(fps) and fps > 0):
        raise PoseFormatError("fps must be a positive finite number", header["fps"][1])
    if n_joints < 2:
        raise PoseFormatError("n_joints must be >= 2", header["n_joints"][1])
    layout = _parse_layout(header["layout"][0], n_joints, header["layout"][1])
    label = None
    if "label" in header:
        value, lineno = header["label"]
        try:
            label = int(value)
        except ValueError:
            raise PoseFormatError(f"label {value!r} is not an integer", lineno) from None
        if label not in range(4):
            raise PoseFormatError(f"label must be in 0..3, got {label}", lineno)
    if not rows:
        raise PoseFormatError("no frames")
    for vals, lineno in rows:
        if len(vals) != 3 * n_joints:
            raise PoseFormatError(f"expected {3 * n_joints} values, got {len(vals)}", lineno)
    frames = np.array([v for v, _ in rows]).reshape(len(rows), n_joints, 3)
    return PoseSequence(frames, fps, header["subject_id"][0], label, layout)


def read_pose(path) -> PoseSequence:
    return parse_pose_text(Path(path).read_text())


def format_pose(seq: PoseSequence, layout: SkeletonLayout | None = None) -> str:
    layout = layout or seq.layout
    if layout is None:
        raise ValueError("a skeleton layout is required to write a pose file")
    lines = [
        f"fps: {seq.fps!r}",
        f"n_joints: {seq.n_joints}",
        f"layout: hip_left={layout.hip_left_idx}, hip_right={layout.hip_right_idx}, neck={layout.neck_idx}",
        f"subject_id: {seq.subject_id}",
    ]
    if seq.label is not None:
        lines.append(f"label: {seq.label}")
    for frame in seq.frames:
        lines.append(" ".join(repr(float(v)) for v in frame.ravel()))
    return "\n".join(lines) + "\n"


def write_pose(path, seq: PoseSequence, layout: SkeletonLayout | None = None) -> None:
    atomic_write_text(path, format_pose(seq, layout))


def parse_detections(text: str):
    """Parse detection records into ``{frame_idx: [BoundingBox, ...]}`` and the frame count.

    Frames without records are simply absent from the mapping.
    """
    from gaitscore.tracker import BoundingBox

    per_frame: dict[int, list] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 6:
            raise PoseFormatError(f"expected 6 comma-separated fields, got {len(parts)}", lineno)
        try:
            frame = int(parts[0])
        except ValueError:
            raise PoseFormatError(f"frame index {parts[0]!r} is not an integer", lineno) from None
        if frame < 0:
            raise PoseFormatError("frame index must be >= 0", lineno)
        x1, y1, x2, y2, score = _finite_floats(parts[1:], lineno)
        try:
            box = BoundingBox(x1, y1, x2, y2, score)
        except ValueError as exc:
            raise PoseFormatError(str(exc), lineno) from None
        per_frame.setdefault(frame, []).append(box)
    n_frames = max(per_frame) + 1 if per_frame else 0
    return per_frame, n_frames


def read_detections(path):
    per_frame, n_frames = parse_detections(Path(path).read_text())
    return [per_frame.get(i, []) for i in range(n_frames)]


def format_tracks(tracks) -> str:
    lines = []
    for tr in tracks:
        for frame, b in tr.history:
            lines.append(f"{frame},{b.x1!r},{b.y1!r},{b.x2!r},{b.y2!r},{b.score!r},{tr.id}")
    return "\n".join(lines) + ("\n" if lines else "")
