"""Command-line entry points.

Every subcommand is also callable as a ``cmd_*`` function taking a
:class:`RunConfig`, which is how the tests and demos drive it. Settings come
from built-in defaults, then a JSON config file (``--config``), then flags,
later sources winning. ``GAITSCORE_LOG`` sets the log level (a name such as
``INFO`` or a number).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from gaitscore.errors import CheckpointError, GaitScoreError, PoseFormatError
from gaitscore.evaluation import LoocvConfig, compare_methods, exam_dataset, loocv, metrics, score_exam
from gaitscore.fileio import (
    atomic_write_bytes,
    atomic_write_text,
    format_tracks,
    parse_detections,
    read_pose,
    write_pose,
)
from gaitscore.losses import LOSS_MODES
from gaitscore.nn import (
    ModelSpec,
    TrainConfig,
    dumps_checkpoint,
    gradient_check,
    loads_checkpoint,
    train,
)
from gaitscore.pose import DEFAULT_LAYOUT, N_CLASSES, synth_gait
from gaitscore.rng import make_rng
from gaitscore.tracker import TrackerConfig, select_participant, track_frames

log = logging.getLogger("gaitscore")

POSE_SUFFIX = ".pose"
GRADCHECK_TOL = 1e-4


@dataclass
class RunConfig:
    """Flat union of every setting a subcommand may read.

    Key names double as JSON config keys; ``lambda`` in a config file maps to
    ``lam``.
    """

    inputs: list = field(default_factory=list)
    out: str | None = None
    checkpoint: str | None = None
    seed: int | None = None
    # clipping and augmentation
    window: int = 200
    min_tail: int = 100
    n_crops: int = 2
    crop_fraction: float = 0.8
    sparse_classes: tuple = (2, 3)
    # network and training
    filters: int = 32
    epochs: int = 600
    batch: int = 64
    lr_start: float = 1e-3
    lr_end: float = 1e-6
    loss: str = "focal+ordinal"
    lam: float = 1.0
    alpha: float = 0.25
    gamma: float = 2.0
    workers: int = 1
    # tracking
    iou_min: float = 0.3
    max_age: int = 5
    min_hits: int = 3
    # synth
    n_per_class: int = 10
    frames: int = 300
    # evaluate
    compare: str | None = None
    pair_unit: str = "true_prob"

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch, self.lr_start, self.lr_end, self.seed or 0,
                           self.loss, self.lam, self.alpha, self.gamma)

    def loocv_config(self) -> LoocvConfig:
        return LoocvConfig(self.train_config(), self.filters, self.window, self.min_tail,
                           self.n_crops, self.crop_fraction, tuple(self.sparse_classes),
                           DEFAULT_LAYOUT, self.seed or 0, self.workers)

    def tracker_config(self) -> TrackerConfig:
        return TrackerConfig(self.iou_min, self.max_age, self.min_hits)


_FIELDS = {f.name for f in fields(RunConfig)}


class CliError(GaitScoreError):
    pass


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    out = {}
    for key, value in raw.items():
        name = {"lambda": "lam", "batch_size": "batch"}.get(key, key)
        if name not in _FIELDS:
            raise CliError(f"config file {path}: unknown key {key!r}")
        out[name] = value
    return out


def resolve_config(flags: dict, config_path=None) -> RunConfig:
    """Defaults < config file < flags. ``None`` flag values count as unset."""
    merged = load_config(config_path) if config_path else {}
    merged.update({k: v for k, v in flags.items() if v is not None})
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise CliError(str(exc)) from None


def _require_seed(cfg: RunConfig, command: str):
    if cfg.seed is None:
        raise CliError(f"{command} needs a seed (--seed or 'seed' in the config file)")


def _expand_inputs(paths) -> list[Path]:
    """Files are taken as given; directories contribute their ``*.pose`` files in name order."""
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob(f"*{POSE_SUFFIX}")))
        elif p.is_file():
            out.append(p)
        else:
            raise CliError(f"input {p} does not exist")
    if not out:
        raise CliError("no pose files given")
    return out


def _read_exams(paths, need_label: bool):
    exams = []
    for p in _expand_inputs(paths):
        try:
            seq = read_pose(p)
        except PoseFormatError as exc:
            raise CliError(f"{p}: {exc}") from None
        if need_label and seq.label is None:
            raise CliError(f"{p}: missing label")
        exams.append(seq)
    return exams


# --- commands ---------------------------------------------------------------------

def cmd_track(cfg: RunConfig):
    """Track a detection file; returns ``(tracks, participant)``."""
    if len(cfg.inputs) != 1:
        raise CliError("track takes exactly one detection file")
    path = Path(cfg.inputs[0])
    if not path.is_file():
        raise CliError(f"input {path} does not exist")
    try:
        per_frame, n_frames = parse_detections(path.read_text())
    except PoseFormatError as exc:
        raise CliError(f"{path}: {exc}") from None
    if n_frames == 0:
        raise CliError(f"{path}: no detections")
    tracks = track_frames([per_frame.get(i, []) for i in range(n_frames)], cfg.tracker_config())
    participant = select_participant(tracks, n_frames)
    if cfg.out:
        atomic_write_text(cfg.out, format_tracks(tracks))
    log.info("%d confirmed tracks; participant %d", len(tracks), participant.id)
    return tracks, participant


def cmd_train(cfg: RunConfig) -> bytes:
    """Train on every given exam and write a checkpoint; returns the checkpoint bytes."""
    _require_seed(cfg, "train")
    exams = _read_exams(cfg.inputs, need_label=True)
    n_joints = {e.n_joints for e in exams}
    if n_joints != {DEFAULT_LAYOUT.n_joints}:
        raise CliError(f"expected {DEFAULT_LAYOUT.n_joints}-joint exams, got {sorted(n_joints)}")
    x, y, _ = exam_dataset(exams, cfg.loocv_config())
    spec = ModelSpec(DEFAULT_LAYOUT.n_joints, cfg.filters, cfg.window)
    result = train(x, y, cfg.train_config(), spec)
    for epoch, loss in enumerate(result.loss_history):
        log.info("epoch %d loss %.6f", epoch, loss)
    extra = {"min_tail": cfg.min_tail, "loss_history": result.loss_history,
             "train_config": asdict(cfg.train_config()), "n_clips": int(y.size)}
    data = dumps_checkpoint(result.model, result.adam, extra)
    if cfg.out:
        atomic_write_bytes(cfg.out, data)
    return data


def cmd_evaluate(cfg: RunConfig) -> dict:
    """LOOCV over the given exams; writes report.txt/json, confusion.csv and folds.json to ``out``."""
    _require_seed(cfg, "evaluate")
    exams = _read_exams(cfg.inputs, need_label=True)
    lc = cfg.loocv_config()
    folds = loocv(exams, lc)
    report = metrics(folds)
    outputs = {
        "report.txt": report.to_text(),
        "report.json": report.to_json(),
        "confusion.csv": report.confusion_csv(),
        "folds.json": json.dumps([f.to_dict() for f in folds], indent=1),
    }
    result = {"report": report, "folds": folds}
    if cfg.compare:
        other = loocv(exams, replace(lc, train=replace(lc.train, loss_mode=cfg.compare)))
        test = compare_methods(folds, other, unit=cfg.pair_unit)
        outputs["wilcoxon.json"] = json.dumps({
            "method_a": cfg.loss, "method_b": cfg.compare, "unit": cfg.pair_unit,
            "statistic": test.statistic, "p_value": test.p_value, "n": test.n, "method": test.method,
            "macro_f1_a": report.macro["f1"], "macro_f1_b": metrics(other).macro["f1"],
        }, indent=1, sort_keys=True)
        result["wilcoxon"] = test
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in outputs.items():
            atomic_write_text(out / name, text)
    return result


def cmd_score(cfg: RunConfig, explicit: set = frozenset()) -> dict:
    """Score one exam with a checkpoint.

    ``explicit`` names the settings the user set by flag or config; if any of
    ``window``/``filters`` disagree with the checkpoint the spec hash check fails.
    """
    if len(cfg.inputs) != 1:
        raise CliError("score takes exactly one pose file")
    if not cfg.checkpoint:
        raise CliError("score needs --checkpoint")
    try:
        data = Path(cfg.checkpoint).read_bytes()
    except FileNotFoundError:
        raise CliError(f"checkpoint {cfg.checkpoint} does not exist") from None
    (seq,) = _read_exams(cfg.inputs, need_label=False)
    model, _, extra = loads_checkpoint(data)
    spec = model.spec
    expect = ModelSpec(seq.n_joints,
                       cfg.filters if "filters" in explicit else spec.filters,
                       cfg.window if "window" in explicit else spec.window,
                       spec.n_classes, spec.slope)
    if expect.hash() != spec.hash():
        raise CheckpointError(f"checkpoint spec hash {spec.hash()[:12]} does not match "
                              f"requested {expect.hash()[:12]} ({expect})")
    min_tail = cfg.min_tail if "min_tail" in explicit else extra.get("min_tail", cfg.min_tail)
    lc = replace(cfg.loocv_config(), window=spec.window, min_tail=min_tail)
    label, exam_probs, clip_probs = score_exam(model, seq, lc)
    result = {"subject_id": seq.subject_id, "label": label,
              "probabilities": [float(p) for p in exam_probs], "n_clips": len(clip_probs)}
    if cfg.out:
        atomic_write_text(cfg.out, json.dumps(result, indent=1) + "\n")
    return result


def cmd_synth(cfg: RunConfig) -> list[Path]:
    """Write ``n_per_class`` synthetic exams per class into the ``out`` directory."""
    if not cfg.out:
        raise CliError("synth needs --out DIR")
    seed = cfg.seed or 0
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for c in range(N_CLASSES):
        for i in range(cfg.n_per_class):
            sid = f"c{c}-s{i:03d}"
            exam_seed = int(make_rng(seed, "synth", c, i).integers(2**31))
            seq = synth_gait(c, duration_frames=cfg.frames, seed=exam_seed, subject_id=sid)
            path = out / f"{sid}{POSE_SUFFIX}"
            write_pose(path, seq)
            written.append(path)
    return written


def cmd_gradcheck(cfg: RunConfig) -> dict:
    """Finite-difference check of the tiny model under the configured loss."""
    train_cfg = cfg.train_config()
    spec = ModelSpec(n_joints=6, filters=4, window=16)
    return gradient_check(spec, seed=cfg.seed or 0, loss_cfg=train_cfg.loss_config())


# --- argument parsing -----------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="JSON file of settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="PATH")


def _add_model(p: argparse.ArgumentParser):
    p.add_argument("--window", type=int)
    p.add_argument("--filters", type=int)
    p.add_argument("--min-tail", dest="min_tail", type=int)


def _add_training(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--loss", choices=LOSS_MODES)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaitscore", description="Gait severity scoring from 3D skeletons.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="track a detection file and pick the participant")
    p.add_argument("inputs", nargs=1, metavar="DETECTIONS")
    _add_common(p)

    p = sub.add_parser("train", help="train a model on labelled pose files")
    p.add_argument("inputs", nargs="+", metavar="POSE")
    _add_common(p)
    _add_model(p)
    _add_training(p)

    p = sub.add_parser("evaluate", help="leave-one-out evaluation")
    p.add_argument("inputs", nargs="+", metavar="POSE")
    _add_common(p)
    _add_model(p)
    _add_training(p)
    p.add_argument("--workers", type=int)
    p.add_argument("--compare", choices=LOSS_MODES, help="second loss mode for a paired Wilcoxon test")
    p.add_argument("--pair-unit", dest="pair_unit", choices=("true_prob", "correct"))

    p = sub.add_parser("score", help="score one exam with a trained checkpoint")
    p.add_argument("inputs", nargs=1, metavar="POSE")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    _add_common(p)
    _add_model(p)

    p = sub.add_parser("synth", help="write a synthetic labelled dataset")
    _add_common(p)
    p.add_argument("--n-per-class", dest="n_per_class", type=int)
    p.add_argument("--frames", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _add_common(p)
    p.add_argument("--loss", choices=LOSS_MODES)
    p.add_argument("--lambda", dest="lam", type=float)
    return parser


def _setup_logging():
    level = os.environ.get("GAITSCORE_LOG", "WARNING").strip()
    level = int(level) if level.isdigit() else getattr(logging, level.upper(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    try:
        cfg = resolve_config(args, config_path)
        explicit = {k for k, v in args.items() if v is not None}
        if config_path:
            explicit |= set(load_config(config_path))
        if command == "track":
            tracks, participant = cmd_track(cfg)
            print(f"participant {participant.id} ({len(participant.history)} frames, {len(tracks)} tracks)")
        elif command == "train":
            data = cmd_train(cfg)
            print(f"wrote {cfg.out} ({len(data)} bytes)" if cfg.out else f"trained ({len(data)} bytes, not saved)")
        elif command == "evaluate":
            result = cmd_evaluate(cfg)
            print(result["report"].to_text())
            if "wilcoxon" in result:
                w = result["wilcoxon"]
                print(f"wilcoxon {cfg.loss} vs {cfg.compare}: W={w.statistic:g} p={w.p_value:.4g} n={w.n}")
        elif command == "score":
            result = cmd_score(cfg, explicit)
            probs = " ".join(f"{p:.4f}" for p in result["probabilities"])
            print(f"{result['subject_id']}: score {result['label']} probabilities {probs}")
        elif command == "synth":
            written = cmd_synth(cfg)
            print(f"wrote {len(written)} exams to {cfg.out}")
        elif command == "gradcheck":
            worst = cmd_gradcheck(cfg)
            for name, err in worst.items():
                print(f"{name:16s} {err:.3e}")
            ok = max(worst.values()) <= GRADCHECK_TOL
            print(f"gradcheck {'PASS' if ok else 'FAIL'} (max {max(worst.values()):.3e}, tol {GRADCHECK_TOL:g})")
            return 0 if ok else 1
    except (GaitScoreError, ValueError, LookupError, OSError) as exc:
        print(f"gaitscore {command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
