"""Leave-one-exam-out evaluation with sub-clip voting, metrics and Wilcoxon tests."""

from __future__ import annotations

import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np
from scipy.stats import rankdata

from gaitscore.features import clip_features, stack_features
from gaitscore.nn import ModelSpec, TrainConfig, predict_proba, train
from gaitscore.pose import DEFAULT_LAYOUT, N_CLASSES, SkeletonLayout, exam_clips
from gaitscore.rng import make_rng

log = logging.getLogger(__name__)


def vote(clip_probs) -> tuple[int, np.ndarray]:
    """Majority vote over clip argmaxes.

    Ties between equally voted classes go to the larger summed probability
    (then the smaller class index). Returns the label and the mean clip
    probability vector.
    """
    probs = np.atleast_2d(np.asarray(clip_probs, dtype=np.float64))
    if probs.shape[0] == 0 or probs.size == 0:
        raise ValueError("vote needs at least one clip")
    votes = np.bincount(np.argmax(probs, axis=1), minlength=probs.shape[1])
    tied = np.flatnonzero(votes == votes.max())
    summed = probs.sum(axis=0)
    label = int(tied[np.argmax(summed[tied])])
    return label, probs.mean(axis=0)


@dataclass(frozen=True)
class LoocvConfig:
    train: TrainConfig = TrainConfig()
    filters: int = 32
    window: int = 200
    min_tail: int = 100
    n_crops: int = 2
    crop_fraction: float = 0.8
    sparse_classes: tuple = (2, 3)
    layout: SkeletonLayout = DEFAULT_LAYOUT
    seed: int = 0
    workers: int = 1


@dataclass
class FoldResult:
    subject_id: str
    true_label: int
    predicted: int
    exam_probs: np.ndarray
    clip_probs: np.ndarray
    train_subjects: tuple = ()
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "true_label": self.true_label,
            "predicted": self.predicted,
            "exam_probs": [float(v) for v in self.exam_probs],
            "clip_probs": [[float(v) for v in row] for row in self.clip_probs],
            "warnings": list(self.warnings),
        }


def _prepare_exam(seq, cfg: LoocvConfig, index: int):
    if seq.label is None:
        raise ValueError(f"exam {seq.subject_id!r} has no label")
    n_crops = cfg.n_crops if seq.label in cfg.sparse_classes else 0
    crop_seed = int(make_rng(cfg.seed, "crops", index).integers(2**31))
    clips = exam_clips(seq, cfg.layout, cfg.window, cfg.min_tail, n_crops, cfg.crop_fraction, crop_seed)
    feats = stack_features([clip_features(c) for c in clips])
    is_crop = np.array([c.kind == "crop" for c in clips])
    return feats, is_crop


def exam_dataset(exams, cfg: LoocvConfig):
    """Clip features and labels for a list of labelled exams, crops included for sparse classes.

    Returns ``(features, labels, is_crop)`` concatenated over exams.
    """
    prepared = [_prepare_exam(e, cfg, i) for i, e in enumerate(exams)]
    labels = np.concatenate([np.full(p[0].jcd.shape[0], e.label) for p, e in zip(prepared, exams)])
    return _concat([p[0] for p in prepared]), labels, np.concatenate([p[1] for p in prepared])


def score_exam(model, seq, cfg: LoocvConfig):
    """Vote over the exam's clips (no crops); returns ``(label, exam_probs, clip_probs)``."""
    clips = exam_clips(seq, cfg.layout, cfg.window, cfg.min_tail)
    clip_probs = predict_proba(model, [clip_features(c) for c in clips])
    label, exam_probs = vote(clip_probs)
    return label, exam_probs, clip_probs


def _take(feats, mask):
    return type(feats)(feats.jcd[mask], feats.slow[mask], feats.fast[mask])


def _concat(parts):
    return type(parts[0])(*(np.concatenate([getattr(p, b) for p in parts]) for b in ("jcd", "slow", "fast")))


def _run_fold(args):
    fold, exams_meta, prepared, cfg = args
    held_sid, held_label = exams_meta[fold]
    train_idx = [i for i, (sid, _) in enumerate(exams_meta) if sid != held_sid]
    warnings = []
    present = {exams_meta[i][1] for i in train_idx}
    missing = sorted(set(range(N_CLASSES)) - present)
    if missing:
        msg = f"fold {fold} ({held_sid}): classes {missing} absent from training"
        log.warning(msg)
        warnings.append(msg)
    x = _concat([prepared[i][0] for i in train_idx])
    y = np.concatenate([np.full(prepared[i][0].jcd.shape[0], exams_meta[i][1]) for i in train_idx])
    fold_seed = int(make_rng(cfg.seed, "fold", fold).integers(2**31))
    spec = ModelSpec(cfg.layout.n_joints, cfg.filters, cfg.window)
    result = train(x, y, replace(cfg.train, seed=fold_seed), spec)
    feats, is_crop = prepared[fold]
    clip_probs = predict_proba(result.model, _take(feats, ~is_crop))
    label, exam_probs = vote(clip_probs)
    log.info("fold %d %s: true %d predicted %d", fold, held_sid, held_label, label)
    return FoldResult(held_sid, held_label, label, exam_probs, clip_probs,
                      tuple(sorted({exams_meta[i][0] for i in train_idx})), warnings)


def loocv(exams, cfg: LoocvConfig = LoocvConfig()) -> list[FoldResult]:
    """One fold per exam; every exam of the held-out subject stays out of training."""
    exams = list(exams)
    if len({e.subject_id for e in exams}) < 2:
        raise ValueError("leave-one-out needs at least two subjects")
    prepared = [_prepare_exam(e, cfg, i) for i, e in enumerate(exams)]
    meta = [(e.subject_id, e.label) for e in exams]
    jobs = [(i, meta, prepared, cfg) for i in range(len(exams))]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            return list(pool.map(_run_fold, jobs))
    return [_run_fold(j) for j in jobs]


# --- metrics ---------------------------------------------------------------

def rank_auc(pos_scores, neg_scores) -> float:
    """P(positive score > negative score), ties counted one half."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        return float("nan")
    ranks = rankdata(np.concatenate([pos, neg]))
    return float((ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2) / (pos.size * neg.size))


@dataclass
class EvalReport:
    confusion: np.ndarray  # rows true, columns predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    auc: np.ndarray
    macro: dict
    balanced_accuracy: float

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "confusion": self.confusion.tolist(),
            "per_class": {
                str(c): {
                    "f1": clean(float(self.f1[c])),
                    "auc": clean(float(self.auc[c])),
                    "precision": clean(float(self.precision[c])),
                    "recall": clean(float(self.recall[c])),
                }
                for c in range(len(self.f1))
            },
            "macro": {k: clean(float(v)) for k, v in self.macro.items()},
            "balanced_accuracy": float(self.balanced_accuracy),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        def fmt(v):
            return "  n/a" if math.isnan(v) else f"{v:5.2f}"

        out = io.StringIO()
        out.write(f"{'Gait Score':<15}{'F1':>7}{'AUC':>7}{'Pre':>7}{'Rec':>7}\n")
        for c in range(len(self.f1)):
            cells = (self.f1[c], self.auc[c], self.precision[c], self.recall[c])
            out.write(f"{c:<15}" + "".join(f"  {fmt(v)}" for v in cells) + "\n")
        m = self.macro
        out.write(f"{'Macro Average':<15}" + "".join(
            f"  {fmt(m[k])}" for k in ("f1", "auc", "precision", "recall")) + "\n")
        out.write(f"Balanced accuracy: {self.balanced_accuracy:.4f}\n")
        return out.getvalue()

    def confusion_csv(self) -> str:
        n = self.confusion.shape[0]
        lines = ["true\\pred," + ",".join(str(c) for c in range(n))]
        lines += [f"{r}," + ",".join(str(int(v)) for v in self.confusion[r]) for r in range(n)]
        return "\n".join(lines) + "\n"


def metrics(folds, n_classes: int = N_CLASSES) -> EvalReport:
    """Per-class and macro precision/recall/F1 and one-vs-rest AUC, pooled over folds.

    Zero divisions give 0 for precision, recall and F1. AUC is NaN for a
    class without positives or negatives and is left out of the macro mean.
    """
    folds = list(folds)
    y = np.array([f.true_label for f in folds], dtype=np.int64)
    yhat = np.array([f.predicted for f in folds], dtype=np.int64)
    probs = np.array([f.exam_probs for f in folds], dtype=np.float64).reshape(len(folds), n_classes)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y, yhat), 1)
    tp = np.diag(cm).astype(np.float64)
    pred_pos = cm.sum(axis=0)
    true_pos = cm.sum(axis=1)
    precision = np.divide(tp, pred_pos, out=np.zeros(n_classes), where=pred_pos > 0)
    recall = np.divide(tp, true_pos, out=np.zeros(n_classes), where=true_pos > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n_classes), where=denom > 0)
    auc = np.array([rank_auc(probs[y == c, c], probs[y != c, c]) for c in range(n_classes)])
    macro = {
        "f1": float(f1.mean()),
        "auc": float(np.nanmean(auc)) if np.any(~np.isnan(auc)) else float("nan"),
        "precision": float(precision.mean()),
        "recall": float(recall.mean()),
    }
    return EvalReport(cm, precision, recall, f1, auc, macro, float(recall.mean()))


# --- Wilcoxon signed-rank --------------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # min(W+, W-)
    p_value: float
    n: int  # non-zero differences
    method: str


def _signed_rank_setup(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and equal length")
    d = a - b
    d = d[d != 0]
    ranks = rankdata(np.abs(d))
    return d, ranks


def _exact_p(ranks, w_plus):
    """Two-sided exact p-value for W+ by counting sign patterns with dynamic programming."""
    doubled = np.rint(2 * ranks).astype(np.int64)  # average ranks are multiples of 1/2
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)  # exact: 2**25 < 2**53
    counts[0] = 1.0
    for r in doubled:
        counts[r:] = counts[r:] + counts[:-r]
    obs = int(round(2 * w_plus))
    n_patterns = 2.0 ** len(ranks)
    lower = counts[:obs + 1].sum() / n_patterns
    upper = counts[obs:].sum() / n_patterns
    return min(1.0, 2 * min(lower, upper))


def _normal_p(ranks, w_plus):
    n = len(ranks)
    mean = n * (n + 1) / 4
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - np.sum(tie_counts ** 3 - tie_counts) / 48
    if var <= 0:
        return 1.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2)))


def wilcoxon_signed_rank(a, b, method: str = "auto") -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired samples; zero differences dropped.

    ``method="auto"`` uses the exact null distribution for up to 25 non-zero
    differences and the tie-corrected normal approximation (with continuity
    correction) above that.
    """
    if method not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown method {method!r}")
    d, ranks = _signed_rank_setup(a, b)
    n = len(d)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate")
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks.sum()) - w_plus
    use_exact = method == "exact" or (method == "auto" and n <= 25)
    p = _exact_p(ranks, w_plus) if use_exact else _normal_p(ranks, w_plus)
    return WilcoxonResult(min(w_plus, w_minus), p, n, "exact" if use_exact else "approx")


def enumerate_signed_rank_p(a, b) -> float:
    """Brute-force two-sided p-value over all 2**n sign patterns (small n only)."""
    d, ranks = _signed_rank_setup(a, b)
    if len(d) == 0:
        return 1.0
    w_obs = ranks[d > 0].sum()
    stats = np.array([sum(r for r, s in zip(ranks, signs) if s) for signs in product((0, 1), repeat=len(d))])
    lower = np.sum(stats <= w_obs + 1e-9) / stats.size
    upper = np.sum(stats >= w_obs - 1e-9) / stats.size
    return float(min(1.0, 2 * min(lower, upper)))


def paired_scores(folds, unit: str = "true_prob") -> dict:
    """Per-exam score for pairing methods: ``true_prob`` (exam probability of the
    true class) or ``correct`` (1 if the exam was classified correctly)."""
    if unit == "true_prob":
        return {f.subject_id: float(f.exam_probs[f.true_label]) for f in folds}
    if unit == "correct":
        return {f.subject_id: float(f.predicted == f.true_label) for f in folds}
    raise ValueError(f"unknown pairing unit {unit!r}")


def compare_methods(folds_a, folds_b, unit: str = "true_prob", method: str = "auto") -> WilcoxonResult:
    """Wilcoxon test between two methods' fold results, paired by subject id."""
    sa, sb = paired_scores(folds_a, unit), paired_scores(folds_b, unit)
    if sa.keys() != sb.keys():
        raise ValueError("fold results cover different subjects")
    keys = sorted(sa)
    return wilcoxon_signed_rank([sa[k] for k in keys], [sb[k] for k in keys], method)
