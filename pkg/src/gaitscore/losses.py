"""Focal, ordinal and hybrid focal + lambda * ordinal losses with exact gradients.

All functions take either a single probability vector ``(C,)`` or a batch
``(N, C)``; targets may be integer labels or one-hot rows. Single inputs give
a float, batches give per-sample arrays. Natural logarithms throughout.

The ordinal weight ``(1 + |y - argmax p|) / C`` is a per-sample constant: no
gradient flows through the argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-12
LOSS_MODES = ("ce", "focal", "ordinal", "focal+ordinal")


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.25
    gamma: float = 2.0
    lam: float = 1.0
    n_classes: int = 4
    mode: str = "focal+ordinal"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.mode not in LOSS_MODES:
            raise ValueError(f"mode must be one of {LOSS_MODES}, got {self.mode!r}")

    def terms(self) -> tuple[float, float, float]:
        """``(alpha, gamma, lam)`` actually applied for ``mode``; alpha 0 disables the focal term.

        ``ce`` is the focal term with alpha=1, gamma=0 and no ordinal term;
        ``focal`` drops the ordinal term; ``ordinal`` drops the focal term.
        """
        if self.mode == "ce":
            return 1.0, 0.0, 0.0
        if self.mode == "focal":
            return self.alpha, self.gamma, 0.0
        if self.mode == "ordinal":
            return 0.0, 0.0, 1.0
        return self.alpha, self.gamma, self.lam


def _prepare(y, p):
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    if p.ndim not in (1, 2):
        raise ValueError(f"probabilities must be (C,) or (N, C), got shape {p.shape}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("probabilities must be non-negative and sum to 1 within 1e-6")
    y = np.asarray(y)
    if y.ndim >= 1 and y.shape == p.shape:
        onehot = np.atleast_2d(y).astype(np.float64)
        if not (np.all((onehot == 0) | (onehot == 1)) and np.all(onehot.sum(axis=1) == 1)):
            raise ValueError("one-hot targets must have exactly one 1 per row")
        labels = np.argmax(onehot, axis=1)
    else:
        labels = np.atleast_1d(y).astype(np.int64)
    p = np.atleast_2d(p)
    if labels.shape[0] != p.shape[0]:
        raise ValueError(f"{labels.shape[0]} targets for {p.shape[0]} probability rows")
    if np.any(labels < 0) or np.any(labels >= p.shape[1]):
        raise ValueError("labels out of range")
    return labels, p, single


def _out(x, single):
    return float(x[0]) if single else x


def _p_true(labels, p):
    q = p[np.arange(len(labels)), labels]
    inside = (q > EPS) & (q < 1 - EPS)
    return np.clip(q, EPS, 1 - EPS), inside


def _focal_terms(q, alpha, gamma):
    """Focal loss and its derivative in the true-class probability ``q``."""
    mod = (1 - q) ** gamma
    loss = -alpha * mod * np.log(q)
    dmod = gamma * (1 - q) ** (gamma - 1) if gamma != 0 else 0.0
    dq = alpha * (dmod * np.log(q) - mod / q)
    return loss, dq


def ordinal_weight(labels, p, pred=None):
    """``1 + |label - pred|``; ``pred`` defaults to argmax(p), smallest index on ties."""
    pred = np.argmax(p, axis=1) if pred is None else np.atleast_1d(pred)
    return 1.0 + np.abs(labels - pred)


def focal(y, p, cfg: LossConfig = LossConfig()):
    labels, p, single = _prepare(y, p)
    q, _ = _p_true(labels, p)
    loss, _ = _focal_terms(q, cfg.alpha, cfg.gamma)
    return _out(loss, single)


def ordinal(y, p, pred=None, cfg: LossConfig = LossConfig()):
    labels, p, single = _prepare(y, p)
    q, _ = _p_true(labels, p)
    w = ordinal_weight(labels, p, pred)
    return _out(-w / p.shape[1] * np.log(q), single)


def _hybrid_dq(labels, p, cfg, pred):
    alpha, gamma, lam = cfg.terms()
    q, inside = _p_true(labels, p)
    loss = np.zeros_like(q)
    dq = np.zeros_like(q)
    if alpha:
        f, df = _focal_terms(q, alpha, gamma)
        loss += f
        dq += df
    if lam:
        scale = lam * ordinal_weight(labels, p, pred) / p.shape[1]
        loss += -scale * np.log(q)
        dq += -scale / q
    return loss, dq * inside


def hybrid(y, p, cfg: LossConfig = LossConfig(), pred=None):
    """Loss per ``cfg.mode`` and its gradient with respect to ``p``."""
    labels, p, single = _prepare(y, p)
    loss, dq = _hybrid_dq(labels, p, cfg, pred)
    grad = np.zeros_like(p)
    grad[np.arange(len(labels)), labels] = dq
    return (_out(loss, single), grad[0] if single else grad)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def hybrid_logits(y, logits, cfg: LossConfig = LossConfig(), pred=None):
    """Loss and gradient with respect to the logits feeding a softmax."""
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    p = softmax(logits)
    labels, p, _ = _prepare(y, p)
    loss, dq = _hybrid_dq(labels, p, cfg, pred)
    rows = np.arange(len(labels))
    q = p[rows, labels]
    grad = -(dq * q)[:, None] * p
    grad[rows, labels] += dq * q
    return (_out(loss, single), grad[0] if single else grad)
