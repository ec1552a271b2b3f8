"""Small temporal-convolution classifier with hand-written backpropagation.

Three input branches (JCD, slow motion, fast motion) are each standardized
per channel with statistics fitted on the training set, then embedded by a
kernel-1 then kernel-3 temporal convolution. The JCD and slow branches are
max-pooled by 2, all branches are cut to the fast branch's length
``(K-1)//2`` and concatenated on channels. Three conv/pool blocks
(2F, 2F, 4F filters), global average pooling and a dense layer give 4
logits, followed by a softmax.

Arrays are time-major, ``(N, T, C)``, float64.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from gaitscore.errors import CheckpointError, ShapeError
from gaitscore.features import FeatureTensor, stack_features
from gaitscore.losses import LossConfig, hybrid_logits, softmax
from gaitscore.rng import make_rng

log = logging.getLogger(__name__)

ARCH = "ddnet-lite-v1"
BRANCHES = ("jcd", "slow", "fast")


@dataclass(frozen=True)
class ModelSpec:
    n_joints: int = 24
    filters: int = 32
    window: int = 200
    n_classes: int = 4
    slope: float = 0.1

    def __post_init__(self):
        if self.window < 3:
            raise ValueError("window must be >= 3 for motion features")
        if self.filters < 1 or self.n_joints < 2:
            raise ValueError("filters must be >= 1 and n_joints >= 2")

    @property
    def input_channels(self) -> dict:
        n = self.n_joints
        return {"jcd": n * (n - 1) // 2, "slow": 3 * n, "fast": 3 * n}

    @property
    def input_lengths(self) -> dict:
        k = self.window
        return {"jcd": k, "slow": k - 1, "fast": (k - 1) // 2}

    def to_dict(self) -> dict:
        return {"arch": ARCH, **asdict(self)}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# --- layers ------------------------------------------------------------------

class Conv1D:
    """'Same' temporal convolution, weights ``(k, c_in, c_out)``."""

    def __init__(self, name, c_in, c_out, kernel, input_grad=True):
        self.name, self.c_in, self.c_out, self.kernel = name, c_in, c_out, kernel
        self.input_grad = input_grad
        self.param_shapes = {f"{name}.W": (kernel, c_in, c_out), f"{name}.b": (c_out,)}

    def forward(self, params, x):
        n, t, c = x.shape
        k = self.kernel
        if k == 1:
            cols = x.reshape(n * t, c)
        else:
            # column j holds x shifted by j - k//2, zero outside [0, t)
            pad = k // 2
            cols = np.zeros((n, t, k, c))
            for j in range(k):
                s = j - pad
                cols[:, max(0, -s):t - max(0, s), j] = x[:, max(0, s):t + min(0, s)]
            cols = cols.reshape(n * t, k * c)
        self._cols, self._shape = cols, (n, t, c)
        w = params[f"{self.name}.W"].reshape(k * c, self.c_out)
        return (cols @ w + params[f"{self.name}.b"]).reshape(n, t, self.c_out)

    def backward(self, params, grads, dout):
        n, t, c = self._shape
        k = self.kernel
        w = params[f"{self.name}.W"].reshape(k * c, self.c_out)
        d2 = dout.reshape(n * t, self.c_out)
        grads[f"{self.name}.W"] += (self._cols.T @ d2).reshape(k, c, self.c_out)
        grads[f"{self.name}.b"] += d2.sum(axis=0)
        if not self.input_grad:
            return None
        dcols = (d2 @ w.T).reshape(n, t, k, c)
        if k == 1:
            return dcols.reshape(n, t, c)
        pad = k // 2
        dx = dcols[:, :, pad].copy()
        for j in range(k):
            s = j - pad
            if s:
                dx[:, max(0, s):t + min(0, s)] += dcols[:, max(0, -s):t - max(0, s), j]
        return dx


class LeakyReLU:
    param_shapes: dict = {}

    def __init__(self, slope):
        self.slope = slope

    def forward(self, params, x):
        self._scale = np.where(x > 0, 1.0, self.slope)
        return x * self._scale

    def backward(self, params, grads, dout):
        return dout * self._scale


class MaxPool2:
    """Temporal max-pool, size and stride 2; an odd trailing frame forms its own window."""

    param_shapes: dict = {}

    def forward(self, params, x):
        n, t, c = x.shape
        self._t = t
        if t % 2:
            x = np.concatenate([x, np.full((n, 1, c), -np.inf)], axis=1)
        pairs = x.reshape(n, -1, 2, c)
        self._second = pairs[:, :, 1] > pairs[:, :, 0]
        return np.where(self._second, pairs[:, :, 1], pairs[:, :, 0])

    def backward(self, params, grads, dout):
        n, t2, c = dout.shape
        dx = np.empty((n, t2, 2, c))
        np.multiply(dout, self._second, out=dx[:, :, 1])
        np.subtract(dout, dx[:, :, 1], out=dx[:, :, 0])
        return dx.reshape(n, 2 * t2, c)[:, :self._t]


class Crop:
    param_shapes: dict = {}

    def __init__(self, length):
        self.length = length

    def forward(self, params, x):
        self._t = x.shape[1]
        return x[:, :self.length]

    def backward(self, params, grads, dout):
        dx = np.zeros((dout.shape[0], self._t, dout.shape[2]))
        dx[:, :self.length] = dout
        return dx


class GlobalAvgPool:
    param_shapes: dict = {}

    def forward(self, params, x):
        self._t = x.shape[1]
        return x.mean(axis=1)

    def backward(self, params, grads, dout):
        return np.repeat(dout[:, None, :] / self._t, self._t, axis=1)


class Dense:
    def __init__(self, name, c_in, c_out):
        self.name, self.c_in, self.c_out = name, c_in, c_out
        self.param_shapes = {f"{name}.W": (c_in, c_out), f"{name}.b": (c_out,)}

    def forward(self, params, x):
        self._x = x
        return x @ params[f"{self.name}.W"] + params[f"{self.name}.b"]

    def backward(self, params, grads, dout):
        grads[f"{self.name}.W"] += self._x.T @ dout
        grads[f"{self.name}.b"] += dout.sum(axis=0)
        return dout @ params[f"{self.name}.W"].T


def _run(layers, params, x):
    for layer in layers:
        x = layer.forward(params, x)
    return x


def _run_back(layers, params, grads, d):
    for layer in reversed(layers):
        d = layer.backward(params, grads, d)
    return d


# --- model -------------------------------------------------------------------

class Model:
    """Parameters in declared order, gradient buffers and cached activations."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        f, slope = spec.filters, spec.slope
        fused = spec.input_lengths["fast"]
        self.branches = {}
        for b in BRANCHES:
            layers = [
                Conv1D(f"{b}.embed1", spec.input_channels[b], f, 1, input_grad=False), LeakyReLU(slope),
                Conv1D(f"{b}.embed2", f, f, 3), LeakyReLU(slope),
            ]
            if b != "fast":
                layers.append(MaxPool2())
            layers.append(Crop(fused))
            self.branches[b] = layers
        self.backbone = []
        c_in = 3 * f
        for i, c_out in enumerate((2 * f, 2 * f, 4 * f), start=1):
            self.backbone += [Conv1D(f"block{i}.conv", c_in, c_out, 3), LeakyReLU(slope), MaxPool2()]
            c_in = c_out
        self.backbone += [GlobalAvgPool(), Dense("dense", c_in, spec.n_classes)]

        self.shapes = {}
        for layer in [l for b in BRANCHES for l in self.branches[b]] + self.backbone:
            self.shapes.update(layer.param_shapes)
        self.params = {}
        rng = make_rng(seed, "init")
        for name, shape in self.shapes.items():
            if name.endswith(".b"):
                self.params[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[:-1]))
                limit = np.sqrt(6.0 / fan_in)
                self.params[name] = rng.uniform(-limit, limit, size=shape)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        # per-channel input (mean, std); identity until fitted, not trained.
        # None means inputs arrive already standardized.
        self.norm = self.identity_norm(spec)
        self._cache = None

    @staticmethod
    def identity_norm(spec: ModelSpec) -> dict:
        return {b: (np.zeros(spec.input_channels[b]), np.ones(spec.input_channels[b])) for b in BRANCHES}

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def fit_input_norm(self, x: FeatureTensor) -> None:
        """Set the input standardization from a training batch, pooling samples and time.

        Channels with zero spread keep unit scale so they are only centred.
        """
        for b in BRANCHES:
            arr = getattr(x, b)
            mean, std = arr.mean(axis=(0, 1)), arr.std(axis=(0, 1))
            self.norm[b] = (mean, np.where(std > 1e-8, std, 1.0))

    def standardize(self, x: FeatureTensor) -> FeatureTensor:
        return FeatureTensor(*[(getattr(x, b) - self.norm[b][0]) / self.norm[b][1] for b in BRANCHES])

    def _check(self, x: FeatureTensor):
        for b in BRANCHES:
            arr = getattr(x, b)
            want = (self.spec.input_lengths[b], self.spec.input_channels[b])
            if arr.ndim != 3 or arr.shape[1:] != want:
                raise ShapeError(f"branch {b!r}: expected (N, {want[0]}, {want[1]}), got {arr.shape}")

    def logits(self, x: FeatureTensor) -> np.ndarray:
        """Logits for a batch ``(N, T, C)`` or a single clip ``(T, C)``; caches activations."""
        if x.jcd.ndim == 2:
            x = stack_features([x])
        self._check(x)
        z = x if self.norm is None else self.standardize(x)
        embedded = [_run(self.branches[b], self.params, getattr(z, b)) for b in BRANCHES]
        self._widths = [e.shape[2] for e in embedded]
        out = _run(self.backbone, self.params, np.concatenate(embedded, axis=2))
        self._cache = x
        return out

    def forward(self, x: FeatureTensor) -> np.ndarray:
        """Class probabilities; ``(4,)`` for a single clip, ``(N, 4)`` for a batch."""
        single = x.jcd.ndim == 2
        p = softmax(self.logits(x))
        return p[0] if single else p

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def backward(self, dlogits: np.ndarray) -> dict:
        """Accumulate parameter gradients of a scalar loss given ``dL/dlogits``."""
        if self._cache is None:
            raise RuntimeError("backward() called without a cached forward pass")
        dlogits = np.atleast_2d(dlogits)
        d = _run_back(self.backbone, self.params, self.grads, dlogits)
        start = 0
        for b, width in zip(BRANCHES, self._widths):
            _run_back(self.branches[b], self.params, self.grads, d[:, :, start:start + width])
            start += width
        self._cache = None
        return self.grads


def forward(model: Model, feature: FeatureTensor) -> np.ndarray:
    return model.forward(feature)


def backward(model: Model, feature: FeatureTensor, loss_grad) -> dict:
    """Gradients for ``loss_grad = dL/dlogits`` of the last forward pass on ``feature``."""
    if model._cache is None:
        raise RuntimeError("backward() needs a forward pass on this input first")
    batched = feature.jcd if feature.jcd.ndim == 3 else feature.jcd[None]
    if model._cache.jcd is not feature.jcd and not np.array_equal(model._cache.jcd, batched):
        raise RuntimeError("cached forward pass was run on a different input")
    model.zero_grad()
    return model.backward(loss_grad)


# --- optimisation ---------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeError(f"gradient {k} has shape {g.shape}, parameter {p.shape}")
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 600
    batch_size: int = 64
    lr_start: float = 1e-3
    lr_end: float = 1e-6
    seed: int = 0
    loss_mode: str = "focal+ordinal"
    lam: float = 1.0
    alpha: float = 0.25
    gamma: float = 2.0
    standardize: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("need lr_start >= lr_end > 0")

    def loss_config(self, n_classes: int = 4) -> LossConfig:
        return LossConfig(self.alpha, self.gamma, self.lam, n_classes, self.loss_mode)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Exponential annealing from ``lr_start`` at epoch 0 to ``lr_end`` at the last epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.epochs == 1:
        return cfg.lr_start
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** (epoch / (cfg.epochs - 1))


@dataclass
class TrainResult:
    model: Model
    loss_history: list = field(default_factory=list)
    adam: AdamState | None = None


def batch_loss_and_grad(model: Model, x: FeatureTensor, labels, loss_cfg: LossConfig):
    """Mean loss over the batch; leaves the mean-loss gradient in ``model.grads``."""
    logits = model.logits(x)
    losses, dlogits = hybrid_logits(np.asarray(labels), logits, loss_cfg)
    n = logits.shape[0]
    model.zero_grad()
    model.backward(dlogits / n)
    return float(np.mean(losses))


def train(features, labels, cfg: TrainConfig, spec: ModelSpec) -> TrainResult:
    """Mini-batch Adam on ``features`` (list of single-clip tensors or a batch).

    Input standardization is fitted on ``features`` first (unless
    ``cfg.standardize`` is off). Each epoch reshuffles with a stream keyed by
    ``(cfg.seed, epoch)``. The loss history holds the sample-weighted mean
    loss of every epoch.
    """
    if not isinstance(features, FeatureTensor):
        features = list(features)
        if not features:
            raise ValueError("empty training set")
        features = stack_features(features)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if features.jcd.shape[0] != n:
        raise ShapeError(f"{features.jcd.shape[0]} feature rows for {n} labels")
    model = Model(spec, seed=cfg.seed)
    fitted = None
    if cfg.standardize:
        # standardize the whole set once and train behind an identity transform;
        # elementwise the arithmetic is the same as doing it per batch
        model.fit_input_norm(features)
        features = model.standardize(features)
        fitted, model.norm = model.norm, None
    loss_cfg = cfg.loss_config(spec.n_classes)
    adam = AdamState.like(model.params)
    history = []
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        order = make_rng(cfg.seed, "shuffle", epoch).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = FeatureTensor(features.jcd[idx], features.slow[idx], features.fast[idx])
            total += batch_loss_and_grad(model, xb, labels[idx], loss_cfg) * len(idx)
            adam_step(model.params, model.grads, adam, lr)
        history.append(total / n)
        if epoch % 50 == 0 or epoch == cfg.epochs - 1:
            log.debug("epoch %d lr %.3g loss %.5f", epoch, lr, history[-1])
    if fitted is not None:
        model.norm = fitted
    return TrainResult(model, history, adam)


def predict_proba(model: Model, features, batch_size: int = 256) -> np.ndarray:
    if not isinstance(features, FeatureTensor):
        features = stack_features(list(features))
    out = []
    for s in range(0, features.jcd.shape[0], batch_size):
        sl = slice(s, s + batch_size)
        out.append(model.forward(FeatureTensor(features.jcd[sl], features.slow[sl], features.fast[sl])))
    return np.concatenate(out, axis=0)


# --- checkpoints -----------------------------------------------------------------

MAGIC = b"GAITSCORE-CKPT\n"
CKPT_VERSION = 1


def dumps_checkpoint(model: Model, adam: AdamState | None = None, extra: dict | None = None) -> bytes:
    """Serialize to bytes: magic line, one JSON header line, raw little-endian float64 tensors."""
    tensors = [(k, model.params[k]) for k in model.shapes]
    for b in BRANCHES:
        tensors += [(f"norm.{b}.mean", model.norm[b][0]), (f"norm.{b}.std", model.norm[b][1])]
    if adam is not None:
        tensors += [(f"adam.m.{k}", adam.m[k]) for k in model.shapes]
        tensors += [(f"adam.v.{k}", adam.v[k]) for k in model.shapes]
    header = {
        "version": CKPT_VERSION,
        "spec": model.spec.to_dict(),
        "spec_hash": model.spec.hash(),
        "dtype": "<f8",
        "tensors": [[k, list(v.shape)] for k, v in tensors],
        "adam_t": adam.t if adam is not None else None,
        "extra": extra or {},
    }
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for _, v in tensors)
    return MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + body


def loads_checkpoint(data: bytes, expect: ModelSpec | None = None):
    """Inverse of :func:`dumps_checkpoint`; returns ``(model, adam_or_None, extra)``."""
    if not data.startswith(MAGIC):
        raise CheckpointError("not a gaitscore checkpoint")
    nl = data.index(b"\n", len(MAGIC))
    try:
        header = json.loads(data[len(MAGIC):nl])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if header.get("version") != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    spec_dict = dict(header["spec"])
    if spec_dict.pop("arch", None) != ARCH:
        raise CheckpointError("checkpoint architecture does not match this library")
    spec = ModelSpec(**spec_dict)
    if spec.hash() != header["spec_hash"]:
        raise CheckpointError("checkpoint spec hash does not match its model spec")
    if expect is not None and expect.hash() != header["spec_hash"]:
        raise CheckpointError(f"checkpoint spec {spec} does not match requested {expect}")
    model = Model(spec)
    body = memoryview(data)[nl + 1:]
    offset = 0
    loaded = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape))
        nbytes = 8 * count
        if offset + nbytes > len(body):
            raise CheckpointError("checkpoint is truncated")
        loaded[name] = np.frombuffer(body[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise CheckpointError("trailing bytes after checkpoint tensors")
    for name, shape in model.shapes.items():
        if name not in loaded or loaded[name].shape != tuple(shape):
            raise CheckpointError(f"checkpoint tensor {name} missing or mis-shaped")
        model.params[name] = loaded[name]
    for b in BRANCHES:
        pair = loaded.get(f"norm.{b}.mean"), loaded.get(f"norm.{b}.std")
        c = spec.input_channels[b]
        if any(v is None or v.shape != (c,) for v in pair):
            raise CheckpointError(f"checkpoint input normalization for {b!r} missing or mis-shaped")
        model.norm[b] = pair
    adam = None
    if header["adam_t"] is not None:
        adam = AdamState({k: loaded[f"adam.m.{k}"] for k in model.shapes},
                         {k: loaded[f"adam.v.{k}"] for k in model.shapes}, header["adam_t"])
    return model, adam, header["extra"]


# --- gradient check ----------------------------------------------------------------

def gradient_check(spec: ModelSpec | None = None, batch: int = 3, h: float = 1e-4,
                   seed: int = 0, loss_cfg: LossConfig | None = None):
    """Compare analytic and central-difference gradients for every parameter element.

    Relative error per element is ``|a - n| / max(|a|, |n|, 1e-8)``. Returns
    ``{param_name: max_relative_error}``.
    """
    from gaitscore.features import clip_features

    spec = spec or ModelSpec(n_joints=6, filters=4, window=16)
    loss_cfg = loss_cfg or LossConfig()
    rng = make_rng(seed, "gradcheck")
    model = Model(spec, seed=seed)
    for k in model.params:
        if k.endswith(".b"):
            model.params[k] = 0.1 * rng.standard_normal(model.params[k].shape)
    clips = rng.standard_normal((batch, spec.window, spec.n_joints, 3))
    x = stack_features([clip_features(c) for c in clips])
    labels = rng.integers(0, spec.n_classes, size=batch)
    pred = np.argmax(model.logits(x), axis=1)
    model._cache = None

    def loss_at():
        logits = model.logits(x)
        model._cache = None
        return float(np.mean(hybrid_logits(labels, logits, loss_cfg, pred=pred)[0]))

    logits = model.logits(x)
    losses, dlogits = hybrid_logits(labels, logits, loss_cfg, pred=pred)
    model.zero_grad()
    model.backward(dlogits / batch)
    analytic = {k: g.copy() for k, g in model.grads.items()}

    worst = {}
    for name, p in model.params.items():
        num = np.zeros_like(p)
        flat, nflat = p.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_at()
            flat[i] = orig - h
            down = loss_at()
            flat[i] = orig
            nflat[i] = (up - down) / (2 * h)
        a = analytic[name]
        rel = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-8)
        worst[name] = float(rel.max())
    return worst
