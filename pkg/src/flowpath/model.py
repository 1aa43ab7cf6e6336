"""K-layer flow-propagation network: forward pass, analytic gradients, training.

Layer k computes h^k = act(concat(h^{k-1}, P_k h^{k-1}) W^k + b^k) where P_k
is that layer's propagation operator; a dense softmax head maps h^K to class
logits.  Gradients are hand-rolled reverse mode; the propagation operators
are constants (paths are never differentiated through).
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import log_softmax, softmax

from . import streams
from .exceptions import NumericsError, ShapeError
from .graph import DatasetBundle
from .propagation import build_propagation_matrix
from .walks import PathSet, WalkParams, pathgen

_CKPT_MAGIC = b"FPN1"
_CKPT_VERSION = 1


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(z):
    return (z > 0).astype(np.float64)


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "identity": (lambda x: x, lambda z: np.ones_like(z)),
}


@dataclass(frozen=True)
class ModelConfig:
    """Training hyperparameters; defaults follow the standard recipe."""

    layers: int = 2
    hidden: int = 50
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    epochs: int = 100
    patience: int = 10
    activation: str = "relu"
    seed: int = 0
    resample_per_epoch: bool = False
    batch_mode: str = "full"  # "full" or "path-batch"
    batch_nodes: int = 256

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be > 0 and weight_decay >= 0")
        if self.epochs < 0 or self.patience < 1:
            raise ValueError("epochs must be >= 0 and patience >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.batch_mode not in ("full", "path-batch"):
            raise ValueError(f"unknown batch_mode {self.batch_mode!r}")


@dataclass
class ModelParams:
    """All trainable state: per-layer weights/biases plus the classifier head."""

    weights: list
    biases: list
    head_weight: np.ndarray
    head_bias: np.ndarray

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def named_tensors(self):
        """(name, live array) pairs in canonical order."""
        out = []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"layer{k}.weight", w))
            out.append((f"layer{k}.bias", b))
        out.append(("head.weight", self.head_weight))
        out.append(("head.bias", self.head_bias))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights],
                           [b.copy() for b in self.biases],
                           self.head_weight.copy(), self.head_bias.copy())

    def check_finite(self) -> None:
        for name, t in self.named_tensors():
            if not np.isfinite(t).all():
                raise NumericsError(f"non-finite values in {name}")


def init_params(in_dim: int, hidden: int, num_classes: int, layers: int,
                rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    dims = [in_dim] + [hidden] * layers
    weights = [glorot(2 * dims[k], dims[k + 1]) for k in range(layers)]
    biases = [np.zeros(dims[k + 1]) for k in range(layers)]
    return ModelParams(weights, biases, glorot(dims[-1], num_classes),
                       np.zeros(num_classes))


@dataclass
class ForwardCache:
    """Intermediate state of one forward pass, reused by backward()."""

    hidden: list          # h^0 .. h^K
    concat: list          # per-layer concat(h^{k-1}, P_k h^{k-1})
    pre: list             # per-layer pre-activations
    logits: np.ndarray


def forward(features: np.ndarray, prop_matrices, params: ModelParams,
            activation: str = "relu") -> ForwardCache:
    """Run the K-layer pass; raises ShapeError/NumericsError on bad state."""
    act, _ = ACTIVATIONS[activation]
    k_layers = params.num_layers
    if len(prop_matrices) != k_layers:
        raise ShapeError(f"need {k_layers} propagation matrices, got {len(prop_matrices)}")
    h = np.asarray(features, dtype=np.float64)
    n = h.shape[0]
    hidden, concats, pres = [h], [], []
    for k in range(k_layers):
        mat = prop_matrices[k]
        if mat.shape != (n, n):
            raise ShapeError(f"propagation matrix {k} has shape {mat.shape}, expected {(n, n)}")
        if params.weights[k].shape[0] != 2 * h.shape[1]:
            raise ShapeError(f"layer {k} weight expects input dim "
                             f"{params.weights[k].shape[0] // 2}, got {h.shape[1]}")
        cat = np.concatenate([h, mat @ h], axis=1)
        z = cat @ params.weights[k] + params.biases[k]
        h = act(z)
        if not np.isfinite(h).all():
            raise NumericsError(f"non-finite activation at layer {k + 1}")
        hidden.append(h)
        concats.append(cat)
        pres.append(z)
    logits = h @ params.head_weight + params.head_bias
    if not np.isfinite(logits).all():
        raise NumericsError("non-finite logits")
    return ForwardCache(hidden, concats, pres, logits)


def _decay_term(params: ModelParams, weight_decay: float) -> float:
    if weight_decay == 0:
        return 0.0
    sq = sum(float((w ** 2).sum()) for w in params.weights)
    sq += float((params.head_weight ** 2).sum())
    return 0.5 * weight_decay * sq


def loss(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray,
         params: ModelParams, weight_decay: float) -> float:
    """Mean softmax cross-entropy over masked nodes plus L2 on weight matrices."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask selects no labeled nodes")
    logp = log_softmax(logits[mask], axis=1)
    ce = -float(logp[np.arange(logp.shape[0]), labels[mask]].mean())
    return ce + _decay_term(params, weight_decay)


def backward(cache: ForwardCache, prop_matrices, params: ModelParams,
             labels: np.ndarray, mask: np.ndarray, weight_decay: float,
             activation: str = "relu") -> ModelParams:
    """Exact gradients of loss() w.r.t. every parameter, as a ModelParams."""
    _, act_grad = ACTIVATIONS[activation]
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("mask selects no labeled nodes")
    n, _ = cache.logits.shape
    d_logits = np.zeros_like(cache.logits)
    probs = softmax(cache.logits[mask], axis=1)
    probs[np.arange(count), labels[mask]] -= 1.0
    d_logits[mask] = probs / count

    h_last = cache.hidden[-1]
    g_head_w = h_last.T @ d_logits + weight_decay * params.head_weight
    g_head_b = d_logits.sum(axis=0)
    dh = d_logits @ params.head_weight.T

    g_w, g_b = [None] * params.num_layers, [None] * params.num_layers
    for k in reversed(range(params.num_layers)):
        dz = dh * act_grad(cache.pre[k])
        g_w[k] = cache.concat[k].T @ dz + weight_decay * params.weights[k]
        g_b[k] = dz.sum(axis=0)
        dcat = dz @ params.weights[k].T
        d_in = cache.hidden[k].shape[1]
        dh = dcat[:, :d_in] + prop_matrices[k].T @ dcat[:, d_in:]
    return ModelParams(g_w, g_b, g_head_w, g_head_b)


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: ModelParams, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._m = {name: np.zeros_like(t) for name, t in params.named_tensors()}
        self._v = {name: np.zeros_like(t) for name, t in params.named_tensors()}

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        self.step_count += 1
        t = self.step_count
        m_corr = 1.0 - self.beta1 ** t
        v_corr = 1.0 - self.beta2 ** t
        for (name, tensor), (_, grad) in zip(params.named_tensors(),
                                             grads.named_tensors()):
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1 - self.beta1) * grad
            v *= self.beta2
            v += (1 - self.beta2) * grad ** 2
            tensor -= self.lr * (m / m_corr) / (np.sqrt(v / v_corr) + self.eps)


class EarlyStopper:
    """Stop after `patience` consecutive epochs without a strict val-loss improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, val_loss: float, epoch: int) -> bool:
        """Record one epoch; returns True when training should halt."""
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


def path_batches(paths: PathSet, batch_nodes: int) -> list:
    """Split a PathSet into slices of ceil(batch_nodes / path_len) paths."""
    if batch_nodes < paths.path_len:
        raise ValueError(f"batch_nodes={batch_nodes} below path length {paths.path_len}")
    per = -(-batch_nodes // paths.path_len)
    return [paths.slice(i, i + per) for i in range(0, len(paths), per)]


def evaluate(params: ModelParams, bundle: DatasetBundle, prop_matrices,
             activation: str = "relu") -> dict:
    """Argmax accuracy per split (ties resolve to the lowest class id)."""
    cache = forward(bundle.features, prop_matrices, params, activation)
    preds = np.argmax(cache.logits, axis=1)
    out = {}
    for tag in ("train", "val", "test"):
        m = bundle.mask(tag)
        out[tag] = float((preds[m] == bundle.labels[m]).mean()) if m.any() else float("nan")
    return out


@dataclass
class TrainReport:
    """Per-epoch curves plus the final outcome of one training run."""

    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    best_epoch: int = 0
    accuracy: dict = field(default_factory=dict)
    skipped_steps: int = 0

    @property
    def num_epochs(self) -> int:
        return len(self.train_loss)

    @property
    def test_accuracy(self) -> float:
        return self.accuracy.get("test", float("nan"))

    def write_csv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write("epoch,train_loss,val_loss,val_acc\n")
            for i in range(self.num_epochs):
                fh.write(f"{i + 1},{self.train_loss[i]:.10g},"
                         f"{self.val_loss[i]:.10g},{self.val_acc[i]:.10g}\n")


@dataclass
class FitResult:
    params: ModelParams
    report: TrainReport
    matrices: list


def _layer_walk_params(walk_params, layers: int) -> list:
    if isinstance(walk_params, WalkParams):
        return [walk_params] * layers
    wp = list(walk_params)
    if len(wp) != layers:
        raise ValueError(f"need {layers} WalkParams, got {len(wp)}")
    return wp


def _build_layer_matrices(bundle: DatasetBundle, wps, salt: int = 0):
    n = bundle.graph.num_nodes
    pathsets = [pathgen(bundle.graph, wp, layer=k + 1, salt=salt)
                for k, wp in enumerate(wps)]
    return pathsets, [build_propagation_matrix(ps, n) for ps in pathsets]


def fit_model(bundle: DatasetBundle, config: ModelConfig, walk_params) -> FitResult:
    """Train with Adam and early stopping; returns best-val-loss parameters.

    Paths are generated once per layer before training and stay fixed unless
    resample_per_epoch is set.  Validation loss is monitored without the
    weight-decay term.
    """
    if not bundle.mask("train").any() or not bundle.mask("val").any():
        raise ValueError("bundle needs nonempty labeled train and val splits")
    wps = _layer_walk_params(walk_params, config.layers)
    pathsets, matrices = _build_layer_matrices(bundle, wps)

    rng = streams.derive_rng(config.seed, streams.INIT)
    params = init_params(bundle.num_features, config.hidden, bundle.num_classes,
                         config.layers, rng)
    optimizer = Adam(params, config.learning_rate)
    stopper = EarlyStopper(config.patience)
    report = TrainReport()
    train_mask = bundle.mask("train")
    val_mask = bundle.mask("val")
    best_params = params.copy()

    for epoch in range(1, config.epochs + 1):
        tic = time.perf_counter()
        if config.resample_per_epoch and epoch > 1:
            pathsets, matrices = _build_layer_matrices(bundle, wps, salt=epoch)

        try:
            _run_epoch(bundle, config, params, pathsets, matrices, optimizer,
                       report, train_mask)
            val_cache = forward(bundle.features, matrices, params, config.activation)
            val_loss = loss(val_cache.logits, bundle.labels, val_mask, params, 0.0)
            if not np.isfinite(val_loss):
                raise NumericsError("non-finite validation loss")
        except NumericsError as exc:
            raise NumericsError(f"training diverged at epoch {epoch}: {exc}") from exc

        preds = np.argmax(val_cache.logits, axis=1)
        val_acc = float((preds[val_mask] == bundle.labels[val_mask]).mean())

        report.val_loss.append(float(val_loss))
        report.val_acc.append(val_acc)
        report.epoch_seconds.append(time.perf_counter() - tic)

        improved = val_loss < stopper.best
        stop = stopper.update(val_loss, epoch)
        if improved:
            best_params = params.copy()
        if stop:
            break

    report.best_epoch = stopper.best_epoch
    report.accuracy = evaluate(best_params, bundle, matrices, config.activation)
    return FitResult(best_params, report, matrices)


def _run_epoch(bundle, config, params, pathsets, matrices, optimizer, report,
               train_mask) -> None:
    """One epoch of updates; appends the epoch's train loss to the report."""
    if config.batch_mode == "full":
        cache = forward(bundle.features, matrices, params, config.activation)
        train_loss = loss(cache.logits, bundle.labels, train_mask, params,
                          config.weight_decay)
        if not np.isfinite(train_loss):
            raise NumericsError("non-finite training loss")
        grads = backward(cache, matrices, params, bundle.labels, train_mask,
                         config.weight_decay, config.activation)
        optimizer.step(params, grads)
    else:
        slice_lists = [path_batches(ps, config.batch_nodes) for ps in pathsets]
        steps = max(len(s) for s in slice_lists)
        n = bundle.graph.num_nodes
        for step in range(steps):
            slices = [s[step % len(s)] for s in slice_lists]
            mats = [build_propagation_matrix(sl, n) for sl in slices]
            covered = np.asarray(mats[-1].sum(axis=1)).ravel() > 0
            step_mask = train_mask & covered
            if not step_mask.any():
                report.skipped_steps += 1
                continue
            cache = forward(bundle.features, mats, params, config.activation)
            step_loss = loss(cache.logits, bundle.labels, step_mask, params,
                             config.weight_decay)
            if not np.isfinite(step_loss):
                raise NumericsError("non-finite step loss")
            grads = backward(cache, mats, params, bundle.labels, step_mask,
                             config.weight_decay, config.activation)
            optimizer.step(params, grads)
        cache = forward(bundle.features, matrices, params, config.activation)
        train_loss = loss(cache.logits, bundle.labels, train_mask, params,
                          config.weight_decay)
    report.train_loss.append(float(train_loss))


def train(bundle: DatasetBundle, config: ModelConfig, walk_params):
    """fit_model, returning just (params, report)."""
    result = fit_model(bundle, config, walk_params)
    return result.params, result.report


def save_checkpoint(path, params: ModelParams, config: dict | None = None) -> None:
    """Binary checkpoint: versioned header + row-major f64 tensors + JSON sidecar."""
    tensors = params.named_tensors()
    out = Path(path)
    with out.open("wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(tensors)))
        for name, t in tensors:
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(t, dtype=np.float64)
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            fh.write(arr.tobytes(order="C"))
    sidecar = {"schema": 1,
               "tensors": {name: list(t.shape) for name, t in tensors},
               "config": config or {}}
    out.with_suffix(out.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8")


def load_checkpoint(path):
    """Load a checkpoint written by save_checkpoint; returns (params, config)."""
    data = Path(path).read_bytes()
    if data[:4] != _CKPT_MAGIC:
        raise ShapeError("not a model checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != _CKPT_VERSION:
        raise ShapeError(f"unsupported checkpoint version {version}")
    offset = 12
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}q", data, offset)
        offset += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype=np.float64, count=size, offset=offset)
        offset += 8 * size
        tensors[name] = arr.reshape(shape).copy()
    layers = sum(1 for name in tensors if name.endswith(".weight") and name != "head.weight")
    params = ModelParams(
        weights=[tensors[f"layer{k}.weight"] for k in range(layers)],
        biases=[tensors[f"layer{k}.bias"] for k in range(layers)],
        head_weight=tensors["head.weight"],
        head_bias=tensors["head.bias"],
    )
    sidecar_path = Path(path).with_suffix(Path(path).suffix + ".json")
    config = {}
    if sidecar_path.is_file():
        config = json.loads(sidecar_path.read_text(encoding="utf-8")).get("config", {})
    return params, config
