"""Fully connected feed-forward regression network in plain numpy.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch is
propagated with ``X @ W + b``.  Each layer carries a ``trainable`` flag;
frozen layers get zero gradients and are never touched by the optimiser.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .rng import make_rng

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class NetArchitecture:
    n_inputs: int = 9
    hidden: tuple[int, ...] = (64, 32, 32)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.n_inputs < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.n_inputs, *self.hidden, 1)


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    trainable: bool = True

    def copy(self) -> "Layer":
        return Layer(self.W.copy(), self.b.copy(), self.trainable)


@dataclass
class NetParams:
    arch: NetArchitecture
    layers: list[Layer]

    def copy(self) -> "NetParams":
        return NetParams(self.arch, [l.copy() for l in self.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.W.ravel(), l.b]) for l in self.layers])

    def with_trainable(self, flags) -> "NetParams":
        flags = list(flags)
        if len(flags) != len(self.layers):
            raise ValueError("one trainable flag per layer required")
        out = self.copy()
        for layer, f in zip(out.layers, flags):
            layer.trainable = bool(f)
        return out

    def freeze_hidden(self) -> "NetParams":
        """Copy with every layer frozen except the output layer."""
        n = len(self.layers)
        return self.with_trainable([k == n - 1 for k in range(n)])

    def unfreeze(self) -> "NetParams":
        return self.with_trainable([True] * len(self.layers))


def init(arch: NetArchitecture, seed: int) -> NetParams:
    """He-uniform weights, U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero biases."""
    rng = make_rng(seed, "net_init")
    layers = []
    widths = arch.widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = init_bound(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append(Layer(W, np.zeros(fan_out)))
    return NetParams(arch, layers)


def init_bound(fan_in: int) -> float:
    return math.sqrt(6.0 / fan_in)


def _act(z, name):
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(z, a, name):
    return (z > 0).astype(z.dtype) if name == "relu" else 1.0 - a * a


def _check(params: NetParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != params.arch.n_inputs:
        raise ValueError(
            f"feature arity mismatch: network expects {params.arch.n_inputs}, got {X.shape}"
        )
    return X


def forward(params: NetParams, X) -> np.ndarray:
    """Network output for each row of X, shape (n,)."""
    a = _check(params, X)
    last = len(params.layers) - 1
    for k, layer in enumerate(params.layers):
        z = a @ layer.W + layer.b
        a = z if k == last else _act(z, params.arch.activation)
    return a[:, 0]


def loss(params: NetParams, X, y) -> float:
    r = forward(params, X) - np.asarray(y, dtype=np.float64)
    return float(np.mean(r * r))


def grad(params: NetParams, X, y):
    """Backpropagated gradient of the batch MSE.

    Returns ``(loss, [(dW, db), ...])``; frozen layers get zero arrays.
    """
    X = _check(params, X)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("empty batch")
    act = params.arch.activation
    last = len(params.layers) - 1
    zs, acts = [], [X]
    a = X
    for k, layer in enumerate(params.layers):
        z = a @ layer.W + layer.b
        a = z if k == last else _act(z, act)
        zs.append(z)
        acts.append(a)
    resid = a[:, 0] - y
    value = float(np.mean(resid * resid))

    # index of the first layer that needs a gradient; nothing below it is visited
    lowest = next((k for k, l in enumerate(params.layers) if l.trainable), None)
    grads = [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in params.layers]
    if lowest is None:
        return value, grads
    delta = (2.0 / len(y)) * resid[:, None]
    for k in range(last, lowest - 1, -1):
        layer = params.layers[k]
        if k != last:
            delta = delta * _act_grad(zs[k], acts[k + 1], act)
        if layer.trainable:
            grads[k] = (acts[k].T @ delta, delta.sum(axis=0))
        if k > lowest:
            delta = delta @ layer.W.T
    return value, grads


@dataclass(frozen=True)
class EarlyStopping:
    patience: int = 20
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 500
    batch_size: int = 256
    early_stopping: EarlyStopping | None = field(default_factory=EarlyStopping)
    lr_decay: float = 0.97
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")


@dataclass
class TrainLog:
    epoch: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    diverged: bool = False
    message: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_mse", "val_mse", "lr"])
        for row in zip(self.epoch, self.train_mse, self.val_mse, self.lr):
            w.writerow([row[0], repr(row[1]), "" if row[2] is None else repr(row[2]),
                        repr(row[3])])
        return buf.getvalue()


class _Adam:
    def __init__(self, params: NetParams, b1=0.9, b2=0.999, eps=1e-8):
        self.m = [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in params.layers]
        self.v = [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in params.layers]
        self.b1, self.b2, self.eps, self.t = b1, b2, eps, 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, layer in enumerate(params.layers):
            if not layer.trainable:
                continue
            for j, (p, g) in enumerate(((layer.W, grads[k][0]), (layer.b, grads[k][1]))):
                m = self.m[k][j]
                v = self.v[k][j]
                m *= self.b1
                m += (1 - self.b1) * g
                v *= self.b2
                v += (1 - self.b2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(params: NetParams, X, y, config: TrainConfig = TrainConfig()):
    """Mini-batch gradient descent honouring the layers' trainable flags.

    The learning rate is multiplied by ``lr_decay`` after every epoch.  With
    early stopping a seed-derived validation split is held out and training
    stops once validation MSE has not improved for more than ``patience``
    epochs; the parameters of the best validation epoch are returned.
    Non-finite loss aborts training and returns the best parameters seen.
    """
    X = _check(params, X)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("cannot train on an empty dataset")
    params = params.copy()
    tlog = TrainLog()
    rng = make_rng(config.seed, "train")

    es = config.early_stopping
    if es is not None and len(y) >= 2:
        perm = rng.permutation(len(y))
        n_val = min(max(1, int(round(es.validation_fraction * len(y)))), len(y) - 1)
        val_idx = np.sort(perm[:n_val])
        tr_idx = np.sort(perm[n_val:])
        Xv, yv = X[val_idx], y[val_idx]
        X, y = X[tr_idx], y[tr_idx]
    else:
        es = None
        Xv = yv = None

    best = params.copy()
    best_score = loss(params, Xv, yv) if es else math.inf
    wait = 0
    lr = config.learning_rate
    adam = _Adam(params) if config.optimizer == "adam" else None
    n = len(y)
    bs = config.batch_size
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            value, grads = grad(params, X[idx], y[idx])
            if not math.isfinite(value):
                break
            total += value * len(idx)
            if adam is not None:
                adam.step(params, grads, lr)
            else:
                for layer, (dW, db) in zip(params.layers, grads):
                    if layer.trainable:
                        layer.W -= lr * dW
                        layer.b -= lr * db
        train_mse = total / n
        finite = math.isfinite(value) and all(
            np.all(np.isfinite(l.W)) for l in params.layers)
        val_mse = loss(params, Xv, yv) if es and finite else None
        tlog.epoch.append(epoch)
        tlog.train_mse.append(train_mse if finite else math.nan)
        tlog.val_mse.append(val_mse)
        tlog.lr.append(lr)
        if not finite or (val_mse is not None and not math.isfinite(val_mse)):
            tlog.diverged = True
            tlog.message = f"loss became non-finite at epoch {epoch}; returning best parameters"
            log.warning(tlog.message)
            break
        if es:
            if val_mse < best_score:
                best_score = val_mse
                best = params.copy()
                tlog.best_epoch = epoch
                wait = 0
            else:
                wait += 1
                if wait > es.patience:
                    tlog.stopped_early = True
                    break
        else:
            best = params.copy()
            tlog.best_epoch = epoch
        lr *= config.lr_decay
    return best, tlog


# --------------------------------------------------------------------------
# persistence


def save_params(params: NetParams, path) -> None:
    arrays = {
        "version": np.array(FORMAT_VERSION, dtype="<i8"),
        "widths": np.array(params.arch.widths, dtype="<i8"),
        "activation": np.array(params.arch.activation),
        "trainable": np.array([l.trainable for l in params.layers]),
    }
    for k, layer in enumerate(params.layers):
        arrays[f"W{k}"] = layer.W.astype("<f8")
        arrays[f"b{k}"] = layer.b.astype("<f8")
    np.savez(path, **arrays)


def load_params(path) -> NetParams:
    with np.load(path) as z:
        if int(z["version"]) != FORMAT_VERSION:
            raise ValueError(f"unsupported network format version {int(z['version'])}")
        widths = [int(v) for v in z["widths"]]
        arch = NetArchitecture(widths[0], tuple(widths[1:-1]), str(z["activation"]))
        flags = [bool(v) for v in z["trainable"]]
        layers = [Layer(z[f"W{k}"].astype(np.float64), z[f"b{k}"].astype(np.float64), flags[k])
                  for k in range(len(widths) - 1)]
    return NetParams(arch, layers)


def params_bytes(params: NetParams) -> bytes:
    buf = io.BytesIO()
    save_params(params, buf)
    return buf.getvalue()


def with_learning_rate(config: TrainConfig, lr: float) -> TrainConfig:
    return replace(config, learning_rate=lr)
