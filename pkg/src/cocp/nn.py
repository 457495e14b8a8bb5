"""Small dense feed-forward networks with hand-written backprop and Adam.

Plain numpy. A model is a container of weight matrices in a single dtype
(float64 by default); training works on a private copy and returns a new
model. Outputs of :func:`forward` are always float64.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

HEADS = ("identity", "positive", "base_and_gap")
RADIUS_FLOOR = 1e-3


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss becomes non-finite."""

    def __init__(self, message, epoch=None, batch=None, phase=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.phase = phase


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    """Logistic function, evaluated without overflow for large |z|."""
    z = np.asarray(z)
    if z.dtype.kind != "f":
        z = z.astype(np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class MlpModel:
    """ReLU MLP. ``weights[i]`` has shape ``(dims[i+1], dims[i])``."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: str = "identity"
    rng_seed: int = 0
    radius_floor: float = RADIUS_FLOOR

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if len(self.weights) != len(self.layer_dims) - 1:
            raise ValueError("number of weight matrices does not match layer_dims")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_dims[i + 1], self.layer_dims[i])
            if W.shape != expect or b.shape != (expect[0],):
                raise ValueError(f"layer {i}: got {W.shape}/{b.shape}, expected {expect}")
        if self.head == "base_and_gap" and self.layer_dims[-1] != 2:
            raise ValueError("base_and_gap head needs exactly two outputs")

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)

    def __call__(self, X):
        return forward(self, X)


def init_mlp(layer_dims: Sequence[int], head: str = "identity", seed: int = 0,
             radius_floor: float = RADIUS_FLOOR, dtype=np.float64) -> MlpModel:
    """He-initialised weights (fan-in scaling), zero biases.

    ``dtype`` sets the parameter precision; float32 roughly halves training
    time and is what the interval trainers use.
    """
    if any(int(d) < 1 for d in layer_dims) or len(layer_dims) < 2:
        raise ValueError(f"invalid layer dims {layer_dims}")
    dims = [int(d) for d in layer_dims]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpModel(dims, weights, biases, head=head, rng_seed=seed, radius_floor=radius_floor)


def zero_mlp(layer_dims: Sequence[int], head: str = "identity") -> MlpModel:
    dims = [int(d) for d in layer_dims]
    weights = [np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(o) for o in dims[1:]]
    return MlpModel(dims, weights, biases, head=head)


def _check_input(model: MlpModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=model.dtype)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"expected input with {model.input_dim} columns, got shape {X.shape}")
    return X


def _forward_cache(model: MlpModel, X: np.ndarray):
    acts = [X]
    h = X
    n_layers = len(model.weights)
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        # BLAS is slow for an inner dimension of 1; broadcast instead
        z = h * W[:, 0] + b if W.shape[1] == 1 else h @ W.T + b
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    pre = acts[-1]
    if model.head == "identity":
        out = pre
    elif model.head == "positive":
        out = softplus(pre) + pre.dtype.type(model.radius_floor)
    else:
        base = pre[:, :1]
        out = np.hstack([base, base + softplus(pre[:, 1:2])])
    return out, acts


def forward(model: MlpModel, X) -> np.ndarray:
    """Network output as float64, shape ``(n, k)``."""
    X = _check_input(model, X)
    return _forward_cache(model, X)[0].astype(np.float64, copy=False)


def backward(model: MlpModel, X, upstream_grad, acts=None) -> list[np.ndarray]:
    """Gradients of ``sum(upstream_grad * forward(model, X))``.

    Returned in the same order as :meth:`MlpModel.params`
    (W0, b0, W1, b1, ...).
    """
    X = _check_input(model, X)
    if acts is None:
        _, acts = _forward_cache(model, X)
    g = np.asarray(upstream_grad, dtype=model.dtype)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape != (X.shape[0], model.output_dim):
        raise ValueError(f"upstream grad shape {g.shape} != {(X.shape[0], model.output_dim)}")
    pre = acts[-1]
    if model.head == "positive":
        g = g * sigmoid(pre)
    elif model.head == "base_and_gap":
        g = np.hstack([g[:, :1] + g[:, 1:2], g[:, 1:2] * sigmoid(pre[:, 1:2])])

    n_layers = len(model.weights)
    grads: list[np.ndarray] = [None] * (2 * n_layers)
    for i in range(n_layers - 1, -1, -1):
        h_in = acts[i]
        grads[2 * i] = g.T @ h_in
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = (g @ model.weights[i]) * (acts[i] > 0)
    return grads


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 512
    max_epochs: int = 1000
    patience: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rng_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValueError("need 0 <= patience <= max_epochs")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**self.__dict__, **changes})


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        step = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= step * m / (np.sqrt(v) + self.eps)


# objective(out, aux) -> (mean loss, d mean loss / d out)
Objective = Callable[[np.ndarray, np.ndarray], "tuple[float, np.ndarray]"]


@dataclass
class TrainLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = np.inf

    @property
    def epochs_run(self) -> int:
        return len(self.val_loss)


def evaluate(model: MlpModel, objective: Objective, X, aux) -> float:
    return float(objective(forward(model, X), aux)[0])


def train(model: MlpModel, objective: Objective, X, aux, X_val, aux_val,
          config: TrainConfig, phase: str = "",
          val_objective: Objective | None = None) -> tuple[MlpModel, TrainLog]:
    """Minibatch Adam with early stopping on the validation objective.

    ``aux`` carries per-sample side information for the objective (target
    and, for the interval losses, the frozen partner network's output).
    ``val_objective`` overrides the early-stopping metric (default: the
    training objective). Returns a copy holding the parameters of the best
    validation epoch.
    """
    X = _check_input(model, X)
    X_val = _check_input(model, X_val)
    aux = np.asarray(aux, dtype=float)
    aux_val = np.asarray(aux_val, dtype=float)
    if len(X_val) == 0:
        raise ValueError("validation data is empty")
    n = len(X)
    val_objective = val_objective or objective

    model = model.copy()
    params = model.params()
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(config.rng_seed)
    log = TrainLog()
    best = [p.copy() for p in params]
    since_best = 0

    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            xb = X[idx]
            out, acts = _forward_cache(model, xb)
            loss, g_out = objective(out, aux[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss in {phase or 'training'} at epoch {epoch}, batch {b}",
                    epoch=epoch, batch=b, phase=phase)
            opt.step(backward(model, xb, g_out, acts))
            total += loss * len(idx)
        val = evaluate(model, val_objective, X_val, aux_val)
        if not np.isfinite(val):
            raise TrainingDivergedError(
                f"non-finite validation loss in {phase or 'training'} at epoch {epoch}",
                epoch=epoch, phase=phase)
        log.train_loss.append(total / n)
        log.val_loss.append(val)
        if val < log.best_val:
            log.best_val, log.best_epoch = val, epoch
            for dst, src in zip(best, params):
                dst[...] = src
            since_best = 0
        else:
            since_best += 1
        if since_best >= config.patience:
            break

    for dst, src in zip(params, best):
        dst[...] = src
    logger.debug("%s: %d epochs, best val %.6g at epoch %d", phase or "train",
                 log.epochs_run, log.best_val, log.best_epoch)
    return model, log


def save_model(model: MlpModel, path) -> None:
    doc = {
        "layer_dims": model.layer_dims,
        "head": model.head,
        "rng_seed": model.rng_seed,
        "radius_floor": model.radius_floor,
        "weights": [W.ravel().tolist() for W in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> MlpModel:
    doc = json.loads(Path(path).read_text())
    dims = doc["layer_dims"]
    weights = [np.asarray(w, dtype=float).reshape(o, i)
               for w, i, o in zip(doc["weights"], dims[:-1], dims[1:])]
    biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
    return MlpModel(dims, weights, biases, head=doc["head"], rng_seed=doc["rng_seed"],
                    radius_floor=doc["radius_floor"])
