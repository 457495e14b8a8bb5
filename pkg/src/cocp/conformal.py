"""Split-conformal calibration and the Split / CQR baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import losses
from .nn import RADIUS_FLOOR, MlpModel, TrainConfig, init_mlp, train

HIDDEN = (64, 64)


class CalibrationError(ValueError):
    pass


def conformal_quantile(scores, alpha: float) -> float:
    """The ``ceil((n+1)(1-alpha))``-th smallest score, or ``inf`` if that rank exceeds n."""
    scores = np.asarray(scores, dtype=float).ravel()
    n = scores.size
    if n == 0:
        raise ValueError("need at least one calibration score")
    if not np.all(np.isfinite(scores)):
        raise ValueError("calibration scores must be finite")
    k = math.ceil((n + 1) * (1 - alpha))
    if k > n:
        return math.inf
    return float(np.partition(scores, k - 1)[k - 1])


@dataclass
class IntervalModel:
    """Calibrated interval predictor.

    Symmetric mode: ``center(x) -/+ q_hat * radius(x)``.
    Two-sided mode (CQR): ``[lower(x) - q_hat, upper(x) + q_hat]``.
    """

    center_fn: Callable
    radius_fn: Callable | None
    q_hat: float
    method: str
    lower_fn: Callable | None = None
    upper_fn: Callable | None = None
    info: dict = field(default_factory=dict)

    @property
    def two_sided(self) -> bool:
        return self.lower_fn is not None

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.q_hat)

    def predict(self, X):
        return predict_interval(self, X)


def _vec(fn, X):
    return np.asarray(fn(X), dtype=float).reshape(len(X))


def predict_interval(model: IntervalModel, X):
    """``(lower, upper)`` arrays; an infinite ``q_hat`` gives infinite endpoints."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    q = model.q_hat
    if model.two_sided:
        lo, hi = _vec(model.lower_fn, X), _vec(model.upper_fn, X)
        if math.isinf(q):
            return np.full_like(lo, -np.inf), np.full_like(hi, np.inf)
        return lo - q, hi + q
    c = _vec(model.center_fn, X)
    if math.isinf(q):
        return np.full_like(c, -np.inf), np.full_like(c, np.inf)
    half = q * _vec(model.radius_fn, X)
    return c - half, c + half


def normalized_scores(center_fn, radius_fn, X, y, floor=RADIUS_FLOOR):
    c = _vec(center_fn, X)
    r = _vec(radius_fn, X)
    if np.any(r < floor * (1 - 1e-6)):
        raise CalibrationError(f"radius {r.min():.3g} below floor {floor} at a calibration point")
    return np.abs(np.asarray(y, dtype=float) - c) / r


def calibrate(center_fn, radius_fn, X_cal, y_cal, alpha: float, method: str = "",
              floor: float = RADIUS_FLOOR) -> IntervalModel:
    """Calibrate on scores ``|y - center(x)| / radius(x)``."""
    scores = normalized_scores(center_fn, radius_fn, X_cal, y_cal, floor)
    return IntervalModel(center_fn, radius_fn, conformal_quantile(scores, alpha), method)


def calibrate_two_sided(lower_fn, upper_fn, X_cal, y_cal, alpha: float, method: str = "cqr"):
    """CQR scores ``max(lo(x) - y, y - hi(x))``."""
    y = np.asarray(y_cal, dtype=float)
    scores = np.maximum(_vec(lower_fn, X_cal) - y, y - _vec(upper_fn, X_cal))
    q = conformal_quantile(scores, alpha)

    def center(X):
        return 0.5 * (_vec(lower_fn, X) + _vec(upper_fn, X))

    return IntervalModel(center, None, q, method, lower_fn=lower_fn, upper_fn=upper_fn)


def _column(model: MlpModel, j: int):
    def fn(X):
        return model(X)[:, j]
    return fn


def _const_one(X):
    return np.ones(len(X))


def fit_split_baseline(train_data, val_data, cal_data, alpha: float, config: TrainConfig,
                       seed: int = 0, dtype=np.float32) -> IntervalModel:
    """MSE regressor with absolute-residual scores (radius fixed to 1)."""
    X, y = train_data
    d = np.asarray(X).reshape(len(y), -1).shape[1]
    net = init_mlp([d, *HIDDEN, 1], head="identity", seed=seed, dtype=dtype)
    net, _ = train(net, losses.mse(), X, y[:, None], val_data[0], val_data[1][:, None],
                   config, phase="split/mse")
    model = calibrate(_column(net, 0), _const_one, cal_data[0], cal_data[1], alpha,
                      method="split", floor=0.0)
    model.info["nets"] = {"regressor": net}
    return model


def fit_cqr_baseline(train_data, val_data, cal_data, alpha: float, config: TrainConfig,
                     seed: int = 0, dtype=np.float32) -> IntervalModel:
    """Two-quantile network (base-and-gap head) conformalized with CQR scores."""
    X, y = train_data
    d = np.asarray(X).reshape(len(y), -1).shape[1]
    net = init_mlp([d, *HIDDEN, 2], head="base_and_gap", seed=seed, dtype=dtype)
    loss = losses.quantile_pair((alpha / 2, 1 - alpha / 2))
    net, _ = train(net, loss, X, y[:, None], val_data[0], val_data[1][:, None],
                   config, phase="cqr/pinball")
    model = calibrate_two_sided(_column(net, 0), _column(net, 1), cal_data[0], cal_data[1], alpha)
    model.info["nets"] = {"quantiles": net}
    return model
