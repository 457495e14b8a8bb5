"""Cross-fitted center/radius training with alternating updates.

Per fold: warm-start the center with MSE, alternate ``T`` times between a
radius update (pinball on folded residuals) and a center update (soft
coverage with the radius frozen), then fine-tune the radius once more.
Fold models are averaged and the ensemble is conformally calibrated.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .conformal import HIDDEN, IntervalModel, calibrate
from .nn import MlpModel, TrainConfig, forward, init_mlp, save_model, train

logger = logging.getLogger(__name__)


@dataclass
class CocpConfig:
    """Settings for :func:`fit_cocp`.

    ``warmup`` is the budget of the MSE warm start and of any phase that
    starts from a fresh initialisation; ``phase`` is the budget of the
    warm-started alternation phases. ``center_val_metric`` picks the
    early-stopping metric of the center update (``"soft_coverage"`` or
    ``"mse"``).
    """

    alpha: float = 0.1
    K: int = 5
    T: int = 5
    beta: float = 0.01
    warmup: TrainConfig = field(default_factory=TrainConfig)
    phase: TrainConfig = field(default_factory=lambda: TrainConfig(max_epochs=200, patience=20))
    hidden: tuple = HIDDEN
    center_val_metric: str = "soft_coverage"
    dtype: str = "float32"

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if self.K < 3:
            raise ValueError("K must be >= 3 (validation, radius and center folds)")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.center_val_metric not in ("soft_coverage", "mse"):
            raise ValueError(f"unknown center_val_metric {self.center_val_metric!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


@dataclass
class FoldArtifacts:
    center: MlpModel
    radius: MlpModel
    logs: list = field(default_factory=list)


def _pred(net, X):
    return forward(net, X)[:, 0]


def _fold_seeds(seed, k):
    # init seeds for the two nets, then a base seed for batch orders
    states = np.random.SeedSequence([int(seed), int(k)]).generate_state(3)
    return [int(s) for s in states]


def train_fold(X, y, fold_plan, config: CocpConfig, seed: int = 0, fold: int = 0) -> FoldArtifacts:
    """Train one fold's center and radius networks.

    ``X``, ``y`` are the data that ``fold_plan``'s center, radius and
    validation index sets point into.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    ci, ri, vi = fold_plan.center_idx, fold_plan.radius_idx, fold_plan.val_idx
    for a, b in ((ci, ri), (ci, vi), (ri, vi)):
        if np.intersect1d(a, b).size:
            raise ValueError("fold plan index sets overlap")
    Xc, yc, Xr, yr, Xv, yv = X[ci], y[ci], X[ri], y[ri], X[vi], y[vi]
    dims = [X.shape[1], *config.hidden, 1]
    dtype = np.dtype(config.dtype)
    s_center, s_radius, s_order = _fold_seeds(seed, fold)
    logs = []

    center = init_mlp(dims, head="identity", seed=s_center, dtype=dtype)
    center, log = train(center, losses.mse(), Xc, yc[:, None], Xv, yv[:, None],
                        config.warmup.replace(rng_seed=s_order), phase="warmup")
    logs.append(("warmup", log))

    radius = init_mlp(dims, head="positive", seed=s_radius, dtype=dtype)
    radius_loss = losses.folded_radius(config.alpha)
    center_loss = losses.soft_coverage(config.beta)
    center_val = center_loss if config.center_val_metric == "soft_coverage" else losses.mse()

    def radius_update(radius, fresh, tag, step):
        budget = config.warmup if fresh else config.phase
        aux = np.column_stack([yr, _pred(center, Xr)])
        aux_v = np.column_stack([yv, _pred(center, Xv)])
        radius, log = train(radius, radius_loss, Xr, aux, Xv, aux_v,
                            budget.replace(rng_seed=s_order + step), phase=tag)
        logs.append((tag, log))
        return radius

    for t in range(config.T):
        radius = radius_update(radius, t == 0, f"radius[{t}]", 2 * t + 1)
        aux = np.column_stack([yc, _pred(radius, Xc)])
        aux_v = np.column_stack([yv, _pred(radius, Xv)])
        center, log = train(center, center_loss, Xc, aux, Xv, aux_v,
                            config.phase.replace(rng_seed=s_order + 2 * t + 2),
                            phase=f"center[{t}]", val_objective=center_val)
        logs.append((f"center[{t}]", log))

    radius = radius_update(radius, config.T == 0, "radius[final]", 2 * config.T + 1)
    return FoldArtifacts(center, radius, logs)


@dataclass
class Ensemble:
    """Pointwise mean of fold outputs (post-head, so radii stay above the floor)."""

    folds: list

    def __post_init__(self):
        if not self.folds:
            raise ValueError("need at least one fold")

    def center(self, X):
        return np.mean([_pred(f.center, X) for f in self.folds], axis=0)

    def radius(self, X):
        return np.mean([_pred(f.radius, X) for f in self.folds], axis=0)


def ensemble(fold_artifacts) -> tuple:
    """``(center_fn, radius_fn)`` averaging the fold networks."""
    ens = Ensemble(list(fold_artifacts))
    return ens.center, ens.radius


def fit_cocp(dataset, split_plan, config: CocpConfig, seed: int = 0,
             checkpoint_dir=None) -> IntervalModel:
    """Train all folds on the cross-fitting pool, ensemble and calibrate.

    ``model.info`` carries ``folds`` (the per-fold artifacts) and
    ``train_seconds``.
    """
    if len(split_plan.fold_plans) != config.K:
        raise ValueError(f"split plan has {len(split_plan.fold_plans)} folds, config expects {config.K}")
    pool = np.concatenate(split_plan.folds)
    if np.intersect1d(pool, split_plan.cal_idx).size:
        raise ValueError("calibration indices overlap the training pool")
    t0 = time.perf_counter()
    folds = [train_fold(dataset.X, dataset.y, fp, config, seed=seed, fold=k)
             for k, fp in enumerate(split_plan.fold_plans)]
    center_fn, radius_fn = ensemble(folds)
    cal = split_plan.cal_idx
    model = calibrate(center_fn, radius_fn, dataset.X[cal], dataset.y[cal], config.alpha,
                      method="cocp", floor=folds[0].radius.radius_floor)
    model.info["folds"] = folds
    model.info["train_seconds"] = time.perf_counter() - t0
    if checkpoint_dir is not None:
        dump_checkpoint(folds, checkpoint_dir)
    return model


def dump_checkpoint(folds, directory) -> None:
    """Write every fold's networks plus a small JSON index of phase logs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    for k, f in enumerate(folds):
        save_model(f.center, directory / f"fold{k}_center.json")
        save_model(f.radius, directory / f"fold{k}_radius.json")
        index.append({tag: {"epochs": log.epochs_run, "best_epoch": log.best_epoch,
                            "best_val": log.best_val} for tag, log in f.logs})
    (directory / "index.json").write_text(json.dumps(index, indent=1))
