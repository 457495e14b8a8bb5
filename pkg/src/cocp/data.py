"""Synthetic generation, split planning and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distributions import FAMILIES, make_family


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y, dtype=float)
        if len(self.X) != len(self.y):
            raise ValueError(f"X has {len(self.X)} rows but y has {len(self.y)} entries")

    def __len__(self):
        return len(self.y)

    @property
    def is_synthetic(self) -> bool:
        return self.provenance.get("source") == "synthetic"

    @property
    def family(self):
        if not self.is_synthetic:
            return None
        return make_family(self.provenance["kind"], self.provenance.get("sigma_ln", 0.6))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], list(self.feature_names), dict(self.provenance))


def generate_synthetic(kind: str, n: int = 20000, seed: int = 0, sigma_ln: float = 0.6) -> Dataset:
    """Draw ``X ~ Unif[-2, 2]`` and ``Y | X`` from the named family."""
    if kind not in FAMILIES:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, size=n)
    y = make_family(kind, sigma_ln).sample(x, rng)
    prov = {"source": "synthetic", "kind": kind, "seed": seed, "sigma_ln": sigma_ln}
    return Dataset(x[:, None], y, ["x"], prov)


@dataclass
class FoldPlan:
    center_idx: np.ndarray
    radius_idx: np.ndarray
    val_idx: np.ndarray


@dataclass
class SplitPlan:
    """Index partition of one repetition.

    ``pool_idx`` (train + val) is the cross-fitting pool for CoCP; the
    baselines train on ``train_idx`` and early-stop on ``val_idx``.
    """

    train_idx: np.ndarray
    val_idx: np.ndarray
    cal_idx: np.ndarray
    test_idx: np.ndarray
    folds: list[np.ndarray]
    fold_plans: list[FoldPlan]

    @property
    def pool_idx(self) -> np.ndarray:
        return np.concatenate(self.folds)


def make_split_plan(n: int, seed: int = 0, K: int = 5, test_frac: float = 0.2,
                    cal_frac: float = 0.2, val_frac: float = 1 / 6) -> SplitPlan:
    """60/20/20 train/cal/test with a 16.7% validation slice and K folds of the pool."""
    if K < 3:
        raise ValueError("need at least three folds (validation, radius and center roles)")
    n_test = int(round(test_frac * n))
    n_cal = int(round(cal_frac * n))
    n_pool = n - n_test - n_cal
    n_val = int(round(val_frac * n_pool))
    if min(n_test, n_cal, n_val, n_pool - n_val) < 1 or n_pool < 3 * K:
        raise ValueError(f"n={n} is too small for a split with K={K}")

    perm = np.random.default_rng(seed).permutation(n)
    test_idx = np.sort(perm[:n_test])
    cal_idx = np.sort(perm[n_test:n_test + n_cal])
    pool = perm[n_test + n_cal:]
    val_idx = np.sort(pool[:n_val])
    train_idx = np.sort(pool[n_val:])

    folds = [np.sort(f) for f in np.array_split(pool, K)]
    fold_plans = []
    for k in range(K):
        r = (k + 1) % K
        center = np.sort(np.concatenate([folds[j] for j in range(K) if j not in (k, r)]))
        fold_plans.append(FoldPlan(center_idx=center, radius_idx=folds[r], val_idx=folds[k]))
    return SplitPlan(train_idx, val_idx, cal_idx, test_idx, folds, fold_plans)


# --- CSV ingestion ----------------------------------------------------------

class CsvParseError(ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass
class Preprocessor:
    """Train-split statistics for features and target.

    Applied as: standardize features; optionally ``log1p`` the target; divide
    the target by ``target_scale`` (mean ``|y|`` on train after log1p).
    """

    feature_mean: np.ndarray
    feature_std: np.ndarray
    log1p_target: bool
    target_scale: float
    log1p_columns: tuple[int, ...] = ()

    STD_FLOOR = 1e-8

    @classmethod
    def fit(cls, X, y, log1p_target=False, log1p_columns=()) -> "Preprocessor":
        X = np.asarray(X, dtype=float).copy()
        y = np.asarray(y, dtype=float)
        for j in log1p_columns:
            X[:, j] = np.log1p(X[:, j])
        mean = X.mean(axis=0)
        std = np.maximum(X.std(axis=0), cls.STD_FLOOR)
        yt = np.log1p(y) if log1p_target else y
        c = float(np.mean(np.abs(yt)))
        if c <= 0:
            c = 1.0
        return cls(mean, std, bool(log1p_target), c, tuple(log1p_columns))

    def transform_X(self, X):
        X = np.asarray(X, dtype=float).copy()
        for j in self.log1p_columns:
            X[:, j] = np.log1p(X[:, j])
        return (X - self.feature_mean) / self.feature_std

    def transform_y(self, y):
        y = np.asarray(y, dtype=float)
        if self.log1p_target:
            y = np.log1p(y)
        return y / self.target_scale

    def inverse_y(self, y):
        y = np.asarray(y, dtype=float) * self.target_scale
        return np.expm1(y) if self.log1p_target else y


def read_csv(path, target_column: str):
    """Parse a headered numeric CSV into ``(X, y, feature_names)``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvParseError(f"{path} is empty") from None
        if target_column not in header:
            raise CsvParseError(f"target column {target_column!r} not in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvParseError(f"row {lineno} has {len(row)} cells, expected {len(header)}",
                                    row=lineno)
            vals = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvParseError(f"non-numeric value {cell!r} at row {lineno}, column {name!r}",
                                        row=lineno, column=name) from None
                if not math.isfinite(v):
                    raise CsvParseError(f"non-finite value at row {lineno}, column {name!r}",
                                        row=lineno, column=name)
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise CsvParseError(f"{path} has no data rows")
    data = np.asarray(rows, dtype=float)
    t = header.index(target_column)
    features = [h for i, h in enumerate(header) if i != t]
    return np.delete(data, t, axis=1), data[:, t], features


def ingest_csv(path, target_column: str, transform: dict | None = None,
               train_idx=None) -> tuple[Dataset, Preprocessor]:
    """Load a CSV and preprocess it with statistics fit on ``train_idx`` only.

    ``transform`` is the per-dataset manifest block, e.g.
    ``{"log1p_target": true, "log1p_columns": ["comments"]}``. Without
    ``train_idx`` all rows are treated as training rows.
    """
    transform = dict(transform or {})
    unknown = set(transform) - {"log1p_target", "log1p_columns"}
    if unknown:
        raise ValueError(f"unknown transform keys: {sorted(unknown)}")
    X, y, names = read_csv(path, target_column)
    cols = []
    for c in transform.get("log1p_columns", []):
        if c not in names:
            raise ValueError(f"log1p column {c!r} is not a feature")
        cols.append(names.index(c))
    if train_idx is None:
        train_idx = np.arange(len(y))
    pre = Preprocessor.fit(X[train_idx], y[train_idx],
                           log1p_target=transform.get("log1p_target", False), log1p_columns=cols)
    prov = {"source": "csv", "path": str(path), "target": target_column}
    return Dataset(pre.transform_X(X), pre.transform_y(y), names, prov), pre


def load_csv_raw(path, target_column: str) -> Dataset:
    X, y, names = read_csv(path, target_column)
    return Dataset(X, y, names, {"source": "csv", "path": str(path), "target": target_column})
