"""Evaluation measures for prediction intervals.

Marginal coverage and length, exact conditional-coverage error on synthetic
data (ConMAE), cluster-based calibration error (MSCE), worst-slab coverage
(WSC) and excess risk of a logistic coverage auditor (ERT).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import sigmoid

logger = logging.getLogger(__name__)


class UnsupportedOperationError(RuntimeError):
    pass


def covered(lower, upper, y) -> np.ndarray:
    lower, upper, y = (np.asarray(a, dtype=float) for a in (lower, upper, y))
    return (y >= lower) & (y <= upper)


def coverage_and_length(lower, upper, y) -> tuple[float, float]:
    """Empirical coverage and mean width; infinite intervals give ``inf`` length."""
    lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    if lower.shape != upper.shape or lower.shape != np.shape(y):
        raise ValueError("lower, upper and y must be aligned")
    z = covered(lower, upper, y)
    return float(z.mean()), float(np.mean(upper - lower))


def conmae(lower, upper, family, x, alpha: float) -> float:
    """Mean ``|F_x(u) - F_x(l) - (1 - alpha)|`` under the true conditional law."""
    if family is None:
        raise UnsupportedOperationError("conditional coverage needs a known conditional law")
    x = np.asarray(x, dtype=float).reshape(-1)
    mass = family.cdf(x, np.asarray(upper, dtype=float)) - family.cdf(x, np.asarray(lower, dtype=float))
    return float(np.mean(np.abs(mass - (1 - alpha))))


# --- MSCE ------------------------------------------------------------------

def standardize(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return (X - X.mean(axis=0)) / np.maximum(X.std(axis=0), 1e-12)


def _sq_dists(X, C):
    return np.maximum((X * X).sum(1)[:, None] - 2 * X @ C.T + (C * C).sum(1)[None, :], 0.0)


def _kmeans_once(X, K, rng, max_iter):
    n = len(X)
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = _sq_dists(X, centers[:1])[:, 0]
    for j in range(1, K):
        total = d2.sum()
        i = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[j] = X[i]
        d2 = np.minimum(d2, _sq_dists(X, centers[j:j + 1])[:, 0])

    labels = None
    for _ in range(max_iter):
        D = _sq_dists(X, centers)
        new = D.argmin(1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=K)
        for j in range(K):
            if counts[j]:
                centers[j] = X[labels == j].mean(0)
        for j in np.flatnonzero(counts == 0):
            # re-seed an empty cluster at the point farthest from its centroid
            far = int(D[np.arange(n), labels].argmax())
            centers[j] = X[far]
            labels[far] = j
            D[far] = 0.0
    inertia = float(_sq_dists(X, centers)[np.arange(n), labels].sum())
    return labels, centers, inertia


def kmeans(X, K: int, seed: int = 0, n_init: int = 50, max_iter: int = 300):
    """K-means++ with restarts; returns ``(labels, centers)`` of the best run."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not 1 <= K <= len(X):
        raise ValueError(f"need 1 <= K <= n, got K={K}, n={len(X)}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        labels, centers, inertia = _kmeans_once(X, K, rng, max_iter)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    return best[0], best[1]


def msce_from_labels(z, labels, alpha: float):
    """``sum_g (|G|/n) (coverage_g - (1-alpha))^2`` and the per-group coverages."""
    z = np.asarray(z, dtype=float)
    labels = np.asarray(labels)
    groups = np.unique(labels)
    cov = np.array([z[labels == g].mean() for g in groups])
    w = np.array([np.mean(labels == g) for g in groups])
    return float(np.sum(w * (cov - (1 - alpha)) ** 2)), cov


def msce(lower, upper, X, y, alpha: float, K: int = 10, seed: int = 0, n_init: int = 50):
    """Returns ``(msce, per-cluster coverages)`` with clusters from standardized ``X``."""
    labels, _ = kmeans(standardize(X), K, seed=seed, n_init=n_init)
    return msce_from_labels(covered(lower, upper, y), labels, alpha)


# --- WSC -------------------------------------------------------------------

def _worst_windows(cover_sorted, m):
    """Min-mean contiguous window of length >= m, per row.

    A window of length >= 2m splits into two windows of length >= m, one of
    which has mean no larger, so lengths in [m, 2m) suffice.
    """
    M, n = cover_sorted.shape
    cs = np.concatenate([np.zeros((M, 1)), np.cumsum(cover_sorted, axis=1)], axis=1)
    best = np.full(M, np.inf)
    best_a = np.zeros(M, dtype=int)
    best_b = np.full(M, n, dtype=int)
    for L in range(m, min(2 * m, n + 1)):
        means = (cs[:, L:] - cs[:, :-L]) / L
        a = means.argmin(1)
        val = means[np.arange(M), a]
        better = val < best
        best[better] = val[better]
        best_a[better] = a[better]
        best_b[better] = a[better] + L
    return best, best_a, best_b


def wsc(lower, upper, X, y, delta: float = 0.1, M: int = 1000, seed: int = 0,
        fit_frac: float = 0.25) -> float:
    """Worst-slab coverage over random directions.

    Slabs ``a <= v.x <= b`` holding at least a ``delta`` fraction of the fit
    split are scanned for every direction; the slab with the lowest fit
    coverage is then scored on the held-out eval split. Returns the smaller
    of that and the eval marginal coverage.
    """
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    z = covered(lower, upper, y).astype(float)
    n = len(z)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_fit = int(round(fit_frac * n))
    fit, ev = perm[:n_fit], perm[n_fit:]
    m = math.ceil(delta * n_fit - 1e-9)
    if n_fit < 1 or len(ev) < 1 or m > n_fit:
        raise ValueError(f"delta={delta} needs more data than available (n={n})")

    V = rng.normal(size=(M, X.shape[1]))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    proj = X[fit] @ V.T                        # (n_fit, M)
    order = np.argsort(proj, axis=0, kind="stable")
    z_sorted = z[fit][order].T                 # (M, n_fit)
    vals, a, b = _worst_windows(z_sorted, m)
    j = int(vals.argmin())
    p = np.sort(proj[:, j])
    lo = -np.inf if a[j] == 0 else p[a[j]]
    hi = np.inf if b[j] == n_fit else p[b[j] - 1]

    pe = X[ev] @ V[j]
    inside = (pe >= lo) & (pe <= hi)
    marginal = float(z[ev].mean())
    if not inside.any():
        return marginal
    return min(float(z[ev][inside].mean()), marginal)


# --- ERT -------------------------------------------------------------------

def logistic_loss_and_grad(w, b, X, z):
    """Mean log-loss of ``sigmoid(X w + b)`` against ``z``, with its gradient."""
    t = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, t) - z * t))
    r = (sigmoid(t) - z) / len(z)
    return loss, X.T @ r, float(r.sum())


@dataclass
class LogisticAuditor:
    w: np.ndarray
    b: float
    mean: np.ndarray
    std: np.ndarray
    converged: bool

    def predict(self, X):
        return sigmoid(((np.asarray(X, dtype=float) - self.mean) / self.std) @ self.w + self.b)


def fit_logistic(X, z, iters: int = 500, lr: float = 0.1, tol: float = 1e-3) -> LogisticAuditor:
    """Full-batch gradient descent on standardized inputs."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    mean, std = X.mean(0), np.maximum(X.std(0), 1e-12)
    Xs = (X - mean) / std
    z = np.asarray(z, dtype=float)
    # start the intercept at the base-rate logit
    p0 = float(np.clip(z.mean(), 1e-3, 1 - 1e-3))
    w, b = np.zeros(X.shape[1]), math.log(p0 / (1 - p0))
    for _ in range(iters):
        _, gw, gb = logistic_loss_and_grad(w, b, Xs, z)
        w -= lr * gw
        b -= lr * gb
    _, gw, gb = logistic_loss_and_grad(w, b, Xs, z)
    converged = bool(np.sqrt(gw @ gw + gb * gb) < tol)
    return LogisticAuditor(w, b, mean, std, converged)


@dataclass
class ErtResult:
    value: float
    converged: bool


def _risk(h, z, loss):
    d = h - z
    return float(np.mean(np.abs(d) if loss == "l1" else d * d))


def ert(lower, upper, X, y, alpha: float, loss: str = "l2", folds: int = 5, seed: int = 0,
        auditor: str = "logistic") -> ErtResult:
    """Excess risk of a cross-fitted coverage auditor over the constant ``1 - alpha``.

    ``converged`` is False when gradient descent stopped short of a
    stationary point in any fold; the value is still reported.
    """
    if loss not in ("l1", "l2"):
        raise ValueError(f"loss must be 'l1' or 'l2', got {loss!r}")
    if auditor not in ("logistic", "constant"):
        raise ValueError(f"unknown auditor {auditor!r}")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    z = covered(lower, upper, y).astype(float)
    n = len(z)
    if n < 10 * folds:
        raise ValueError(f"need at least {10 * folds} test points for {folds} folds")
    h = np.full(n, 1 - alpha)
    ok = True
    if auditor == "logistic":
        parts = np.array_split(np.random.default_rng(seed).permutation(n), folds)
        for k, hold in enumerate(parts):
            tr = np.concatenate([p for j, p in enumerate(parts) if j != k])
            aud = fit_logistic(X[tr], z[tr])
            ok &= aud.converged
            h[hold] = aud.predict(X[hold])
    if not ok:
        logger.debug("logistic auditor did not converge in every fold")
    return ErtResult(_risk(np.full(n, 1 - alpha), z, loss) - _risk(h, z, loss), bool(ok))


# --- report ----------------------------------------------------------------

@dataclass
class MetricsReport:
    coverage: float
    mean_length: float
    conmae: float | None
    msce: float
    wsc: float
    ert_l1: float
    ert_l2: float
    cluster_coverage: list = field(default_factory=list)
    n_clusters: int = 10
    delta: float = 0.1
    auditor_folds: int = 5
    auditor_converged: bool = True

    def to_row(self) -> dict:
        return {"coverage": self.coverage, "length": self.mean_length, "conmae": self.conmae,
                "msce": self.msce, "wsc": self.wsc, "ert_l1": self.ert_l1, "ert_l2": self.ert_l2}

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_intervals(lower, upper, X, y, alpha: float, family=None, seed: int = 0,
                       n_clusters: int = 10, delta: float = 0.1, wsc_directions: int = 1000,
                       auditor_folds: int = 5) -> MetricsReport:
    """Full metric suite; ``family`` enables ConMAE (synthetic data only)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    s_msce, s_wsc, s_ert = (int(s) for s in np.random.SeedSequence(seed).generate_state(3))
    cov, length = coverage_and_length(lower, upper, y)
    cm = conmae(lower, upper, family, X[:, 0], alpha) if family is not None else None
    ms, per = msce(lower, upper, X, y, alpha, K=n_clusters, seed=s_msce)
    w = wsc(lower, upper, X, y, delta=delta, M=wsc_directions, seed=s_wsc)
    e1 = ert(lower, upper, X, y, alpha, "l1", auditor_folds, s_ert)
    e2 = ert(lower, upper, X, y, alpha, "l2", auditor_folds, s_ert)
    return MetricsReport(cov, length, cm, ms, w, e1.value, e2.value, per.tolist(),
                         n_clusters, delta, auditor_folds, e1.converged and e2.converged)
