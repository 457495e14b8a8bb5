"""Training objectives.

Each objective maps ``(out, aux)`` to ``(mean loss, d mean / d out)`` where
``out`` is the network output (n, k) and ``aux`` holds per-sample side data:

* ``mse``            aux[:, 0] = y
* ``pinball``        aux[:, 0] = y, one quantile level per output column
* ``folded_radius``  aux[:, 0] = y, aux[:, 1] = frozen center
* ``soft_coverage``  aux[:, 0] = y, aux[:, 1] = frozen radius
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import sigmoid


def pinball(u, tau):
    """Quantile (check) loss ``u * (tau - 1{u < 0})``."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def _pinball_grad(u, tau):
    # kink at u=0 takes the u<0 slope
    return np.where(u > 0, tau, tau - 1.0)


def folded_radius_loss(y, center, radius, alpha):
    """Pinball at level ``1 - alpha`` on ``|y - center| - radius``.

    Returns the mean loss and its gradient w.r.t. ``radius`` (per sample,
    already divided by n).
    """
    y, center, radius = (np.asarray(a, dtype=float) for a in (y, center, radius))
    tau = 1.0 - alpha
    u = np.abs(y - center) - radius
    n = u.size
    loss = float(np.mean(pinball(u, tau)))
    # d/dr rho(|y-c| - r) = -rho'(u)
    grad = -_pinball_grad(u, tau) / n
    return loss, grad


def soft_coverage_loss(y, center, radius, beta):
    """Mean of ``-sigmoid((radius - |y - center|) / beta)``.

    Gradient is w.r.t. ``center`` only; the radius is held fixed.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    y, center, radius = (np.asarray(a, dtype=float) for a in (y, center, radius))
    resid = y - center
    z = (radius - np.abs(resid)) / beta
    s = sigmoid(z)
    n = z.size
    loss = -float(np.mean(s))
    grad = -(s * (1.0 - s)) / beta * np.sign(resid) / n
    return loss, grad


@dataclass(frozen=True)
class LossSpec:
    kind: str
    tau: float | tuple[float, ...] | None = None
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind == "pinball":
            taus = np.atleast_1d(self.tau)
            if self.tau is None or np.any((taus <= 0) | (taus >= 1)):
                raise ValueError(f"pinball needs tau in (0, 1), got {self.tau}")
        elif self.kind == "folded_radius":
            if self.alpha is None or not 0 < self.alpha < 1:
                raise ValueError(f"folded_radius needs alpha in (0, 1), got {self.alpha}")
        elif self.kind == "soft_coverage":
            if self.beta is None or self.beta <= 0:
                raise ValueError(f"soft_coverage needs beta > 0, got {self.beta}")
        elif self.kind != "mse":
            raise ValueError(f"unknown loss kind {self.kind!r}")

    def __call__(self, out, aux):
        out = np.asarray(out, dtype=float)
        aux = np.asarray(aux, dtype=float)
        if aux.ndim == 1:
            aux = aux[:, None]
        y = aux[:, 0]
        if self.kind == "mse":
            r = out[:, 0] - y
            return float(np.mean(r * r)), (2.0 * r / r.size)[:, None]
        if self.kind == "pinball":
            taus = np.broadcast_to(np.atleast_1d(np.asarray(self.tau, dtype=float)), (out.shape[1],))
            u = y[:, None] - out
            n = out.shape[0]
            loss = float(np.sum(np.mean(pinball(u, taus), axis=0)))
            return loss, -_pinball_grad(u, taus) / n
        if self.kind == "folded_radius":
            loss, g = folded_radius_loss(y, aux[:, 1], out[:, 0], self.alpha)
            return loss, g[:, None]
        loss, g = soft_coverage_loss(y, out[:, 0], aux[:, 1], self.beta)
        return loss, g[:, None]


def mse() -> LossSpec:
    return LossSpec("mse")


def quantile_pair(taus: Sequence[float]) -> LossSpec:
    return LossSpec("pinball", tau=tuple(float(t) for t in taus))


def folded_radius(alpha: float) -> LossSpec:
    return LossSpec("folded_radius", alpha=alpha)


def soft_coverage(beta: float) -> LossSpec:
    return LossSpec("soft_coverage", beta=beta)
