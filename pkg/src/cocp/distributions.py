"""Conditional location-scale families used as ground truth.

``Y | X=x`` is ``theta(x) + s(x) * E`` where ``E`` is a fixed standardized
noise law (normal, mode-shifted lognormal, or exponential). Every
per-``x`` quantity reduces to the standardized law: densities scale by
``1/s(x)``, interval endpoints by ``s(x)`` plus the shift ``theta(x)``.

Scalar solves use bisection (tolerance 1e-10, at most 200 iterations),
vectorized over arrays of covariates where possible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, special

from .nn import sigmoid

FAMILIES = ("normal", "lognormal", "exponential")
BISECT_TOL = 1e-10
BISECT_MAX_ITER = 200
KERNEL_HALF_WIDTH = 40.0  # in units of beta; sigma' beyond this is < 1e-17


class SolverError(ArithmeticError):
    """A scalar solve failed to bracket or converge."""


def theta(x):
    return 0.5 * np.sin(1.5 * np.asarray(x, dtype=float))


def scale(x):
    x = np.asarray(x, dtype=float)
    return 0.15 + 0.25 * x * x


def bisect(fn, lo, hi, tol=BISECT_TOL, max_iter=BISECT_MAX_ITER):
    """Root of ``fn`` on ``[lo, hi]`` by bisection; ``fn(lo)`` and ``fn(hi)`` must differ in sign."""
    f_lo, f_hi = fn(lo), fn(hi)
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise SolverError(f"no sign change on [{lo}, {hi}]: f={f_lo:.3g}, {f_hi:.3g}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        if f_mid == 0 or hi - lo < tol:
            return mid
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    raise SolverError(f"bisection did not converge on [{lo}, {hi}] after {max_iter} iterations")


# --- standardized noise laws ------------------------------------------------

class _Noise:
    lower = -np.inf  # left end of support
    mode = 0.0

    def pdf(self, e):
        raise NotImplementedError

    def cdf(self, e):
        raise NotImplementedError

    def ppf(self, p):
        raise NotImplementedError

    def sample(self, rng, size):
        raise NotImplementedError

    @property
    def fmax(self):
        return float(self.pdf(np.array([self.mode]))[0])


class _NormalNoise(_Noise):
    def pdf(self, e):
        e = np.asarray(e, dtype=float)
        return np.exp(-0.5 * e * e) / math.sqrt(2 * math.pi)

    def cdf(self, e):
        return special.ndtr(e)

    def ppf(self, p):
        return special.ndtri(p)

    def sample(self, rng, size):
        return rng.standard_normal(size)


class _LogNormalNoise(_Noise):
    """``eps - exp(-sigma^2)`` with ``eps ~ LogNormal(0, sigma^2)``; mode at 0."""

    def __init__(self, sigma):
        self.sigma = sigma
        self.shift = math.exp(-sigma * sigma)
        self.lower = -self.shift

    def pdf(self, e):
        v = np.asarray(e, dtype=float) + self.shift
        out = np.zeros_like(v)
        pos = v > 0
        lv = np.log(v[pos])
        out[pos] = np.exp(-0.5 * (lv / self.sigma) ** 2) / (v[pos] * self.sigma * math.sqrt(2 * math.pi))
        return out

    def cdf(self, e):
        v = np.asarray(e, dtype=float) + self.shift
        out = np.zeros_like(v)
        pos = v > 0
        out[pos] = special.ndtr(np.log(v[pos]) / self.sigma)
        return out

    def ppf(self, p):
        return np.exp(self.sigma * special.ndtri(p)) - self.shift

    def sample(self, rng, size):
        return np.exp(self.sigma * rng.standard_normal(size)) - self.shift


class _ExponentialNoise(_Noise):
    lower = 0.0

    def pdf(self, e):
        e = np.asarray(e, dtype=float)
        return np.where(e >= 0, np.exp(-np.maximum(e, 0.0)), 0.0)

    def cdf(self, e):
        e = np.asarray(e, dtype=float)
        return np.where(e > 0, -np.expm1(-np.maximum(e, 0.0)), 0.0)

    def ppf(self, p):
        return -np.log1p(-np.asarray(p, dtype=float))

    def sample(self, rng, size):
        return rng.standard_exponential(size)


# --- HDI / folded radius in standardized units ------------------------------

def _mass(noise, c, r):
    return noise.cdf(c + r) - noise.cdf(c - r)


def _folded_radius_std(noise, c, alpha):
    """Vectorized smallest r with mass([c-r, c+r]) >= 1-alpha."""
    c = np.asarray(c, dtype=float)
    target = 1.0 - alpha
    lo = np.zeros_like(c)
    # |E - c| <= |E| + |c|, so the (1-alpha)-quantile of |E| plus |c| is feasible
    q_abs = max(abs(float(noise.ppf(1 - alpha / 2))), abs(float(noise.ppf(alpha / 2))))
    hi = np.abs(c) + q_abs + 1.0
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        ok = _mass(noise, c, mid) >= target
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
        if np.all(hi - lo < BISECT_TOL):
            break
    return hi


def _hdi_std(noise, alpha):
    """(lower, upper, pinned) of the (1-alpha)-HDI of a unimodal standardized law."""
    target = 1.0 - alpha
    if np.isfinite(noise.lower) and noise.pdf(np.array([noise.lower]))[0] > 0:
        # monotone decreasing density with mass at the support edge
        return noise.lower, float(noise.ppf(target)), True
    if isinstance(noise, _NormalNoise):
        z = float(special.ndtri(1 - alpha / 2))
        return -z, z, False

    fmax = noise.fmax
    left_edge = noise.lower if np.isfinite(noise.lower) else noise.mode - 50.0
    right_edge = noise.mode + 50.0

    def endpoints(level):
        lo = bisect(lambda e: noise.pdf(np.array([e]))[0] - level, left_edge, noise.mode)
        hi = bisect(lambda e: noise.pdf(np.array([e]))[0] - level, noise.mode, right_edge)
        return lo, hi

    def excess_mass(level):
        lo, hi = endpoints(level)
        return float(noise.cdf(np.array([hi]))[0] - noise.cdf(np.array([lo]))[0]) - target

    # mass of the level set decreases in the level
    level = bisect(excess_mass, 1e-6 * fmax, fmax * (1 - 1e-12), tol=1e-14)
    lo, hi = endpoints(level)
    return lo, hi, False


@dataclass(frozen=True)
class HdiResult:
    lower: np.ndarray
    upper: np.ndarray
    boundary_pinned: bool

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self):
        return 0.5 * (self.upper - self.lower)

    @property
    def length(self):
        return self.upper - self.lower


@dataclass(frozen=True)
class ConditionalFamily:
    """``Y = theta(X) + s(X) * E`` with ``E`` drawn from the named noise law."""

    kind: str
    sigma_ln: float = 0.6

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown family {self.kind!r}; choose from {FAMILIES}")

    @cached_property
    def noise(self) -> _Noise:
        if self.kind == "normal":
            return _NormalNoise()
        if self.kind == "lognormal":
            return _LogNormalNoise(self.sigma_ln)
        return _ExponentialNoise()

    def _std(self, x, y):
        return (np.asarray(y, dtype=float) - theta(x)) / scale(x)

    def support_lower(self, x):
        return theta(x) + scale(x) * self.noise.lower

    def pdf(self, x, y):
        return self.noise.pdf(self._std(x, y)) / scale(x)

    def cdf(self, x, y):
        return self.noise.cdf(self._std(x, y))

    def quantile(self, x, p):
        p = np.asarray(p, dtype=float)
        if np.any((p <= 0) | (p >= 1)):
            raise ValueError("quantile level must lie in (0, 1)")
        return theta(x) + scale(x) * self.noise.ppf(p)

    def sample(self, x, rng):
        x = np.asarray(x, dtype=float)
        return theta(x) + scale(x) * self.noise.sample(rng, x.shape)

    def fmax(self, x=None):
        """Density bound: at covariate ``x`` if given, else over ``x in [-2, 2]``."""
        s = scale(x) if x is not None else 0.15
        return self.noise.fmax / s

    def mass(self, x, center, radius):
        return self.cdf(x, np.asarray(center) + radius) - self.cdf(x, np.asarray(center) - radius)

    def oracle_hdi(self, x, alpha) -> HdiResult:
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        lo, hi, pinned = self._hdi_std(alpha)
        t, s = theta(x), scale(x)
        return HdiResult(t + s * lo, t + s * hi, pinned)

    def _hdi_std(self, alpha):
        cache = self.__dict__.setdefault("_hdi_cache", {})
        if alpha not in cache:
            cache[alpha] = _hdi_std(self.noise, alpha)
        return cache[alpha]

    def folded_radius(self, x, c, alpha):
        """Smallest ``r`` with ``P(|Y - c| <= r | X=x) >= 1 - alpha``."""
        s = scale(x)
        return s * _folded_radius_std(self.noise, (np.asarray(c, dtype=float) - theta(x)) / s, alpha)

    def push_pull_derivative(self, x, c, alpha):
        """d psi / dc from the endpoint densities of the folded boundary."""
        r = self.folded_radius(x, c, alpha)
        f_up = self.pdf(x, np.asarray(c) + r)
        f_lo = self.pdf(x, np.asarray(c) - r)
        denom = f_up + f_lo
        if np.any(denom <= 1e-12):
            raise SolverError(f"endpoint densities vanish (sum={np.min(denom):.3g})")
        return -(f_up - f_lo) / denom

    # --- logistic smoothing -------------------------------------------------

    def _breaks(self, x, lo, hi):
        a = float(self.support_lower(x))
        return [a] if lo < a < hi else None

    def smoothed_pdf(self, x, z, beta):
        """``(f_x * K_beta)(z)`` with ``K_beta(u) = sigma'(u / beta) / beta``."""
        if beta <= 0:
            raise ValueError("beta must be positive")
        x = float(x)
        w = KERNEL_HALF_WIDTH * beta
        lo = max(z - w, float(self.support_lower(x)))
        hi = z + w
        if hi <= lo:
            return 0.0

        def integrand(y):
            u = (z - y) / beta
            s = sigmoid(np.array([u]))[0]
            return self.pdf(x, y) * s * (1 - s) / beta

        val, _ = _quad(integrand, lo, hi, points=[z] if lo < z < hi else None)
        return val

    def soft_gradient(self, x, c, r, beta):
        """``d/dc E[sigmoid((r - |Y - c|) / beta) | X=x]`` by quadrature of the exact integrand."""
        if beta <= 0:
            raise ValueError("beta must be positive")
        x = float(x)
        a = float(self.support_lower(x))
        w = KERNEL_HALF_WIDTH * beta

        def integrand(y):
            zz = (r - abs(y - c)) / beta
            s = sigmoid(np.array([zz]))[0]
            return s * (1 - s) / beta * np.sign(y - c) * self.pdf(x, y)

        total = 0.0
        # right boundary c + r contributes on y > c, left boundary on y < c
        for lo, hi in ((max(c, c + r - w), c + r + w), (c - r - w, min(c, c - r + w))):
            lo = max(lo, a)
            if hi <= lo:
                continue
            pts = [p for p in (c - r, c + r, a) if lo < p < hi]
            total += _quad(integrand, lo, hi, points=pts or None)[0]
        return total

    def soft_stationarity(self, x, c, alpha, beta):
        """Soft-coverage center gradient at ``(c, psi(c))``."""
        r = float(self.folded_radius(x, c, alpha))
        return self.soft_gradient(x, c, r, beta)

    def beta_soft_oracle(self, x, alpha, beta, bracket=None):
        """Center/radius where the soft gradient vanishes on the folded best response."""
        hdi = self.oracle_hdi(x, alpha)
        c_star, r_star = float(hdi.center), float(hdi.radius)
        if self.kind == "normal":
            return float(theta(x)), float(self.folded_radius(x, theta(x), alpha))
        if bracket is None:
            width = max(0.5 * r_star, 3 * KERNEL_HALF_WIDTH * beta)
            bracket = (c_star - width, c_star + width)
        fn = lambda c: self.soft_stationarity(x, c, alpha, beta)  # noqa: E731
        lo, hi = bracket
        f_lo, f_hi = fn(lo), fn(hi)
        if np.sign(f_lo) == np.sign(f_hi):
            raise SolverError(
                f"soft stationarity has no sign change on [{lo:.6g}, {hi:.6g}] "
                f"(values {f_lo:.3g}, {f_hi:.3g}) for {self.kind} at x={x}, beta={beta}")
        c = bisect(fn, lo, hi, tol=1e-12)
        return c, float(self.folded_radius(x, c, alpha))


def _quad(fn, lo, hi, points=None):
    val, err = integrate.quad(fn, lo, hi, points=points, epsabs=1e-11, epsrel=1e-10, limit=200)
    if not np.isfinite(val):
        raise SolverError(f"quadrature failed on [{lo}, {hi}]")
    return val, err


def make_family(kind: str, sigma_ln: float = 0.6) -> ConditionalFamily:
    return ConditionalFamily(kind, sigma_ln)
