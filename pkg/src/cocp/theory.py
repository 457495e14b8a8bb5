"""Numerical checks of the analytic properties behind the method.

Each check returns a :class:`TheoryCheckResult`. Two kinds exist:
``"abs_diff"`` passes when ``|value - reference| <= tolerance`` and
``"upper_bound"`` passes when ``value <= reference + tolerance``.
:func:`registry` lists the default suite, one result per entry.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .distributions import FAMILIES, ConditionalFamily, make_family, theta
from .nn import sigmoid


@dataclass
class TheoryCheckResult:
    name: str
    value: float
    reference: float
    tolerance: float
    kind: str = "abs_diff"
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("abs_diff", "upper_bound"):
            raise ValueError(f"unknown check kind {self.kind!r}")
        self.value = float(self.value)
        self.reference = float(self.reference)

    @property
    def passed(self) -> bool:
        if not math.isfinite(self.value):
            return False
        if self.kind == "abs_diff":
            return abs(self.value - self.reference) <= self.tolerance
        return self.value <= self.reference + self.tolerance

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _family(family) -> ConditionalFamily:
    return family if isinstance(family, ConditionalFamily) else make_family(family)


# --- folded radius ----------------------------------------------------------

def check_push_pull(family, x: float, cs=None, alpha: float = 0.1, h: float = 1e-4,
                    tol: float = 1e-4) -> TheoryCheckResult:
    """Analytic d psi / dc against a central finite difference, worst case over ``cs``."""
    fam = _family(family)
    if cs is None:
        c0 = float(fam.oracle_hdi(x, alpha).center)
        cs = np.linspace(c0 - 0.5, c0 + 0.5, 11)
    cs = np.asarray(cs, dtype=float)
    fd = (fam.folded_radius(x, cs + h, alpha) - fam.folded_radius(x, cs - h, alpha)) / (2 * h)
    formula = fam.push_pull_derivative(x, cs, alpha)
    gap = np.abs(fd - formula)
    return TheoryCheckResult(f"push_pull/{fam.kind}", gap.max(), 0.0, tol,
                             inputs={"x": x, "alpha": alpha, "n_points": len(cs),
                                     "worst_c": float(cs[gap.argmax()])})


def _sample_x(rng, n):
    return rng.choice(np.array([-1.5, 0.0, 1.2]), size=n)


def check_psi_lipschitz(family, n: int = 200, alpha: float = 0.1, seed: int = 0) -> TheoryCheckResult:
    """``|psi(c) - psi(c')| - |c - c'|`` never exceeds zero."""
    fam = _family(family)
    rng = np.random.default_rng(seed)
    xs = _sample_x(rng, n)
    c1, c2 = rng.uniform(-5, 5, n), rng.uniform(-5, 5, n)
    excess = [abs(float(fam.folded_radius(x, a, alpha)) - float(fam.folded_radius(x, b, alpha))) - abs(a - b)
              for x, a, b in zip(xs, c1, c2)]
    return TheoryCheckResult(f"psi_lipschitz/{fam.kind}", max(excess), 0.0, 1e-9, "upper_bound",
                             inputs={"n": n, "seed": seed})


def check_coverage_lipschitz(family, n: int = 200, seed: int = 0) -> TheoryCheckResult:
    """``|mass(c, r1) - mass(c, r2)| - 2 f_max |r1 - r2|`` never exceeds zero."""
    fam = _family(family)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-2, 2, n)
    c = theta(xs) + rng.uniform(-1, 1, n)
    r1, r2 = rng.uniform(0, 2, n), rng.uniform(0, 2, n)
    lhs = np.abs(fam.mass(xs, c, r1) - fam.mass(xs, c, r2))
    excess = lhs - 2 * fam.fmax() * np.abs(r1 - r2)
    return TheoryCheckResult(f"coverage_lipschitz/{fam.kind}", excess.max(), 0.0, 1e-9, "upper_bound",
                             inputs={"n": n, "seed": seed, "fmax": fam.fmax()})


def check_radius_lower_bound(family, alpha: float = 0.1, n: int = 200, seed: int = 0) -> TheoryCheckResult:
    """``psi(c) >= (1 - alpha) / (2 f_max)``; reports the worst shortfall."""
    fam = _family(family)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-2, 2, n)
    c = theta(xs) + rng.uniform(-2, 2, n)
    floor = (1 - alpha) / (2 * fam.fmax())
    shortfall = floor - fam.folded_radius(xs, c, alpha)
    return TheoryCheckResult(f"radius_lower_bound/{fam.kind}", shortfall.max(), 0.0, 0.0, "upper_bound",
                             inputs={"n": n, "bound": floor})


def check_hdi_optimality(family, x: float = 0.3, alpha: float = 0.1, n_grid: int = 401) -> TheoryCheckResult:
    """No center does better than the oracle: ``rad* - min_c psi(c)`` is at most ~0."""
    fam = _family(family)
    hdi = fam.oracle_hdi(x, alpha)
    grid = np.linspace(float(hdi.center) - 1.0, float(hdi.center) + 1.0, n_grid)
    best = float(np.min(fam.folded_radius(x, grid, alpha)))
    at_oracle = float(fam.folded_radius(x, hdi.center, alpha))
    gap = max(float(hdi.radius) - best, abs(at_oracle - float(hdi.radius)))
    return TheoryCheckResult(f"hdi_optimality/{fam.kind}", gap, 0.0, 1e-8, "upper_bound",
                             inputs={"x": x, "alpha": alpha})


def check_hdi_endpoint_balance(family, xs=None, alpha: float = 0.1) -> TheoryCheckResult:
    """Equal density at both HDI endpoints (relative to the peak density).

    Boundary-pinned families are exempt and pass with value 0.
    """
    fam = _family(family)
    xs = np.linspace(-2, 2, 21) if xs is None else np.asarray(xs, dtype=float)
    hdi = fam.oracle_hdi(xs, alpha)
    if hdi.boundary_pinned:
        return TheoryCheckResult(f"hdi_balance/{fam.kind}", 0.0, 0.0, 1e-6,
                                 inputs={"boundary_pinned": True})
    gap = np.abs(fam.pdf(xs, hdi.lower) - fam.pdf(xs, hdi.upper)) / fam.fmax(xs)
    return TheoryCheckResult(f"hdi_balance/{fam.kind}", gap.max(), 0.0, 1e-6,
                             inputs={"boundary_pinned": False, "n_points": len(xs)})


# --- smoothing --------------------------------------------------------------

def check_soft_gradient_lemma(family, x: float = 0.0, n: int = 100, seed: int = 0,
                              slack: float = 1e-6) -> TheoryCheckResult:
    """Soft gradient minus smoothed endpoint imbalance stays within ``2 f_max (1 - sigmoid(r/beta))``.

    Reports the largest ``discrepancy - bound`` over random ``(c, r, beta)``.
    """
    fam = _family(family)
    rng = np.random.default_rng(seed)
    hdi = fam.oracle_hdi(x, 0.1)
    c0, r0 = float(hdi.center), float(hdi.radius)
    fmax = fam.fmax(x)
    worst = -np.inf
    for _ in range(n):
        c = c0 + rng.uniform(-1, 1) * r0
        r = r0 * rng.uniform(0.25, 2.0)
        beta = float(np.exp(rng.uniform(np.log(1e-3), np.log(0.1))))
        grad = fam.soft_gradient(x, c, r, beta)
        imbalance = fam.smoothed_pdf(x, c + r, beta) - fam.smoothed_pdf(x, c - r, beta)
        bound = 2 * fmax * (1 - sigmoid(np.array([r / beta]))[0])
        worst = max(worst, abs(grad - imbalance) - bound)
    return TheoryCheckResult(f"soft_gradient_lemma/{fam.kind}", worst, 0.0, slack, "upper_bound",
                             inputs={"x": x, "n": n, "seed": seed})


def check_smoothing_rate(family="normal", x: float = 0.0, betas=(0.02, 0.01),
                         window=(0.15, 0.45)) -> TheoryCheckResult:
    """Sup-norm smoothing error shrinks like ``beta^2``: halving ratio inside ``window``."""
    fam = _family(family)
    hdi = fam.oracle_hdi(x, 0.1)
    grid = np.linspace(float(hdi.lower) - 0.1, float(hdi.upper) + 0.1, 41)
    errs = []
    for b in betas:
        fb = np.array([fam.smoothed_pdf(x, z, b) for z in grid])
        errs.append(float(np.max(np.abs(fb - fam.pdf(x, grid)))))
    ratio = errs[1] / errs[0]
    mid, half = 0.5 * (window[0] + window[1]), 0.5 * (window[1] - window[0])
    return TheoryCheckResult(f"smoothing_rate/{fam.kind}", ratio, mid, half,
                             inputs={"x": x, "betas": list(betas), "sup_errors": errs})


def check_boundary_scaling(family="exponential", x: float = 0.0, beta: float = 1e-3,
                           rel_tol: float = 0.02) -> TheoryCheckResult:
    """At the support edge the smoothed density is half the one-sided limit."""
    fam = _family(family)
    a = float(fam.support_lower(x))
    edge = float(fam.pdf(x, a + 1e-12))
    value = fam.smoothed_pdf(x, a, beta)
    return TheoryCheckResult(f"boundary_scaling/{fam.kind}", value, 0.5 * edge, rel_tol * 0.5 * edge,
                             inputs={"x": x, "beta": beta})


# --- beta-soft oracle -------------------------------------------------------

BETA_SEQUENCE = (0.08, 0.04, 0.02, 0.01)


@lru_cache(maxsize=64)
def _beta_errors(kind: str, x: float, alpha: float, betas: tuple) -> tuple:
    fam = make_family(kind)
    c_star = float(fam.oracle_hdi(x, alpha).center)
    return tuple(abs(_beta_center(kind, x, alpha, b) - c_star) for b in betas)


@lru_cache(maxsize=1024)
def _beta_center(kind: str, x: float, alpha: float, beta: float) -> float:
    return make_family(kind).beta_soft_oracle(x, alpha, beta)[0]


def check_beta_monotone(family, x: float = 0.0, alpha: float = 0.1,
                        betas=BETA_SEQUENCE) -> TheoryCheckResult:
    """Largest increase of ``|ctr_beta - ctr*|`` along the decreasing beta sequence."""
    fam = _family(family)
    errs = _beta_errors(fam.kind, float(x), alpha, tuple(betas))
    worst = max(b - a for a, b in zip(errs[:-1], errs[1:]))
    return TheoryCheckResult(f"beta_monotone/{fam.kind}", worst, 0.0, 0.0, "upper_bound",
                             inputs={"x": x, "betas": list(betas), "errors": list(errs)})


def check_beta_ratio(family, x: float = 0.0, alpha: float = 0.1, betas=BETA_SEQUENCE,
                     window=(0.15, 0.45)) -> TheoryCheckResult:
    """Last halving ratio ``err(beta/2) / err(beta)`` inside ``window`` (second-order bias)."""
    fam = _family(family)
    errs = _beta_errors(fam.kind, float(x), alpha, tuple(betas))
    ratio = errs[-1] / errs[-2]
    mid, half = 0.5 * (window[0] + window[1]), 0.5 * (window[1] - window[0])
    return TheoryCheckResult(f"beta_ratio/{fam.kind}", ratio, mid, half,
                             inputs={"x": x, "betas": list(betas), "errors": list(errs)})


def check_beta_symmetric(family="normal", x: float = 0.0, alpha: float = 0.1,
                         betas=BETA_SEQUENCE) -> TheoryCheckResult:
    fam = _family(family)
    errs = _beta_errors(fam.kind, float(x), alpha, tuple(betas))
    return TheoryCheckResult(f"beta_exact/{fam.kind}", max(errs), 0.0, 1e-8, "upper_bound",
                             inputs={"x": x, "errors": list(errs)})


def boundary_constant(alpha: float) -> float:
    """Limit of ``(lower_beta - a) / beta`` for the exponential family."""
    return math.log(alpha / (1 - alpha))


def check_beta_boundary(family="exponential", x: float = 0.0, alpha: float = 0.1,
                        beta: float = 1e-3, rel_tol: float = 0.05) -> TheoryCheckResult:
    """Boundary-pinned case: ``(lower_beta - a) / beta`` near ``log(alpha / (1 - alpha))``."""
    fam = _family(family)
    c, r = fam.beta_soft_oracle(x, alpha, beta)
    a = float(fam.support_lower(x))
    value = (c - r - a) / beta
    kappa = boundary_constant(alpha)
    return TheoryCheckResult(f"beta_boundary/{fam.kind}", value, kappa, rel_tol * abs(kappa),
                             inputs={"x": x, "alpha": alpha, "beta": beta})


def check_beta_consistency(family, x: float = 0.0, alpha: float = 0.1,
                           betas=BETA_SEQUENCE) -> list:
    """All beta-oracle checks that apply to ``family``."""
    fam = _family(family)
    out = [check_beta_monotone(fam, x, alpha, betas)]
    if fam.kind == "normal":
        out.append(check_beta_symmetric(fam, x, alpha, betas))
    elif fam.kind == "exponential":
        out.append(check_beta_boundary(fam, x, alpha))
    else:
        out.append(check_beta_ratio(fam, x, alpha, betas))
    return out


# --- length decomposition ---------------------------------------------------

@dataclass
class LengthTerms:
    gap: np.ndarray
    calibration: np.ndarray
    radius: np.ndarray
    center: np.ndarray
    smoothing: np.ndarray

    @property
    def bound(self):
        return self.calibration + self.radius + self.center + self.smoothing


def length_terms(center_fn, radius_fn, q_hat, family, xs, alpha: float = 0.1,
                 beta: float = 0.01) -> LengthTerms:
    """Pointwise gap to the oracle length and the four terms that bound it."""
    fam = _family(family)
    xs = np.asarray(xs, dtype=float)
    X = xs[:, None]
    c = np.asarray(center_fn(X), dtype=float).reshape(-1)
    r = np.asarray(radius_fn(X), dtype=float).reshape(-1)
    hdi = fam.oracle_hdi(xs, alpha)
    c_beta = np.array([_beta_center(fam.kind, float(x), alpha, beta) for x in xs])
    psi = fam.folded_radius(xs, c, alpha)
    return LengthTerms(
        gap=np.abs(2 * q_hat * r - hdi.length),
        calibration=2 * abs(q_hat - 1) * r,
        radius=2 * np.abs(r - psi),
        center=2 * np.abs(c - c_beta),
        smoothing=2 * np.abs(c_beta - hdi.center),
    )


def check_length_decomposition(model, family, xs=None, alpha: float = 0.1, beta: float = 0.01,
                               name: str | None = None) -> TheoryCheckResult:
    """Length gap never exceeds the sum of its four terms (worst excess over ``xs``).

    ``model`` needs ``center_fn``, ``radius_fn`` and ``q_hat`` (an
    :class:`~cocp.conformal.IntervalModel` in symmetric mode).
    """
    fam = _family(family)
    xs = np.linspace(-2, 2, 21) if xs is None else np.asarray(xs, dtype=float)
    t = length_terms(model.center_fn, model.radius_fn, model.q_hat, fam, xs, alpha, beta)
    excess = t.gap - t.bound
    return TheoryCheckResult(name or f"length_decomposition/{fam.kind}", excess.max(), 0.0, 1e-8,
                             "upper_bound", inputs={"n_points": len(xs), "q_hat": model.q_hat,
                                                    "max_gap": float(t.gap.max())})


@dataclass
class _PlainModel:
    center_fn: object
    radius_fn: object
    q_hat: float


def oracle_model(family, alpha: float = 0.1, center_shift: float = 0.0) -> _PlainModel:
    """The oracle center and best-response radius, optionally with a shifted center."""
    fam = _family(family)

    def center(X):
        x = np.asarray(X, dtype=float).reshape(len(X), -1)[:, 0]
        return fam.oracle_hdi(x, alpha).center + center_shift

    def radius(X):
        x = np.asarray(X, dtype=float).reshape(len(X), -1)[:, 0]
        return fam.folded_radius(x, center(X), alpha)

    return _PlainModel(center, radius, 1.0)


def trained_model(kind: str = "lognormal", n: int = 5000, seed: int = 0, alpha: float = 0.1):
    """A small CoCP fit used by the default suite."""
    from .data import generate_synthetic, make_split_plan
    from .trainer import CocpConfig, fit_cocp

    ds = generate_synthetic(kind, n=n, seed=seed)
    return fit_cocp(ds, make_split_plan(n, seed=seed), CocpConfig(alpha=alpha), seed=seed)


# --- suite ------------------------------------------------------------------

def registry(families=FAMILIES, seed: int = 0, include_trained: bool = True) -> list:
    """``(name, thunk)`` pairs; each thunk returns one :class:`TheoryCheckResult`."""
    checks = []
    for kind in families:
        fam = make_family(kind)
        checks += [
            (f"psi_lipschitz/{kind}", lambda f=fam: check_psi_lipschitz(f, seed=seed)),
            (f"coverage_lipschitz/{kind}", lambda f=fam: check_coverage_lipschitz(f, seed=seed)),
            (f"radius_lower_bound/{kind}", lambda f=fam: check_radius_lower_bound(f, seed=seed)),
            (f"hdi_optimality/{kind}", lambda f=fam: check_hdi_optimality(f)),
            (f"hdi_balance/{kind}", lambda f=fam: check_hdi_endpoint_balance(f)),
            (f"soft_gradient_lemma/{kind}", lambda f=fam: check_soft_gradient_lemma(f, seed=seed)),
            (f"beta_monotone/{kind}", lambda f=fam: check_beta_monotone(f)),
        ]
        if kind == "normal":
            checks += [
                ("push_pull/normal", lambda f=fam: check_push_pull(f, 0.0)),
                ("beta_exact/normal", lambda f=fam: check_beta_symmetric(f)),
                ("smoothing_rate/normal", lambda f=fam: check_smoothing_rate(f)),
            ]
        elif kind == "lognormal":
            checks += [
                ("push_pull/lognormal", lambda f=fam: check_push_pull(f, 0.0)),
                ("beta_ratio/lognormal", lambda f=fam: check_beta_ratio(f)),
                ("length_decomposition/lognormal_oracle",
                 lambda f=fam: check_length_decomposition(oracle_model(f), f,
                                                          name="length_decomposition/lognormal_oracle")),
                ("length_decomposition/lognormal_shifted",
                 lambda f=fam: check_length_decomposition(oracle_model(f, center_shift=0.1), f,
                                                          name="length_decomposition/lognormal_shifted")),
            ]
            if include_trained:
                checks.append(("length_decomposition/lognormal_trained",
                               lambda f=fam: check_length_decomposition(
                                   trained_model("lognormal", seed=seed), f,
                                   name="length_decomposition/lognormal_trained")))
        else:
            checks += [
                ("beta_boundary/exponential", lambda f=fam: check_beta_boundary(f)),
                ("boundary_scaling/exponential", lambda f=fam: check_boundary_scaling(f)),
            ]
    return checks


def run_suite(families=FAMILIES, seed: int = 0, include_trained: bool = True) -> list:
    results = []
    for name, thunk in registry(families, seed, include_trained):
        res = thunk()
        res.name = name
        results.append(res)
    return results
