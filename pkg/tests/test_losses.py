import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cocp import losses
from cocp.losses import folded_radius_loss, pinball, soft_coverage_loss


def test_pinball_values():
    assert pinball(1.0, 0.9) == pytest.approx(0.9)
    assert pinball(-1.0, 0.9) == pytest.approx(0.1)
    assert pinball(0.0, 0.3) == 0.0


@given(u1=st.floats(-1e3, 1e3), u2=st.floats(-1e3, 1e3), lam=st.floats(0, 1), tau=st.floats(0.01, 0.99))
def test_pinball_convex(u1, u2, lam, tau):
    lhs = pinball(lam * u1 + (1 - lam) * u2, tau)
    rhs = lam * pinball(u1, tau) + (1 - lam) * pinball(u2, tau)
    assert lhs <= rhs + 1e-12 * (1 + abs(u1) + abs(u2))


@given(u=st.floats(-1e6, 1e6), tau=st.floats(0.01, 0.99))
def test_pinball_nonnegative(u, tau):
    assert pinball(u, tau) >= 0


def test_folded_radius_zero_at_exact_residual():
    rng = np.random.default_rng(0)
    y, c = rng.normal(size=20), rng.normal(size=20)
    loss, _ = folded_radius_loss(y, c, np.abs(y - c), 0.1)
    assert loss == 0.0


def test_folded_radius_single_sample():
    loss, grad = folded_radius_loss([2.0], [0.0], [1.0], 0.1)
    assert loss == pytest.approx(0.9)
    assert grad[0] == pytest.approx(-0.9)


def test_folded_radius_subgradient_signs_and_tie():
    y = np.array([3.0, 0.5, 1.0])
    c = np.zeros(3)
    r = np.ones(3)
    _, g = folded_radius_loss(y, c, r, 0.1)
    np.testing.assert_allclose(g * 3, [-0.9, 0.1, 0.1])


def test_constant_radius_minimizer_is_empirical_quantile():
    rng = np.random.default_rng(1)
    folded = np.abs(rng.standard_normal(10_000))
    grid = np.linspace(1.55, 1.75, 4001)
    vals = [np.mean(pinball(folded - r, 0.9)) for r in grid]
    r_hat = grid[int(np.argmin(vals))]
    s = np.sort(folded)
    k = int(np.ceil(0.9 * len(s)))
    gap = max(s[k] - s[k - 2], grid[1] - grid[0])
    assert abs(r_hat - s[k - 1]) <= gap


def test_soft_coverage_at_boundary_is_minus_half():
    loss, _ = soft_coverage_loss([1.0], [0.0], [1.0], 0.3)
    assert loss == pytest.approx(-0.5)


def test_soft_coverage_saturates_inside():
    loss, _ = soft_coverage_loss([0.0], [0.01], [1.0], 1e-3)
    assert loss == pytest.approx(-1.0, abs=1e-12)


def test_soft_coverage_rejects_nonpositive_beta():
    with pytest.raises(ValueError):
        soft_coverage_loss([0.0], [0.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        losses.soft_coverage(-1.0)


def test_soft_coverage_zero_gradient_at_exact_hit():
    _, g = soft_coverage_loss([0.5], [0.5], [1.0], 0.1)
    assert g[0] == 0.0


def test_soft_coverage_gradient_is_local():
    _, g = soft_coverage_loss([2.0], [0.0], [1.0], 0.01)
    assert abs(g[0]) < 1e-8


@settings(max_examples=100)
@given(y=st.floats(-3, 3), c=st.floats(-3, 3), r=st.floats(0.05, 3), beta=st.floats(0.01, 1))
def test_soft_coverage_per_sample_in_open_interval(y, c, r, beta):
    loss, _ = soft_coverage_loss([y], [c], [r], beta)
    assert -1.0 <= loss < 0.0


def test_soft_coverage_gradient_finite_differences():
    rng = np.random.default_rng(3)
    h = 1e-6
    checked = 0
    for _ in range(100):
        y, c = rng.normal(size=2)
        r = rng.uniform(0.05, 2.0)
        beta = rng.uniform(0.01, 1.0)
        if abs(y - c) < 1e-3:
            continue
        _, g = soft_coverage_loss([y], [c], [r], beta)
        fd = (soft_coverage_loss([y], [c + h], [r], beta)[0] - soft_coverage_loss([y], [c - h], [r], beta)[0]) / (2 * h)
        assert abs(g[0] - fd) <= 1e-5 * abs(fd) + 1e-9
        checked += 1
    assert checked > 90


def test_mse_spec_gradient():
    out = np.array([[1.0], [2.0]])
    loss, g = losses.mse()(out, np.array([0.0, 0.0]))
    assert loss == pytest.approx(2.5)
    np.testing.assert_allclose(g, [[1.0], [2.0]])


def test_quantile_pair_spec_matches_pinball():
    rng = np.random.default_rng(0)
    out = rng.normal(size=(50, 2))
    y = rng.normal(size=50)
    loss, g = losses.quantile_pair((0.05, 0.95))(out, y)
    expect = np.mean(pinball(y - out[:, 0], 0.05)) + np.mean(pinball(y - out[:, 1], 0.95))
    assert loss == pytest.approx(expect)
    assert g.shape == (50, 2)


def test_loss_spec_parameter_ranges():
    for bad in (lambda: losses.LossSpec("pinball", tau=1.0), lambda: losses.folded_radius(0.0),
                lambda: losses.LossSpec("huber")):
        with pytest.raises(ValueError):
            bad()


@pytest.mark.parametrize("spec,aux_col", [(losses.folded_radius(0.1), 0.3), (losses.soft_coverage(0.2), 0.8)])
def test_spec_gradient_wrt_output_matches_finite_differences(spec, aux_col):
    rng = np.random.default_rng(4)
    n = 40
    out = rng.uniform(0.2, 1.5, size=(n, 1))
    aux = np.column_stack([rng.normal(size=n), np.full(n, aux_col)])
    _, g = spec(out, aux)
    h = 1e-7
    for i in range(0, n, 7):
        e = np.zeros_like(out)
        e[i, 0] = h
        fd = (spec(out + e, aux)[0] - spec(out - e, aux)[0]) / (2 * h)
        assert g[i, 0] == pytest.approx(fd, rel=1e-4, abs=1e-9)
