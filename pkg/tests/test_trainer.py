import json

import numpy as np
import pytest

from cocp.data import generate_synthetic, make_split_plan
from cocp.distributions import make_family, theta
from cocp.nn import RADIUS_FLOOR, TrainConfig, forward, init_mlp
from cocp.trainer import CocpConfig, Ensemble, FoldArtifacts, ensemble, fit_cocp, train_fold

SMALL = TrainConfig(max_epochs=8, patience=4, batch_size=64)


def small_config(**kw):
    base = dict(warmup=SMALL, phase=SMALL, hidden=(8, 8), T=1)
    base.update(kw)
    return CocpConfig(**base)


@pytest.fixture(scope="module")
def small_problem():
    ds = generate_synthetic("normal", n=400, seed=0)
    return ds, make_split_plan(400, seed=0)


# --- config ------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(T=-1), dict(K=2), dict(beta=0.0), dict(alpha=1.0),
                                dict(center_val_metric="mae"), dict(dtype="float16")])
def test_config_rejects_bad_values(kw):
    with pytest.raises(ValueError):
        CocpConfig(**kw)


def test_config_defaults():
    c = CocpConfig()
    assert (c.alpha, c.K, c.T, c.beta) == (0.1, 5, 5, 0.01)


# --- single fold -----------------------------------------------------------------

def test_fold_phase_sequence(small_problem):
    ds, plan = small_problem
    art = train_fold(ds.X, ds.y, plan.fold_plans[0], small_config(T=2))
    tags = [t for t, _ in art.logs]
    assert tags == ["warmup", "radius[0]", "center[0]", "radius[1]", "center[1]", "radius[final]"]


def test_fold_with_no_alternation(small_problem):
    ds, plan = small_problem
    art = train_fold(ds.X, ds.y, plan.fold_plans[0], small_config(T=0))
    assert [t for t, _ in art.logs] == ["warmup", "radius[final]"]


def test_fold_training_is_deterministic(small_problem):
    ds, plan = small_problem
    a = train_fold(ds.X, ds.y, plan.fold_plans[1], small_config(), seed=3, fold=1)
    b = train_fold(ds.X, ds.y, plan.fold_plans[1], small_config(), seed=3, fold=1)
    for net in ("center", "radius"):
        for p, q in zip(getattr(a, net).params(), getattr(b, net).params()):
            assert np.array_equal(p, q)


def test_fold_seed_changes_weights(small_problem):
    ds, plan = small_problem
    a = train_fold(ds.X, ds.y, plan.fold_plans[0], small_config(), seed=0)
    b = train_fold(ds.X, ds.y, plan.fold_plans[0], small_config(), seed=1)
    assert not np.array_equal(a.center.weights[0], b.center.weights[0])


def test_fold_ignores_rows_outside_its_sets(small_problem):
    """Corrupting calibration/test rows leaves fold training untouched."""
    ds, plan = small_problem
    y2 = ds.y.copy()
    y2[plan.cal_idx] = 1e6
    y2[plan.test_idx] = -1e6
    a = train_fold(ds.X, ds.y, plan.fold_plans[2], small_config(), seed=2, fold=2)
    b = train_fold(ds.X, y2, plan.fold_plans[2], small_config(), seed=2, fold=2)
    for p, q in zip(a.radius.params(), b.radius.params()):
        assert np.array_equal(p, q)


def test_fold_rejects_overlapping_sets(small_problem):
    ds, plan = small_problem
    fp = plan.fold_plans[0]
    bad = type(fp)(center_idx=fp.center_idx, radius_idx=fp.center_idx[:5], val_idx=fp.val_idx)
    with pytest.raises(ValueError):
        train_fold(ds.X, ds.y, bad, small_config())


# --- ensemble ----------------------------------------------------------------------

def test_ensemble_of_identical_folds_is_the_fold():
    c = init_mlp([1, 4, 1], seed=0)
    r = init_mlp([1, 4, 1], head="positive", seed=1)
    X = np.linspace(-2, 2, 30)[:, None]
    cf, rf = ensemble([FoldArtifacts(c, r)] * 3)
    np.testing.assert_allclose(cf(X), forward(c, X)[:, 0], rtol=1e-15)
    np.testing.assert_allclose(rf(X), forward(r, X)[:, 0], rtol=1e-15)


def test_ensemble_of_opposite_centers_is_zero():
    c = init_mlp([1, 4, 1], seed=0)
    neg = init_mlp([1, 4, 1], seed=0)
    neg.weights[-1] = -neg.weights[-1]
    neg.biases[-1] = -neg.biases[-1]
    r = init_mlp([1, 4, 1], head="positive", seed=1)
    cf, _ = ensemble([FoldArtifacts(c, r), FoldArtifacts(neg, r)])
    assert np.max(np.abs(cf(np.linspace(-2, 2, 30)[:, None]))) <= 1e-12


def test_ensemble_radius_respects_floor():
    rng = np.random.default_rng(0)
    folds = [FoldArtifacts(init_mlp([2, 8, 1], seed=k), init_mlp([2, 8, 1], head="positive", seed=10 + k))
             for k in range(5)]
    for f in folds:
        f.radius.biases[-1] -= 50.0  # push the pre-activation far negative
    _, rf = ensemble(folds)
    assert rf(rng.normal(scale=10, size=(1000, 2))).min() >= RADIUS_FLOOR


def test_empty_ensemble_rejected():
    with pytest.raises(ValueError):
        Ensemble([])


# --- full fit --------------------------------------------------------------------------

def test_fit_cocp_small(small_problem, tmp_path):
    ds, plan = small_problem
    model = fit_cocp(ds, plan, small_config(), seed=0, checkpoint_dir=tmp_path / "ck")
    assert model.method == "cocp" and np.isfinite(model.q_hat) and model.q_hat > 0
    assert len(model.info["folds"]) == 5
    lo, hi = model.predict(ds.X[plan.test_idx])
    assert np.all(lo <= hi)
    index = json.loads((tmp_path / "ck" / "index.json").read_text())
    assert len(index) == 5 and "warmup" in index[0]
    assert (tmp_path / "ck" / "fold4_radius.json").exists()


def test_fit_cocp_checks_fold_count(small_problem):
    ds, plan = small_problem
    with pytest.raises(ValueError):
        fit_cocp(ds, plan, small_config(K=4))


def test_fit_cocp_is_deterministic(small_problem):
    ds, plan = small_problem
    a = fit_cocp(ds, plan, small_config(), seed=5)
    b = fit_cocp(ds, plan, small_config(), seed=5)
    assert a.q_hat == b.q_hat
    X = ds.X[plan.test_idx]
    assert np.array_equal(a.predict(X)[0], b.predict(X)[0])


def test_normal_center_tracks_location():
    """For symmetric noise the trained center sits close to the true location."""
    ds = generate_synthetic("normal", n=5000, seed=1)
    plan = make_split_plan(5000, seed=1)
    model = fit_cocp(ds, plan, CocpConfig(T=2), seed=1)
    xs = np.linspace(-1.8, 1.8, 200)
    err = np.abs(model.center_fn(xs[:, None]) - theta(xs))
    s = make_family("normal").folded_radius(xs, theta(xs), 0.1)
    assert np.mean(err / s) <= 0.15
