import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ghgest import gamma, gbdt
from ghgest.dataset import CATEGORICAL, NUMERIC, FeatureSchema, make_dataset
from ghgest.errors import DataError, DomainError
from ghgest.gbdt import BoostConfig, Binner

from conftest import toy_dataset

SECTORS = [("Energy", "E1"), ("Financials", "F1"), ("Utilities", "U1")]


def gain(gl, hl, gr, hr):
    g, h = gl + gr, hl + hr
    return 0.5 * (gl * gl / hl + gr * gr / hr - g * g / h)


def exhaustive_best(values, observed, categorical, g, h, min_leaf):
    """Best gain over every threshold / category subset and both MISSING sides.

    Sending every observed row one way and MISSING the other is a valid split.
    """
    best = 0.0
    for f in range(values.shape[1]):
        obs = observed[:, f]
        miss = ~obs
        v = values[:, f]
        if categorical[f]:
            cats = sorted(set(v[obs].astype(int)))
            lefts = [set(c) for r in range(1, len(cats) + 1) for c in itertools.combinations(cats, r)]
            sides = [np.isin(v, list(s)) & obs for s in lefts]
        else:
            u = np.unique(v[obs])
            sides = [(v <= t) & obs for t in u]
        for left_obs in sides:
            for missing_left in (True, False):
                left = left_obs | (miss & missing_left)
                right = ~left
                if left.sum() < min_leaf or right.sum() < min_leaf:
                    continue
                best = max(best, gain(g[left].sum(), h[left].sum(), g[right].sum(), h[right].sum()))
    return best


def _binned_node(rng, n=20, n_num=2, n_cat=1, n_levels=4, p_missing=0.2):
    d = n_num + n_cat
    values = np.empty((n, d))
    values[:, :n_num] = rng.normal(size=(n, n_num)).round(1)
    values[:, n_num:] = rng.integers(0, n_levels, (n, n_cat))
    observed = rng.random((n, d)) >= p_missing
    values[~observed] = np.nan
    is_cat = np.array([False] * n_num + [True] * n_cat)
    binner = Binner.fit(values, observed, is_cat, 64)
    return values, observed, is_cat, binner, binner.transform(values, observed)


@pytest.mark.parametrize("seed", range(25))
def test_split_gain_equals_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    values, observed, is_cat, binner, codes = _binned_node(rng)
    g, h = rng.normal(size=20), rng.uniform(0.5, 2.0, 20)
    min_leaf = int(rng.integers(1, 4))
    cfg = BoostConfig(min_samples_leaf=min_leaf)
    split = gbdt.find_best_split(codes, g, h, binner, cfg)
    expected = exhaustive_best(values, observed, is_cat, g, h, min_leaf)
    if expected <= 0:
        assert split is None
    else:
        assert split.gain == pytest.approx(expected, rel=1e-10, abs=1e-12)
        # the reported partition achieves the reported gain
        f = split.feature
        left = gbdt._goes_left(split, codes[:, f], binner.n_slots - 1, is_cat[f])
        assert gain(g[left].sum(), h[left].sum(), g[~left].sum(), h[~left].sum()) == pytest.approx(split.gain, rel=1e-10)
        assert (split.n_left, split.n_right) == (left.sum(), (~left).sum())


def test_separating_feature_chosen():
    rng = np.random.default_rng(1)
    x = np.column_stack([rng.normal(size=40), np.repeat([0.0, 1.0], 20)])
    g = np.where(x[:, 1] > 0.5, -1.0, 1.0)
    h = np.ones(40)
    binner = Binner.fit(x, np.ones_like(x, bool), np.array([False, False]), 64)
    split = gbdt.find_best_split(binner.transform(x, np.ones_like(x, bool)), g, h, binner, BoostConfig(min_samples_leaf=5))
    assert split.feature == 1 and split.n_left == 20


def test_small_node_has_no_split():
    rng = np.random.default_rng(2)
    _, _, _, binner, codes = _binned_node(rng, n=9)
    assert gbdt.find_best_split(codes, rng.normal(size=9), np.ones(9), binner, BoostConfig(min_samples_leaf=5)) is None


def _stump_case(seed, n=40):
    rng = np.random.default_rng(seed)
    x = rng.lognormal(0, 1, (n, 3))
    x[rng.random(x.shape) < 0.15] = np.nan
    sectors = [SECTORS[i] for i in rng.integers(0, 3, n)]
    y = rng.gamma(2.0, 1.0, n) * (1 + 3 * np.nan_to_num(x[:, 0] > 1)) * np.where([s[0] == "Energy" for s in sectors], 4, 1)
    return toy_dataset(x, target=y, sectors=sectors)


@pytest.mark.parametrize("seed", range(10))
def test_depth_one_single_round_is_exhaustive_stump(seed):
    data = _stump_case(seed)
    cfg = BoostConfig(max_depth=1, max_rounds=1, min_samples_leaf=3, learning_rate=0.3, early_stopping_patience=1)
    model = gbdt.fit(data, data, cfg)
    values, mask, is_cat = gbdt.design_matrix(data, model.sector_vocab)
    y = data.target
    eta1 = np.full(len(y), model.init[0])
    eta2 = np.full(len(y), model.init[1])
    k0, mu0 = gamma.fit_moments(y).shape, y.mean()
    assert model.init == pytest.approx((np.log(k0), np.log(mu0)), rel=1e-12)
    for tree in model.trees:
        if tree.coordinate == gbdt.SHAPE_COORD:
            g, _, _, _ = gamma.nll_grad_hess(eta1, eta2, y)
            h, _ = gamma.fisher_information(eta1)
        else:
            _, g, _, _ = gamma.nll_grad_hess(eta1, eta2, y)
            h = np.exp(eta1)
        expected = exhaustive_best(values, mask, is_cat, g, h, cfg.min_samples_leaf)
        leaf = tree.apply(values, mask, is_cat)
        if expected <= 0:
            assert tree.feature[0] < 0
        else:
            left = leaf == tree.left[0]
            got = gain(g[left].sum(), h[left].sum(), g[~left].sum(), h[~left].sum())
            assert got == pytest.approx(expected, rel=1e-9)
        # leaf values: learning rate times the per-leaf optimum, halved only if the leaf loss would rise
        for lf in np.unique(leaf):
            rows = leaf == lf
            if tree.coordinate == gbdt.SHAPE_COORD:
                step = -g[rows].sum() / h[rows].sum()
            else:
                k = np.exp(eta1[rows])
                step = np.log(np.sum(k * y[rows] / np.exp(eta2[rows])) / k.sum())
            v = cfg.learning_rate * step
            base = gamma.nll_log(eta1[rows], eta2[rows], y[rows]).sum()
            while True:
                e1 = eta1[rows] + (v if tree.coordinate == 0 else 0)
                e2 = eta2[rows] + (v if tree.coordinate == 1 else 0)
                if gamma.nll_log(e1, e2, y[rows]).sum() <= base:
                    break
                v *= 0.5
            assert tree.value[lf] == pytest.approx(v, rel=1e-12, abs=1e-15)
        if tree.coordinate == gbdt.SHAPE_COORD:
            eta1 = eta1 + tree.value[leaf]
        else:
            eta2 = eta2 + tree.value[leaf]


def test_constant_target():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(300, 2))
    data = toy_dataset(x, target=np.full(300, 7.5))
    model = gbdt.fit(data, data)
    np.testing.assert_allclose(model.predict(data).mean(), 7.5, rtol=0.01)


def _sector_problem(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.uniform(1, 10, (n, 3))
    sectors = [SECTORS[i] for i in rng.integers(0, 3, n)]
    is_a = np.array([s[0] == "Energy" for s in sectors])
    mean = 5 * x[:, 0] + 20 * is_a
    return toy_dataset(x, target=rng.gamma(3.0, mean / 3.0), sectors=sectors,
                       companies=[f"S{seed}_{i}" for i in range(n)])


def test_beats_intercept_only():
    train, valid = _sector_problem(4, 3000), _sector_problem(5, 1000)
    model = gbdt.fit(train, valid)
    k, _, theta = stats.gamma.fit(train.target, floc=0)
    intercept_ll = stats.gamma.logpdf(valid.target, k, scale=theta).mean()
    assert model.log_likelihood(valid) > intercept_ll + 0.1
    hist = model.history
    assert hist["valid_loglik"][model.best_iteration] >= hist["valid_loglik"][0]
    assert hist["valid_loglik"][model.best_iteration] == max(hist["valid_loglik"])


def test_training_loglik_monotone():
    train, valid = _sector_problem(6, 2000), _sector_problem(7, 500)
    model = gbdt.fit(train, valid, BoostConfig(max_rounds=60, early_stopping_patience=60))
    ll = np.array(model.history["train_loglik"])
    assert np.all(np.diff(ll) >= -1e-9)


def test_zero_trees_give_init():
    train = _sector_problem(8, 500)
    model = gbdt.fit(train, train, BoostConfig(max_rounds=5))
    p = model.predict(train, n_rounds=0)
    m = gamma.fit_moments(train.target)
    np.testing.assert_allclose(p.shape, m.shape, rtol=1e-12)
    np.testing.assert_allclose(p.mean(), train.target.mean(), rtol=1e-12)


def test_all_missing_row_and_batch_equals_rows():
    train = _sector_problem(9, 800)
    model = gbdt.fit(train, train, BoostConfig(max_rounds=20))
    blank = np.full((1, 3), np.nan)
    p = model.predict(blank)
    assert np.all(np.isfinite(p.shape)) and np.all(p.mean() > 0)
    batch = model.predict(train)
    for i in range(0, 800, 37):
        one = model.predict(train.take([i]))
        assert one.shape[0] == batch.shape[i] and one.scale[0] == batch.scale[i]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_prediction_total_over_masks(seed):
    model = _TOTALITY_MODEL
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 12, (25, 3))
    x[rng.random(x.shape) < rng.random()] = np.nan
    sectors = [SECTORS[i] if rng.random() > 0.2 else ("Technology",) for i in rng.integers(0, 3, 25)]
    p = model.predict(toy_dataset(x, sectors=sectors))
    assert np.all(np.isfinite(p.shape)) and np.all(np.isfinite(p.scale))
    assert np.all(p.shape > 0) and np.all(p.scale > 0)


_TOTALITY_MODEL = gbdt.fit(_sector_problem(10, 600), _sector_problem(11, 200), BoostConfig(max_rounds=15))


def test_determinism_and_serialization(tmp_path):
    train, valid = _sector_problem(12, 600), _sector_problem(13, 200)
    a = gbdt.fit(train, valid, BoostConfig(max_rounds=15), seed=3)
    b = gbdt.fit(train, valid, BoostConfig(max_rounds=15), seed=3)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    a.save(tmp_path / "m.json")
    c = gbdt.BoostedModel.load(tmp_path / "m.json")
    pa, pc = a.predict(valid), c.predict(valid)
    assert np.array_equal(pa.shape, pc.shape) and np.array_equal(pa.scale, pc.scale)


def test_categorical_feature_and_unseen_code():
    rng = np.random.default_rng(14)
    n = 1200
    schema = FeatureSchema([("size", NUMERIC), ("kind", CATEGORICAL)], categories={"kind": ["a", "b", "c", "d"]})
    kind = rng.integers(0, 3, n).astype(float)
    size = rng.uniform(1, 2, n)
    y = rng.gamma(4.0, np.array([1.0, 10.0, 3.0])[kind.astype(int)] * size / 4.0)
    sectors = np.array([("Energy", "", "", "")] * n, dtype=object)
    data = make_dataset(schema, np.column_stack([size, kind]), [f"K{i}" for i in range(n)], [2020] * n, sectors, y)
    model = gbdt.fit(data, data, BoostConfig(max_rounds=40))
    m = model.predict(data).mean()
    for c, expect in enumerate((1.5, 15.0, 4.5)):
        assert m[kind == c].mean() == pytest.approx(expect, rel=0.1)
    # code 3 never appeared in training: routed like MISSING
    novel = make_dataset(schema, np.array([[1.5, 3.0], [1.5, np.nan]]), ["N1", "N2"], [2020, 2020],
                         sectors[:2], None)
    p = model.predict(novel)
    assert p.mean()[0] == p.mean()[1]


def test_errors():
    train = _sector_problem(15, 100)
    with pytest.raises(DomainError):
        gbdt.fit(train.with_target(np.where(np.arange(100) == 3, 0.0, train.target)), train)
    with pytest.raises(DataError):
        gbdt.fit(train, train.take([]))
    with pytest.raises(DataError):
        gbdt.fit(train, train.with_target(None))
    model = gbdt.fit(train, train, BoostConfig(max_rounds=2))
    with pytest.raises(DataError):
        model.predict(toy_dataset(np.ones((3, 4))))
    with pytest.raises(DomainError):
        BoostConfig(max_depth=0)
    with pytest.raises(DomainError):
        BoostConfig(learning_rate=0.0)


def test_raw_rows_may_omit_sector_columns():
    train = _sector_problem(16, 400)
    model = gbdt.fit(train, train, BoostConfig(max_rounds=5))
    raw = np.array([[2.0, 3.0, 4.0]])
    padded = np.hstack([raw, np.full((1, len(model.sector_vocab)), np.nan)])
    assert model.predict(raw).mean() == model.predict(padded).mean()
