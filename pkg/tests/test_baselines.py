import math

import numpy as np
import pytest
from scipy import optimize

from ghgest import baselines as bl
from ghgest.errors import DataError, DomainError

from conftest import planted_glm, toy_dataset


def _rows(path, n):
    return [path] * n


def fallback_data(seed=0):
    """A level-4 sector of 49 rows beside a 30-row sibling; their level-3 parent holds 79."""
    rng = np.random.default_rng(seed)
    sectors = (_rows(("Energy", "E1", "E11", "E111"), 49) + _rows(("Energy", "E1", "E11", "E112"), 30)
               + _rows(("Energy", "E1", "E12", "E121"), 60) + _rows(("Utilities", "U1", "U11", "U111"), 10))
    n = len(sectors)
    return toy_dataset(rng.lognormal(0, 1, (n, 2)), target=rng.gamma(2.0, 5.0, n), sectors=sectors)


def test_fallback_serves_parent_for_49_rows():
    table = bl.fit_simple(fallback_data())
    assert table.key_for(("Energy", "E1", "E11", "E111")) == ("Energy", "E1", "E11")
    assert table.key_for(("Energy", "E1", "E12", "E121")) == ("Energy", "E1", "E12", "E121")
    # a 10-row sector with sparse levels 2-4 is served by level 1
    assert table.key_for(("Utilities", "U1", "U11", "U111")) == ("Utilities",)
    assert table.entries[("Energy", "E1", "E11")][2] == 79
    assert ("Energy", "E1", "E11", "E111") not in table.entries


def test_moment_matched_bucket():
    a = math.sqrt(12.0 * 49 / 50)
    y = np.array([6.0 - a] * 25 + [6.0 + a] * 25)
    data = toy_dataset(np.ones((50, 1)) + np.arange(50)[:, None], target=y,
                       sectors=_rows(("Energy", "E1", "E11", "E111"), 50))
    table = bl.fit_simple(data)
    k, theta, count = table.entries[("Energy", "E1", "E11", "E111")]
    assert (k, theta, count) == (pytest.approx(3.0, rel=1e-12), pytest.approx(2.0, rel=1e-12), 50)


def test_simple_predictions():
    data = fallback_data()
    table = bl.fit_simple(data)
    p = bl.predict_simple(table, data.sector_path)
    assert p.shape[0] == p.shape[1] and p.scale[0] == p.scale[1]
    # unknown level-4 code under a known level-1 sector
    q = bl.predict_simple(table, [("Utilities", "U9", "U99", "U999")])
    k, s, _ = table.entries[("Utilities",)]
    assert (q.shape[0], q.scale[0]) == (k, s)
    with pytest.raises(DataError):
        bl.predict_simple(table, [("Technology", "T1", "T11", "T111")])


def test_simple_idempotent_and_serializable():
    data = fallback_data(1)
    a, b = bl.fit_simple(data), bl.fit_simple(data)
    assert a.to_dict() == b.to_dict()
    assert bl.SectorTable.from_dict(a.to_dict()).entries == a.entries


def test_simple_degenerate_bucket_uses_pooled_shape():
    y = np.concatenate([np.full(50, 4.0), np.random.default_rng(2).gamma(2.0, 3.0, 60)])
    sectors = _rows(("Energy", "E1", "E11", "E111"), 50) + _rows(("Energy", "E2", "E21", "E211"), 60)
    table = bl.fit_simple(toy_dataset(np.ones((110, 1)), target=y, sectors=sectors))
    k, s, _ = table.entries[("Energy", "E1", "E11", "E111")]
    assert k * s == pytest.approx(4.0)
    with pytest.raises(DataError):
        bl.fit_simple(toy_dataset(np.ones((3, 1))))


# ----------------------------------------------------------------------- GLM

def direct_mle(x, y):
    """Gamma GLM coefficients by quasi-Newton maximization of the log-likelihood."""
    def nll(beta):
        eta = x @ beta
        return float(np.sum(y * np.exp(-eta) + eta))

    def grad(beta):
        eta = x @ beta
        return x.T @ (1.0 - y * np.exp(-eta))

    beta0 = np.zeros(x.shape[1])
    beta0[0] = np.log(y.mean())
    res = optimize.minimize(nll, beta0, jac=grad, method="BFGS", options={"gtol": 1e-10, "maxiter": 10_000})
    return res.x


def test_irls_matches_direct_mle():
    rng = np.random.default_rng(3)
    x = np.column_stack([np.ones(300), rng.normal(size=(300, 3))])
    y = rng.gamma(3.0, np.exp(x @ np.array([1.0, 0.5, -0.3, 0.0])) / 3.0)
    np.testing.assert_allclose(bl.irls_gamma_log(x, y), direct_mle(x, y), rtol=1e-6, atol=1e-7)


def test_irls_fixed_point_gradient():
    rng = np.random.default_rng(4)
    for _ in range(5):
        x = np.column_stack([np.ones(500), rng.normal(size=(500, 4))])
        y = rng.gamma(2.0, np.exp(x @ rng.normal(0, 0.5, 5)) / 2.0)
        beta = bl.irls_gamma_log(x, y)
        mu = np.exp(x @ beta)
        shape = bl.pearson_shape(y, mu, 5)
        score = shape * x.T @ (y / mu - 1.0)
        assert np.max(np.abs(score)) < 1e-6


def test_irls_divergence_raises():
    x = np.column_stack([np.ones(4), [0.0, 0.0, 0.0, 1e6]])
    with pytest.raises(bl.IRLSDivergence):
        bl.irls_gamma_log(x, np.array([1.0, 2.0, 1.5, 1e300]))


def test_glm_prediction_matches_independent_fit():
    rng = np.random.default_rng(5)
    n = 400
    x = rng.lognormal(0, 0.7, (n, 3))
    x[rng.random(x.shape) < 0.1] = np.nan
    y = rng.gamma(2.5, np.exp(0.5 + 1.2 * np.log(np.nan_to_num(x[:, 0], nan=1.0))) / 2.5)
    data = toy_dataset(x, target=y, sectors=_rows(("Energy",), n))
    model = bl.fit_glm(data)
    bucket = model.buckets[("Energy",)]
    assert bucket.selected, "the planted feature should be selected"
    cols = model.candidates.columns(data)
    # rebuild the design from scratch: bucket-mean imputation, then standardization
    design = [np.ones(n)]
    for j in bucket.selected:
        c = cols[:, j]
        filled = np.where(np.isnan(c), np.nanmean(c), c)
        design.append((filled - filled.mean()) / filled.std())
    beta = direct_mle(np.column_stack(design), y)
    expected = np.exp(np.column_stack(design) @ beta)
    np.testing.assert_allclose(bl.predict_glm(model, data).mean(), expected, rtol=1e-4)


def test_intercept_only_is_sample_mean():
    rng = np.random.default_rng(6)
    y = rng.gamma(2.0, 4.0, 200)
    data = toy_dataset(rng.normal(size=(200, 2)), target=y, sectors=_rows(("Energy",), 200))
    model = bl.fit_glm(data)
    b = model.buckets[("Energy",)]
    if b.selected:
        pytest.skip("noise feature entered by chance")
    np.testing.assert_allclose(bl.predict_glm(model, data).mean(), y.mean(), rtol=1e-6)
    # zero-coefficient bucket predicts the sample mean everywhere
    zero = bl.GlmBucket([0], np.zeros(1), math.log(y.mean()), 2.0, np.zeros(1), np.zeros(1), np.ones(1), 200)
    np.testing.assert_allclose(zero.mean(np.random.default_rng(7).normal(size=(5, 3))), y.mean())


def test_missing_selected_features_are_imputed():
    x, y = planted_glm(8, n=600, noise_features=2)
    data = toy_dataset(x, target=y, sectors=_rows(("Energy",), 600))
    model = bl.fit_glm(data)
    b = model.buckets[("Energy",)]
    blank = toy_dataset(np.full((2, 3), np.nan), sectors=_rows(("Energy",), 2))
    expected = math.exp(b.intercept + float(((b.impute - b.center) / b.scale) @ b.coef))
    np.testing.assert_allclose(bl.predict_glm(model, blank).mean(), expected, rtol=1e-12)


def _single_feature_loglik(x, y, j):
    """Profile log-likelihood of the one-feature GLM on column j, computed independently."""
    design = np.column_stack([np.ones(len(y)), (x[:, j] - x[:, j].mean()) / x[:, j].std()])
    beta = direct_mle(design, y)
    mu = np.exp(design @ beta)
    shape = 1.0 / (np.sum(((y - mu) / mu) ** 2) / (len(y) - 2))
    return bl.gamma_glm_loglik(y, mu, shape)


def test_planted_feature_selected_first():
    x, y = planted_glm(9)
    data = toy_dataset(x, target=y, sectors=_rows(("Energy",), len(y)))
    model = bl.fit_glm(data)
    b = model.buckets[("Energy",)]
    lls = [_single_feature_loglik(x, y, j) for j in range(x.shape[1])]
    assert int(np.argmax(lls)) == 0
    assert model.candidates.names[b.selected[0]] == "x0"
    first = [t for t in b.trace if t.get("step") == 1 and "loglik" in t][0]
    assert first["loglik"] == pytest.approx(lls[0], rel=1e-6)


def test_trace_never_accepts_bic_increase():
    for seed in range(5):
        x, y = planted_glm(seed, n=800, noise_features=8)
        b = bl.fit_glm(toy_dataset(x, target=y, sectors=_rows(("Energy",), 800))).buckets[("Energy",)]
        accepted = [t for t in b.trace if t.get("accepted")]
        bics = [t["bic"] for t in accepted]
        assert all(b2 <= b1 for b1, b2 in zip(bics, bics[1:]))
        rejected = [t for t in b.trace if t.get("accepted") is False]
        assert len(rejected) <= 1
        if rejected:
            assert rejected[0]["bic"] > bics[-1]


def test_divergent_candidate_is_skipped(monkeypatch):
    x, y = planted_glm(10, n=300, noise_features=2)
    data = toy_dataset(x, target=y, sectors=_rows(("Energy",), 300))
    original = bl.irls_gamma_log

    def flaky(design, target, *args, **kwargs):
        # refuse any design containing the (standardized) third feature
        if design.shape[1] > 1 and any(np.allclose(design[:, c], (x[:, 2] - x[:, 2].mean()) / x[:, 2].std())
                                       for c in range(1, design.shape[1])):
            raise bl.IRLSDivergence("forced")
        return original(design, target, *args, **kwargs)

    monkeypatch.setattr(bl, "irls_gamma_log", flaky)
    b = bl.fit_glm(data).buckets[("Energy",)]
    assert any(t.get("skipped") and t["added"] == "x2" for t in b.trace)
    assert model_names(b, data) and "x2" not in model_names(b, data)


def model_names(bucket, data):
    cands = bl.candidate_set(data)
    return [cands.names[j] for j in bucket.selected]


def test_candidates_include_logs_of_positive_features():
    rng = np.random.default_rng(11)
    x = np.column_stack([rng.lognormal(size=20), rng.normal(size=20)])
    c = bl.candidate_set(toy_dataset(x, target=np.ones(20)))
    assert c.names == ["x0", "log_x0", "x1"]


def test_glm_totality_and_serialization():
    data = fallback_data(12)
    model = bl.fit_glm(data)
    p = bl.predict_glm(model, data)
    assert len(p) == len(data) and np.all(np.isfinite(p.mean()))
    back = bl.GlmModel.from_dict(model.to_dict())
    assert np.array_equal(bl.predict_glm(back, data).mean(), p.mean())
    with pytest.raises(DataError):
        bl.predict_glm(model, toy_dataset(np.ones((1, 2)), sectors=[("Technology",)]))
    with pytest.raises(DomainError):
        bl.fit_glm(data.with_target(np.zeros(len(data))))


def test_pearson_shape_clamped():
    y = np.array([1.0, 2.0, 3.0])
    assert bl.pearson_shape(y, y, 1) == 1e6
    assert bl.pearson_shape(np.array([1.0, 1e6]), np.array([1e-6, 1e-6]), 1) == 1e-3
