import dataclasses

import numpy as np
import pytest

from ghgest import gbdt, synth
from ghgest.dataset import grouped_kfold, load_csv, split_train_valid_test
from ghgest.errors import ConfigError
from ghgest.evaluation import rmse


def _full_blocks():
    return [dataclasses.replace(b, observed_labeled=1.0, observed_unlabeled=1.0)
            for b in synth.SynthConfig().co_missing_blocks]


def test_default_config_has_a_mostly_missing_group():
    cfg = synth.SynthConfig()
    assert cfg.labeled_fraction == pytest.approx(0.0227)
    assert any(1 - b.observed_unlabeled > 0.9 for b in cfg.co_missing_blocks)
    assert any(b.observed_labeled > 0.95 and 1 - b.observed_unlabeled > 0.7 for b in cfg.co_missing_blocks)


def test_same_seed_same_panel():
    cfg = synth.SynthConfig(seed=3, companies=500, max_unlabeled_rows=500)
    a, b = synth.generate(cfg), synth.generate(cfg)
    assert np.array_equal(a[0].values, b[0].values, equal_nan=True)
    np.testing.assert_array_equal(a[0].target, b[0].target)
    assert np.array_equal(a[1].values, b[1].values, equal_nan=True)
    c = synth.generate(dataclasses.replace(cfg, seed=4))
    assert not np.array_equal(a[0].target[:5], c[0].target[:5])


def test_block_rates_match_config():
    cfg = synth.SynthConfig(seed=1, companies=6000, labeled_fraction=0.4, max_unlabeled_rows=10**6)
    lab, unl, _, _ = synth.generate(cfg)
    assert len(lab) >= 10_000 and len(unl) >= 10_000
    for block in cfg.co_missing_blocks:
        cols = [lab.schema.index(f) for f in block.features]
        for data, rate in ((lab, block.observed_labeled), (unl, block.observed_unlabeled)):
            m = data.mask[:, cols]
            # a block is hidden as a whole
            assert np.all(m.all(axis=1) | ~m.any(axis=1))
            assert m[:, 0].mean() == pytest.approx(rate, abs=0.02), block.name


def test_labeled_fraction_and_companies():
    cfg = synth.SynthConfig(seed=2, companies=1000, labeled_fraction=0.1, max_unlabeled_rows=10**6)
    lab, unl, _, _ = synth.generate(cfg)
    assert len(set(lab.company_id)) == 100
    assert len(set(lab.company_id) | set(unl.company_id)) == 1000
    assert not set(lab.company_id) & set(unl.company_id)
    assert len(lab) == 100 * 6
    lab.check_unique_keys()


def test_unlabeled_rows_are_capped():
    lab, unl, _, _ = synth.generate(synth.SynthConfig(seed=2, companies=1000, max_unlabeled_rows=700))
    assert len(unl) == 700 and not unl.labeled


@pytest.mark.parametrize("noise", ["gamma", "lognormal"])
def test_oracle_mean_is_the_conditional_mean(noise):
    cfg = synth.SynthConfig(seed=5, companies=8000, labeled_fraction=0.3, max_unlabeled_rows=0,
                            noise=noise, lognormal_sigma=0.5)
    lab, _, oracle, latent = synth.generate(cfg)
    m = synth.oracle_mean(oracle, lab, latent["labeled"])
    ratio = lab.target / m
    assert ratio.mean() == pytest.approx(1.0, abs=0.02)


def test_noise_mean_factor():
    cfg = synth.SynthConfig(noise="lognormal", lognormal_sigma=0.8)
    draws = synth._noise(np.random.default_rng(0), cfg, 400_000)
    assert draws.mean() == pytest.approx(np.exp(0.8 ** 2 / 2), rel=0.01)
    oracle = synth.generate(dataclasses.replace(cfg, companies=50, max_unlabeled_rows=0))[2]
    assert oracle.mean_factor() == pytest.approx(np.exp(0.32), rel=1e-14)
    gam = synth._noise(np.random.default_rng(1), synth.SynthConfig(noise_shape=5.0), 400_000)
    assert gam.mean() == pytest.approx(1.0, rel=0.01)
    assert gam.var() == pytest.approx(1 / 5.0, rel=0.02)


def test_oracle_ignores_noise_draws():
    base = synth.SynthConfig(seed=7, companies=400, max_unlabeled_rows=0)
    lab_a, _, oracle_a, lat_a = synth.generate(base)
    lab_b, _, oracle_b, lat_b = synth.generate(dataclasses.replace(base, noise_shape=50.0))
    np.testing.assert_array_equal(synth.oracle_mean(oracle_a, lab_a, lat_a["labeled"]),
                                  synth.oracle_mean(oracle_b, lab_b, lat_b["labeled"]))
    assert not np.array_equal(lab_a.target, lab_b.target)


def test_oracle_reads_observed_columns():
    cfg = synth.SynthConfig(seed=8, companies=300, max_unlabeled_rows=0, co_missing_blocks=_full_blocks())
    lab, _, oracle, latent = synth.generate(cfg)
    np.testing.assert_allclose(synth.oracle_mean(oracle, lab), synth.oracle_mean(oracle, lab, latent["labeled"]),
                               rtol=1e-12)


def test_oracle_round_trip():
    oracle = synth.generate(synth.SynthConfig(companies=50, max_unlabeled_rows=0))[2]
    assert synth.Oracle.from_dict(oracle.to_dict()) == oracle


def test_boosting_approaches_the_oracle_on_complete_data():
    cfg = synth.SynthConfig(seed=9, companies=6000, labeled_fraction=0.25, max_unlabeled_rows=0,
                            co_missing_blocks=_full_blocks())
    lab, _, oracle, latent = synth.generate(cfg)
    tr, va, te = split_train_valid_test(lab, grouped_kfold(lab, 5, 0), 0)
    model = gbdt.fit(tr, va, gbdt.BoostConfig(max_rounds=300), seed=0)
    pred = model.predict(te).mean()
    truth = synth.oracle_mean(oracle, te)
    assert rmse(pred, te.target) <= 1.5 * rmse(truth, te.target)


def test_write_files(tmp_path):
    cfg = synth.SynthConfig(seed=1, companies=200, max_unlabeled_rows=100)
    counts = synth.write(tmp_path, cfg)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["labeled.csv", "oracle.json", "schema.json", "unlabeled.csv"]
    lab = synth.generate(cfg)[0]
    back = load_csv(tmp_path / "labeled.csv", lab.schema.copy())
    np.testing.assert_array_equal(back.target, lab.target)
    assert counts == {"labeled": len(lab), "unlabeled": 100}


@pytest.mark.parametrize("kwargs, field", [
    ({"labeled_fraction": 1.5}, "labeled_fraction"),
    ({"noise": "cauchy"}, "noise"),
    ({"noise_shape": 0.0}, "noise_shape"),
    ({"companies": 1}, "companies"),
    ({"years": (2020, 2015)}, "years"),
])
def test_invalid_config_names_the_field(kwargs, field):
    with pytest.raises(ConfigError, match=field):
        synth.SynthConfig(**kwargs)


def test_invalid_block_rate():
    bad = [{"name": "energy", "features": ["energy_consumption"], "observed_labeled": 1.2,
            "observed_unlabeled": 0.5}]
    with pytest.raises(ConfigError, match="observed_labeled"):
        synth.SynthConfig(co_missing_blocks=bad)
