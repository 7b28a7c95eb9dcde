import numpy as np
import pytest

from dsmatch.bootstrap import (ReplicateFailure, bootstrap_replicate_ate,
                               bootstrap_replicate_att, bootstrap_replicate_qte,
                               bootstrap_variance, draw_weights, weight_stream)
from dsmatch.matching import match_both, match_group
from dsmatch.means import dsm_ate, dsm_att
from dsmatch.quantiles import arm_grids
from dsmatch.sieve import fit_sieve

from conftest import random_dataset, random_models


def test_exponential_weight_moments():
    w = draw_weights(200_000, "exponential", np.random.default_rng(1)).omega
    assert w.mean() == pytest.approx(1, abs=0.01)
    assert w.var() == pytest.approx(1, abs=0.02)
    assert w.min() > 0


def test_multinomial_weights_are_counts():
    n = 500
    w = draw_weights(n, "multinomial", np.random.default_rng(2)).omega
    assert w.sum() == n and np.all(w == np.round(w)) and w.mean() == 1
    # about a fraction exp(-1) of units get weight zero
    assert np.mean(w == 0) == pytest.approx(np.exp(-1), abs=0.06)


def test_weight_streams_are_independent_of_order():
    a = weight_stream(5, 3).standard_exponential(10)
    weight_stream(5, 2).standard_exponential(10)
    b = weight_stream(5, 3).standard_exponential(10)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, weight_stream(5, 4).standard_exponential(10))
    with pytest.raises(ValueError):
        draw_weights(3, "bayes")


def test_constant_estimand():
    res = bootstrap_variance(lambda w: 2.5, 2.5, 10, B=20)
    assert res.se == 0 and res.ci_low == res.ci_high == 2.5
    assert not res.unreliable


def test_wald_interval_and_determinism():
    f = lambda w: float(w.omega[:5].mean())
    r1 = bootstrap_variance(f, 1.0, 50, B=200, seed=3)
    r2 = bootstrap_variance(f, 1.0, 50, B=200, seed=3)
    np.testing.assert_array_equal(r1.replicates, r2.replicates)
    assert r1.se == pytest.approx(np.std(r1.replicates, ddof=1))
    assert r1.ci_high - r1.point == pytest.approx(1.96 * r1.se)
    d = r1.to_dict(with_replicates=True)
    assert d["B"] == 200 and len(d["replicates"]) == 200 and d["scheme"] == "exponential"


def test_failures_counted():
    def f(w):
        if w.replicate_id % 4 == 0:
            raise ReplicateFailure("boom")
        return float(w.omega[0])
    res = bootstrap_variance(f, 0.0, 10, B=40)
    assert res.failures == 10 and res.replicates.size == 30 and res.unreliable
    res = bootstrap_variance(lambda w: f(w) if w.replicate_id < 4 else 1.0, 0, 10, B=40)
    assert res.failures == 1 and not res.unreliable


def test_unit_weight_full_replicates(small_instance):
    ds, models, fits, ss = small_instance
    one = np.ones(ds.n)
    mm = match_both(ss, ds.A, 1)
    assert bootstrap_replicate_ate(ds, mm, one, models, start=fits) == pytest.approx(
        dsm_ate(ds, ss, 1, 2, mm).value, abs=1e-8)
    m0 = match_group(ss.S0, ds.A, 0, 1)
    assert bootstrap_replicate_att(ds, m0, one, models, start=fits) == pytest.approx(
        dsm_att(ds, ss, 1, 2, m0).value, abs=1e-8)


def test_constant_outcome_replicates(rng):
    ds = random_dataset(rng, 120)
    flat = ds.with_outcome(np.full(ds.n, 4.0))
    models = random_models(flat, 1, 0)
    fits = models.fit()
    ss = models.scores(fits)
    w = rng.exponential(size=ds.n)
    m0 = match_group(ss.S0, ds.A, 0, 1)
    assert bootstrap_replicate_att(flat, m0, w, models, start=fits) == pytest.approx(0, abs=1e-9)
    mm = match_both(ss, ds.A, 1)
    assert bootstrap_replicate_ate(flat, mm, w, models, start=fits) == pytest.approx(0, abs=1e-9)


def test_frozen_sieve_option(small_instance, rng):
    ds, models, fits, ss = small_instance
    mm = match_both(ss, ds.A, 1)
    frozen = tuple(fit_sieve(ss.for_arm(a), ds.Y, ds.A == a, 2, None, a) for a in (0, 1))
    w = rng.exponential(size=ds.n)
    a = bootstrap_replicate_ate(ds, mm, w, models, start=fits, frozen_fits=frozen)
    b = bootstrap_replicate_ate(ds, mm, w, models, start=fits)
    assert np.isfinite(a) and a != b
    q = bootstrap_replicate_qte(ds, mm, w, models, 0.5, arm_grids(ds), start=fits,
                                frozen_fits=frozen)
    assert np.isfinite(q)


def test_match_maps_untouched(small_instance, rng):
    ds, models, fits, ss = small_instance
    mm = match_both(ss, ds.A, 1)
    K0, J0 = mm[0].K.copy(), mm[0].J.copy()
    for b in range(5):
        bootstrap_replicate_ate(ds, mm, rng.exponential(size=ds.n), models, start=fits)
    np.testing.assert_array_equal(mm[0].K, K0)
    np.testing.assert_array_equal(mm[0].J, J0)


def test_bootstrap_se_tracks_sampling_sd():
    # replicate spread should be of the same order as the sampling spread
    from dsmatch.dgp import generate_scenario
    rng = np.random.default_rng(11)
    est = []
    for r in range(30):
        ds = generate_scenario(500, np.random.default_rng([11, r])).dataset
        models = random_models(ds, 1, 1)
        ss = models.scores(models.fit())
        est.append(dsm_ate(ds, ss).value)
    ds = generate_scenario(500, rng).dataset
    models = random_models(ds, 1, 1)
    fits = models.fit()
    ss = models.scores(fits)
    mm = match_both(ss, ds.A, 1)
    res = bootstrap_variance(lambda w: bootstrap_replicate_ate(ds, mm, w, models, start=fits),
                             dsm_ate(ds, ss, 1, 2, mm).value, ds.n, B=100, seed=1)
    ratio = res.se / np.std(est, ddof=1)
    assert 0.5 < ratio < 2.0
