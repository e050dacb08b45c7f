import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_dataset, random_model, random_query
from ultr.clicks import BiasProfile, ClickLog, NoiseParams, empty_log, simulate_clicks
from ultr.dataset import Dataset, QueryInstance
from ultr.errors import ConfigError, DataError
from ultr.estimators import (
    EstimatorConfig,
    estimate_risk,
    exact_expected_ips,
    expected_ips_closed_form,
    per_impression_estimates,
    verify_order_preservation,
)
from ultr.propensity import relabel_log
from ultr.ranking import LinearModel, Ranking, rank_candidates, sum_relevant_ranks


def _one_click_log(q, doc, propensity):
    presented = Ranking(q.query_id, q.doc_ids)
    rank = presented.rank_of(doc)
    i = np.array([0])
    return ClickLog((q.query_id,), (presented,), i, i * 0, i * 0, np.array([doc]),
                    np.array([rank]), np.array([propensity]), 1)


QUERY = QueryInstance("a", [0, 1, 2, 3], [[4.0], [3.0], [2.0], [1.0]], [0, 0, 4, 0])
DS = Dataset("train", [QUERY], 1)


class TestEstimatorConfig:
    @pytest.mark.parametrize("kind, tau", [("bogus", None), ("clipped_ips", None),
                                           ("clipped_ips", 1.5), ("ips", 0.3)])
    def test_invalid(self, kind, tau):
        with pytest.raises(ConfigError):
            EstimatorConfig(kind, tau)

    def test_nonpositive_propensity_rejected(self):
        with pytest.raises(DataError):
            EstimatorConfig.ips().weights([0.5, 0.0])


class TestEstimateRisk:
    def test_empty_log(self):
        est = estimate_risk(LinearModel([1.0]), empty_log(5), DS, EstimatorConfig.ips())
        assert est.value == 0.0

    def test_single_click_at_rank_three(self):
        log = _one_click_log(QUERY, 2, 0.5)
        model = LinearModel([1.0])  # doc 2 ranks third
        assert estimate_risk(model, log, DS, EstimatorConfig.ips()).value == 6.0
        assert estimate_risk(model, log, DS, EstimatorConfig.naive()).value == 3.0
        assert estimate_risk(model, log, DS, EstimatorConfig.clipped(0.8)).value == 3.0 / 0.8

    def test_averages_over_impressions_not_clicks(self):
        log = _one_click_log(QUERY, 2, 1.0)
        log.n_impressions = 4
        assert estimate_risk(LinearModel([1.0]), log, DS, EstimatorConfig.naive()).value == 0.75

    def test_per_impression_mean(self):
        rng = np.random.default_rng(0)
        ds = random_dataset(rng, 4, 6)
        log = simulate_clicks(ds, random_model(rng), BiasProfile(1.0), NoiseParams(1.0, 0.2), 300, 0)
        model = random_model(rng)
        vals = per_impression_estimates(model, log, ds, EstimatorConfig.ips())
        assert vals.shape == (300,)
        assert vals.mean() == pytest.approx(estimate_risk(model, log, ds, EstimatorConfig.ips()).value)

    def test_propensity_scale_keeps_model_order(self):
        rng = np.random.default_rng(1)
        ds = random_dataset(rng, 6, 8)
        log = simulate_clicks(ds, random_model(rng), BiasProfile(1.0), NoiseParams(1.0, 0.1), 500, 1)
        models = [random_model(rng) for _ in range(8)]

        def argmin(lg):
            return int(np.argmin([estimate_risk(m, lg, ds, EstimatorConfig.ips()).value for m in models]))

        for c in (0.1, 0.37, 3.0):
            assert argmin(log.with_propensity(log.propensity * c)) == argmin(log)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), taus=st.lists(st.floats(0.0, 1.0), min_size=2, max_size=5))
def test_clipping_monotone_and_bounded(seed, taus):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, 3, [4, 7, 5])
    log = simulate_clicks(ds, random_model(rng), BiasProfile(1.5), NoiseParams(1.0, 0.3), 100, seed)
    model = random_model(rng)
    naive = estimate_risk(model, log, ds, EstimatorConfig.naive()).value
    ips = estimate_risk(model, log, ds, EstimatorConfig.ips()).value
    vals = [estimate_risk(model, log, ds, EstimatorConfig.clipped(t)).value for t in sorted(taus)]
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))
    assert all(naive - 1e-12 <= v <= ips + 1e-12 for v in vals)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_naive_equals_ips_with_unit_propensities(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, 3, [3, 6, 4])
    log = simulate_clicks(ds, random_model(rng), BiasProfile(1.0), NoiseParams(1.0, 0.2), 60, seed)
    log = relabel_log(log, BiasProfile(0.0))
    model = random_model(rng)
    assert estimate_risk(model, log, ds, EstimatorConfig.ips()).value == \
        estimate_risk(model, log, ds, EstimatorConfig.naive()).value


class TestExactExpectation:
    def test_noise_free_equals_true_loss(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            q = random_query(rng, int(rng.integers(2, 9)))
            model, pres = random_model(rng), random_model(rng)
            exact = exact_expected_ips(model, q, rank_candidates(pres, q), BiasProfile(1.7),
                                       NoiseParams(1.0, 0.0))
            assert exact == pytest.approx(sum_relevant_ranks(rank_candidates(model, q), q), abs=1e-9)

    def test_equal_noise_erases_signal(self):
        rng = np.random.default_rng(3)
        q = random_query(rng, 7)
        for _ in range(5):
            exact = exact_expected_ips(random_model(rng), q, rank_candidates(random_model(rng), q),
                                       BiasProfile(1.0), NoiseParams(0.4, 0.4))
            assert exact == pytest.approx(0.4 * 7 * 8 / 2, abs=1e-9)

    def test_enumeration_matches_closed_form(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            q = random_query(rng, int(rng.integers(1, 10)))
            model, pres = random_model(rng), random_model(rng)
            noise = NoiseParams(0.9, 0.25)
            exact = exact_expected_ips(model, q, rank_candidates(pres, q), BiasProfile(0.8), noise)
            assert exact == pytest.approx(expected_ips_closed_form(model, q, noise), abs=1e-9)

    def test_five_doc_monte_carlo(self):
        q = QueryInstance("a", np.arange(5), [[0.3, 1.0], [1.2, -0.4], [0.1, 0.2], [-0.8, 0.9],
                                              [0.5, 0.5]], [4, 0, 0, 4, 0])
        ds = Dataset("train", [q], 2)
        model, pres = LinearModel([1.0, 0.2]), LinearModel([-0.3, 1.0])
        noise = NoiseParams(1.0, 0.1)
        n = 1_000_000
        log = simulate_clicks(ds, pres, BiasProfile(1.0), noise, n, 5)
        vals = per_impression_estimates(model, log, ds, EstimatorConfig.ips())
        exact = exact_expected_ips(model, q, rank_candidates(pres, q), BiasProfile(1.0), noise)
        assert abs(vals.mean() - exact) <= 3 * vals.std(ddof=1) / np.sqrt(n)

    def test_too_many_candidates(self):
        q = QueryInstance("a", np.arange(13), np.zeros((13, 1)), [0] * 13)
        with pytest.raises(ConfigError):
            exact_expected_ips(LinearModel([1.0]), q, Ranking("a", np.arange(13)), BiasProfile(1.0),
                               NoiseParams())


class TestOrderPreservation:
    def test_identical_models(self):
        rng = np.random.default_rng(6)
        ds = random_dataset(rng, 2, 5)
        m = random_model(rng)
        assert verify_order_preservation([m, m], ds, BiasProfile(1.0), NoiseParams(0.9, 0.2))

    def test_noise_free_agrees(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            ds = random_dataset(rng, 2, 6)
            pair = [random_model(rng), random_model(rng)]
            assert verify_order_preservation(pair, ds, BiasProfile(1.0), NoiseParams(1.0, 0.0),
                                             presenter=random_model(rng))
