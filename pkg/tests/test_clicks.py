import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_dataset, random_model
from ultr.clicks import (
    BiasProfile,
    NoiseParams,
    empirical_click_rate_by_rank,
    empty_log,
    examination_probability,
    expected_click_rate_by_rank,
    expected_noisy_click_fraction,
    noisy_click_fraction,
    read_click_log,
    simulate_clicks,
    simulate_until_clicks,
    write_click_log,
)
from ultr.dataset import Dataset, QueryInstance, synthesize_dataset
from ultr.errors import ConfigError, DomainError, ParseError
from ultr.learning import train_full_info_ranker
from ultr.ranking import LinearModel, rank_candidates


def _log_arrays(log):
    return (log.impression_id, log.query_index, log.clicked_doc_id, log.presented_rank, log.propensity)


def assert_logs_equal(a, b):
    assert a.n_impressions == b.n_impressions
    assert a.query_ids == b.query_ids
    assert a.rankings == b.rankings
    for x, y in zip(_log_arrays(a), _log_arrays(b)):
        np.testing.assert_array_equal(x, y)


class TestExaminationProbability:
    @pytest.mark.parametrize("r, eta, expected", [(10, 1.0, 0.1), (1, 3.7, 1.0), (4, 0.5, 0.5)])
    def test_values(self, r, eta, expected):
        assert examination_probability(r, BiasProfile(eta)) == pytest.approx(expected, rel=1e-15)

    def test_vectorized(self):
        np.testing.assert_allclose(examination_probability([1, 2, 4], BiasProfile(2.0)),
                                   [1.0, 0.25, 0.0625])

    @pytest.mark.parametrize("r", [0, -3, 0.5])
    def test_domain_error(self, r):
        with pytest.raises(DomainError):
            examination_probability(r, BiasProfile(1.0))

    @pytest.mark.parametrize("eta", [-0.1, float("nan"), float("inf")])
    def test_bad_eta(self, eta):
        with pytest.raises(ConfigError):
            BiasProfile(eta)


class TestNoiseParams:
    @pytest.mark.parametrize("p, m", [(0.5, 0.6), (1.1, 0.1), (1.0, -0.1)])
    def test_invalid(self, p, m):
        with pytest.raises(ConfigError):
            NoiseParams(p, m)

    def test_equal_allowed_but_not_for_simulation(self):
        noise = NoiseParams(0.5, 0.5)
        with pytest.raises(ConfigError):
            noise.check_strict()
        ds = synthesize_dataset(0, 2, 3, 2)
        with pytest.raises(ConfigError):
            simulate_clicks(ds, LinearModel.zeros(2), BiasProfile(1.0), noise, 10, 0)


@pytest.fixture(scope="module")
def corpus():
    ds = synthesize_dataset(0, 200, 10, 5)
    return ds, train_full_info_ranker(synthesize_dataset(1, 20, 10, 5), C=1.0)


class TestSimulateClicks:
    def test_bias_and_noise_free_clicks_every_relevant(self, corpus):
        ds, ranker = corpus
        log = simulate_clicks(ds, ranker, BiasProfile(0.0), NoiseParams(1.0, 0.0), 300, 1)
        np.testing.assert_array_equal(log.propensity, 1.0)
        rows = np.array([ds.index_of(qid) for qid in log.query_ids])[log.query_index]
        for imp in np.unique(log.impression_id):
            sel = log.impression_id == imp
            q = ds.queries[int(rows[sel][0])]
            assert set(log.clicked_doc_id[sel].tolist()) == set(q.doc_ids[q.relevance == 1].tolist())

    def test_deterministic(self, corpus):
        ds, ranker = corpus
        args = (ds, ranker, BiasProfile(1.0), NoiseParams(1.0, 0.1), 500, 42)
        assert_logs_equal(simulate_clicks(*args), simulate_clicks(*args))

    def test_prefix_independent_of_total(self, corpus):
        ds, ranker = corpus
        short = simulate_clicks(ds, ranker, BiasProfile(1.0), NoiseParams(1.0, 0.1), 100, 3)
        long = simulate_clicks(ds, ranker, BiasProfile(1.0), NoiseParams(1.0, 0.1), 2000, 3)
        keep = long.impression_id < 100
        np.testing.assert_array_equal(long.clicked_doc_id[keep], short.clicked_doc_id)
        np.testing.assert_array_equal(long.presented_rank[keep], short.presented_rank)

    def test_record_invariants(self, corpus):
        ds, ranker = corpus
        profile = BiasProfile(1.3)
        log = simulate_clicks(ds, ranker, profile, NoiseParams(0.9, 0.2), 400, 5)
        assert len(log) > 0
        for rec in log.records[:200]:
            assert rec.presented_ranking.rank_of(rec.clicked_doc_id) == rec.presented_rank
            assert rec.propensity == examination_probability(rec.presented_rank, profile) > 0
            assert rec.presented_ranking == rank_candidates(ranker, ds.query(rec.query_id))

    def test_click_implies_examination(self, corpus):
        ds, ranker = corpus
        _, trace = simulate_clicks(ds, ranker, BiasProfile(1.0), NoiseParams(0.8, 0.3), 300, 6,
                                   return_trace=True)
        assert np.all(trace.clicked <= trace.examined)

    def test_noise_free_clicks_equal_examined_relevant(self):
        q = QueryInstance("a", np.arange(6), np.arange(6.0)[:, None], [4, 0, 3, 0, 0, 4])
        ds = Dataset("train", [q], 1)
        ranker = LinearModel([-1.0])
        _, trace = simulate_clicks(ds, ranker, BiasProfile(1.0), NoiseParams(1.0, 0.0), 2000, 7,
                                   return_trace=True)
        # the ranker presents doc 0 first, so position order is doc order
        np.testing.assert_array_equal(trace.clicked, trace.examined * q.relevance)

    def test_marginal_click_rate_per_rank(self):
        q = QueryInstance("a", np.arange(5), np.arange(5.0)[::-1, None], [4, 0, 4, 0, 0])
        ds = Dataset("train", [q], 1)
        noise = NoiseParams(0.8, 0.15)
        n = 200_000
        log = simulate_clicks(ds, LinearModel([1.0]), BiasProfile(1.0), noise, n, 8)
        ctr = empirical_click_rate_by_rank(log, 5)
        p = (1.0 / np.arange(1, 6)) * noise.click_given_exam(q.relevance)
        se = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(ctr - p) <= 3 * se)

    def test_config_errors(self, corpus):
        ds, ranker = corpus
        with pytest.raises(ConfigError):
            simulate_clicks(ds, ranker, BiasProfile(1.0), NoiseParams(), 0, 0)
        with pytest.raises(ConfigError):
            simulate_clicks(Dataset("t", [], 5), ranker, BiasProfile(1.0), NoiseParams(), 5, 0)


class TestSimulateUntilClicks:
    def test_is_prefix_of_fixed_impression_run(self, corpus):
        ds, ranker = corpus
        args = (ds, ranker, BiasProfile(1.0), NoiseParams(1.0, 0.1))
        log = simulate_until_clicks(*args, 777, 11)
        assert len(log) >= 777
        assert_logs_equal(log, simulate_clicks(*args, log.n_impressions, 11))
        # the target is reached only at the last impression
        last = log.impression_id == log.n_impressions - 1
        assert len(log) - last.sum() < 777


class TestClickRates:
    def test_empty_log(self):
        np.testing.assert_array_equal(empirical_click_rate_by_rank(empty_log(0, 4)), np.zeros(4))

    def test_everything_clicked(self):
        ds = Dataset("t", [QueryInstance(f"q{i}", np.arange(m), np.zeros((m, 1)), [4] * m)
                           for i, m in enumerate([3, 5])], 1)
        log = simulate_clicks(ds, LinearModel([0.0]), BiasProfile(0.0), NoiseParams(1.0, 0.0), 50, 0)
        np.testing.assert_array_equal(empirical_click_rate_by_rank(log)[:3], 1.0)

    def test_ctr_matches_expectation(self, corpus):
        ds, ranker = corpus
        profile, noise = BiasProfile(1.0), NoiseParams(1.0, 0.1)
        n = 100_000
        log = simulate_clicks(ds, ranker, profile, noise, n, 9)
        ctr = empirical_click_rate_by_rank(log)
        expected = expected_click_rate_by_rank(ds, ranker, profile, noise)
        # clicks per impression at a rank are Bernoulli after mixing over queries
        se = np.sqrt(expected * (1 - expected) / n)
        assert np.all(np.abs(ctr - expected) <= 4 * se + 1e-12)

    def test_noisy_fraction_matches_expectation(self):
        ds = synthesize_dataset(3, 500, 30, 20, relevant_fraction=0.1)
        ranker = train_full_info_ranker(synthesize_dataset(4, 10, 30, 20), C=1.0)
        profile, noise = BiasProfile(1.0), NoiseParams(1.0, 0.1)
        log = simulate_clicks(ds, ranker, profile, noise, 100_000, 10)
        expected = expected_noisy_click_fraction(ds, ranker, profile, noise)
        assert abs(noisy_click_fraction(log, ds) - expected) <= 0.03


class TestClickLogFile:
    def test_round_trip(self, tmp_path, corpus):
        ds, ranker = corpus
        log = simulate_clicks(ds, ranker, BiasProfile(1.0), NoiseParams(1.0, 0.1), 300, 12)
        path = tmp_path / "log.tsv"
        write_click_log(log, path)
        back = read_click_log(path)
        assert back.n_impressions == log.n_impressions
        np.testing.assert_array_equal(back.clicked_doc_id, log.clicked_doc_id)
        np.testing.assert_array_equal(back.presented_rank, log.presented_rank)
        np.testing.assert_allclose(back.propensity, log.propensity, rtol=1e-11)
        assert back.record_query_ids().tolist() == log.record_query_ids().tolist()

    def test_inconsistent_rank_rejected(self, tmp_path):
        path = tmp_path / "log.tsv"
        path.write_text("# n_impressions=1\nimpression_id\tquery_id\tpresented_ranking\t"
                        "clicked_doc_id\tpresented_rank\tpropensity\n0\tq\t3,1,2\t1\t1\t1\n")
        with pytest.raises(ParseError) as err:
            read_click_log(path)
        assert err.value.lineno == 3


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eta=st.floats(0.0, 2.0))
def test_propensities_positive_and_true(seed, eta):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, 3, [2, 5, 9])
    profile = BiasProfile(eta)
    log = simulate_clicks(ds, random_model(rng), profile, NoiseParams(1.0, 0.3), 50, seed)
    assert np.all(log.propensity > 0)
    np.testing.assert_array_equal(log.propensity, examination_probability(log.presented_rank, profile)
                                  if len(log) else log.propensity)
