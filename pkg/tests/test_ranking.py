import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from helpers import random_dataset, random_query
from ultr.dataset import Dataset, QueryInstance
from ultr.errors import ConfigError, DataError
from ultr.ranking import (
    LinearModel,
    Ranking,
    dataset_ranks,
    full_info_risk,
    per_query_losses,
    rank_candidates,
    ranks_of_candidates,
    sum_relevant_ranks,
)


def _brute_order(scores, doc_ids):
    return [d for _, d in sorted(zip(-scores, doc_ids))]


class TestRankCandidates:
    def test_zero_weights_sort_by_doc_id(self):
        q = QueryInstance("a", [5, 2, 9, 1], np.ones((4, 2)), [0, 0, 0, 0])
        np.testing.assert_array_equal(rank_candidates(LinearModel.zeros(2), q).doc_ids, [1, 2, 5, 9])

    def test_higher_score_first(self):
        q = QueryInstance("a", [0, 1], [[1.0], [2.0]], [0, 0])
        np.testing.assert_array_equal(rank_candidates(LinearModel([1.0]), q).doc_ids, [1, 0])

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = random_query(rng, 20, d=4)
            w = LinearModel(rng.standard_normal(4))
            expected = _brute_order(q.features @ w.weights, q.doc_ids.tolist())
            np.testing.assert_array_equal(rank_candidates(w, q).doc_ids, expected)

    def test_dimension_mismatch(self):
        q = QueryInstance("a", [0], [[1.0, 2.0]], [0])
        with pytest.raises(ConfigError):
            rank_candidates(LinearModel([1.0]), q)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), c=st.floats(1e-3, 1e3))
    def test_scale_invariance(self, seed, c):
        rng = np.random.default_rng(seed)
        q = random_query(rng, 8, d=3)
        w = rng.standard_normal(3)
        s = np.sort(q.features @ w)
        assume(np.min(np.diff(s)) > 1e-9 * max(1.0, np.abs(s).max()))
        assert rank_candidates(LinearModel(c * w), q) == rank_candidates(LinearModel(w), q)

    def test_dataset_ranks_agree_with_per_query(self):
        rng = np.random.default_rng(1)
        ds = random_dataset(rng, 6, [3, 7, 1, 5, 5, 2])
        w = LinearModel(rng.standard_normal(3))
        ranks = dataset_ranks(w, ds)
        for i, q in enumerate(ds.queries):
            np.testing.assert_array_equal(ranks[i, :q.n_candidates], ranks_of_candidates(w, q))
            assert np.all(ranks[i, q.n_candidates:] == 0)


class TestRanking:
    def test_rank_of_and_swap(self):
        r = Ranking("a", [4, 8, 2])
        assert r.rank_of(2) == 3
        assert r.swapped(1, 3).doc_ids.tolist() == [2, 8, 4]
        assert r.rank_map() == {4: 1, 8: 2, 2: 3}
        with pytest.raises(DataError):
            r.rank_of(5)

    def test_duplicates_rejected(self):
        with pytest.raises(DataError):
            Ranking("a", [1, 1])


class TestSumRelevantRanks:
    def test_no_relevant(self):
        assert sum_relevant_ranks(Ranking("a", [0, 1, 2]), {0: 0, 1: 0, 2: 0}) == 0

    def test_positions_one_and_three(self):
        assert sum_relevant_ranks(Ranking("a", [0, 1, 2]), {0: 1, 1: 0, 2: 1}) == 4

    def test_matches_position_scan(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            ids = rng.permutation(10)
            rel = {int(d): int(rng.random() < 0.4) for d in ids}
            total = 0
            for pos, d in enumerate(ids, start=1):
                if rel[int(d)]:
                    total += pos
            assert sum_relevant_ranks(Ranking("a", ids), rel) == total

    def test_missing_relevance(self):
        with pytest.raises(DataError):
            sum_relevant_ranks(Ranking("a", [0, 1]), {0: 1})

    @settings(max_examples=50, deadline=None)
    @given(m=st.integers(1, 15), seed=st.integers(0, 2**32 - 1))
    def test_loss_bounds(self, m, seed):
        rng = np.random.default_rng(seed)
        q = random_query(rng, m)
        k = int(q.relevance.sum())
        loss = sum_relevant_ranks(rank_candidates(LinearModel(rng.standard_normal(3)), q), q)
        assert k * (k + 1) / 2 <= loss <= sum(range(m - k + 1, m + 1))

    @settings(max_examples=50, deadline=None)
    @given(m=st.integers(1, 15), seed=st.integers(0, 2**32 - 1))
    def test_permutation_sum_identity(self, m, seed):
        rng = np.random.default_rng(seed)
        a, b = Ranking("a", rng.permutation(m)), Ranking("a", rng.permutation(m))
        ra, rb = a.rank_map(), b.rank_map()
        assert sum(ra[d] - rb[d] for d in ra) == 0


class TestFullInfoRisk:
    def test_no_relevant_is_zero(self):
        ds = Dataset("t", [QueryInstance("a", [0, 1], np.eye(2), [0, 0])], 2)
        assert full_info_risk(LinearModel([1.0, 0.0]), ds) == 0

    def test_perfect_ranker(self):
        rng = np.random.default_rng(3)
        k = 3
        queries = []
        for i in range(5):
            rel = np.zeros(8, dtype=int)
            rel[rng.choice(8, k, replace=False)] = 4
            X = rng.standard_normal((8, 2))
            X[:, 0] = np.where(rel > 0, 10.0, 0.0)
            queries.append(QueryInstance(f"q{i}", np.arange(8), X, rel))
        ds = Dataset("t", queries, 2)
        assert full_info_risk(LinearModel([1.0, 0.0]), ds) == k * (k + 1) / 2

    def test_mean_of_per_query_oracle(self):
        rng = np.random.default_rng(4)
        ds = random_dataset(rng, 5, [4, 6, 3, 8, 2])
        w = LinearModel(rng.standard_normal(3))
        per_query = [sum_relevant_ranks(rank_candidates(w, q), q) for q in ds.queries]
        assert full_info_risk(w, ds) == pytest.approx(np.mean(per_query), abs=1e-12)
        np.testing.assert_array_equal(per_query_losses(w, ds), per_query)

    def test_empty_dataset(self):
        with pytest.raises(ConfigError):
            full_info_risk(LinearModel([1.0]), Dataset("t", [], 1))
