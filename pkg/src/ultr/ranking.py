"""Linear scoring, deterministic ranking, and the sum-of-relevant-ranks loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .dataset import Dataset, QueryInstance
from .errors import ConfigError, DataError


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Scoring function ``f(x) = w · x``."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ConfigError("model weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, dim: int) -> "LinearModel":
        return cls(np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LinearModel):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    __hash__ = None

    def scores(self, features: np.ndarray) -> np.ndarray:
        if features.shape[-1] != self.dim:
            raise ConfigError(
                f"model dimension {self.dim} does not match feature dimension {features.shape[-1]}"
            )
        return features @ self.weights


@dataclass(frozen=True, eq=False)
class Ranking:
    """Ordered doc ids of one query, position 1 first."""

    query_id: str
    doc_ids: np.ndarray

    def __post_init__(self):
        ids = np.array(self.doc_ids, dtype=np.int64).reshape(-1)
        if np.unique(ids).shape[0] != ids.shape[0]:
            raise DataError(f"ranking for query {self.query_id!r} repeats doc ids")
        ids.flags.writeable = False
        object.__setattr__(self, "doc_ids", ids)
        object.__setattr__(self, "query_id", str(self.query_id))

    def __len__(self):
        return self.doc_ids.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Ranking):
            return NotImplemented
        return self.query_id == other.query_id and np.array_equal(self.doc_ids, other.doc_ids)

    __hash__ = None

    def rank_of(self, doc_id) -> int:
        hits = np.flatnonzero(self.doc_ids == doc_id)
        if hits.size == 0:
            raise DataError(f"doc {doc_id} not in ranking for query {self.query_id!r}")
        return int(hits[0]) + 1

    def rank_map(self) -> dict:
        return {int(d): r for r, d in enumerate(self.doc_ids, start=1)}

    def swapped(self, rank_a: int, rank_b: int) -> "Ranking":
        ids = self.doc_ids.copy()
        ids[[rank_a - 1, rank_b - 1]] = ids[[rank_b - 1, rank_a - 1]]
        return Ranking(self.query_id, ids)


def _order(scores: np.ndarray, doc_ids: np.ndarray) -> np.ndarray:
    # Descending score, ascending doc id on ties.
    return np.lexsort((doc_ids, -scores), axis=-1)


def rank_order(model: LinearModel, q: QueryInstance) -> np.ndarray:
    """Row indices of ``q``'s candidates in ranked order."""
    return _order(model.scores(q.features), q.doc_ids)


def rank_candidates(model: LinearModel, q: QueryInstance) -> Ranking:
    """Rank the candidates of ``q`` by descending ``w · x``; ties go to the smaller doc id."""
    return Ranking(q.query_id, q.doc_ids[rank_order(model, q)])


def ranks_of_candidates(model: LinearModel, q: QueryInstance) -> np.ndarray:
    """1-based rank of every candidate row of ``q`` under ``model``."""
    order = rank_order(model, q)
    ranks = np.empty(order.shape[0], dtype=np.int64)
    ranks[order] = np.arange(1, order.shape[0] + 1)
    return ranks


def dataset_ranks(model: LinearModel, ds: Dataset) -> np.ndarray:
    """Rank matrix of shape ``(n_queries, max_candidates)``; padding entries are 0."""
    pad = ds.padded
    scores = np.where(pad.mask, model.scores(pad.features), -np.inf)
    order = _order(scores, pad.doc_ids)
    nq, m = order.shape
    ranks = np.empty((nq, m), dtype=np.int64)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(1, m + 1), (nq, m)), axis=1)
    return np.where(pad.mask, ranks, 0)


def sum_relevant_ranks(ranking: Ranking, relevances: Union[Mapping, QueryInstance]) -> float:
    """Sum of the positions of the relevant documents in ``ranking``.

    ``relevances`` is either a mapping ``doc_id -> {0, 1}`` or the
    :class:`QueryInstance` the ranking was built from.
    """
    if isinstance(relevances, QueryInstance):
        q = relevances
        if len(ranking) != q.n_candidates:
            raise DataError(f"ranking does not cover the candidates of query {q.query_id!r}")
        rel = q.relevance[q.positions(ranking.doc_ids)]
    else:
        try:
            rel = np.array([relevances[int(d)] for d in ranking.doc_ids], dtype=np.float64)
        except KeyError as exc:
            raise DataError(f"missing relevance for doc {exc.args[0]}") from None
    positions = np.arange(1, len(ranking) + 1)
    return float(np.dot(positions, rel))


def full_info_risk(model: LinearModel, ds: Dataset) -> float:
    """Average sum of relevant ranks over all queries of ``ds``."""
    if len(ds) == 0:
        raise ConfigError("full-information risk of an empty dataset is undefined")
    ranks = dataset_ranks(model, ds)
    per_query = (ranks * ds.padded.relevance).sum(axis=1)
    return float(per_query.mean())


def per_query_losses(model: LinearModel, ds: Dataset) -> np.ndarray:
    ranks = dataset_ranks(model, ds)
    return (ranks * ds.padded.relevance).sum(axis=1)
