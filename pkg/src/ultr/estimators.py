"""Counterfactual risk estimates of ranking models from click logs.

The estimate of a model is the average, over logged impressions, of the sum
of the model's ranks of the clicked documents, each divided by a weight:
1 for the naive estimator, the logged propensity ``q`` for IPS, and
``max(tau, q)`` for clipped IPS.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Optional, Sequence, Tuple

import numpy as np

from .clicks import BiasProfile, ClickLog, NoiseParams, examination_probability
from .dataset import Dataset, QueryInstance
from .errors import ConfigError, DataError
from .ranking import (
    LinearModel,
    Ranking,
    dataset_ranks,
    full_info_risk,
    rank_candidates,
    ranks_of_candidates,
)

KINDS = ("naive", "ips", "clipped_ips")
DEFAULT_TAU_GRID = (1.0, 0.3, 0.1, 0.03, 0.01, 0.0)
MAX_EXACT_CANDIDATES = 12
TIE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class EstimatorConfig:
    """Which estimator to use; ``tau`` is the clipping threshold for ``clipped_ips``.

    ``tau = 0`` disables clipping (``max(0, q) = q``).
    """

    kind: str = "ips"
    tau: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown estimator kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "clipped_ips":
            if self.tau is None or not 0.0 <= float(self.tau) <= 1.0:
                raise ConfigError(f"clipped_ips needs tau in [0, 1], got {self.tau}")
            object.__setattr__(self, "tau", float(self.tau))
        elif self.tau is not None:
            raise ConfigError(f"tau is only meaningful for clipped_ips, got kind={self.kind!r}")

    @classmethod
    def naive(cls):
        return cls("naive")

    @classmethod
    def ips(cls):
        return cls("ips")

    @classmethod
    def clipped(cls, tau):
        return cls("clipped_ips", tau)

    def weights(self, propensity) -> np.ndarray:
        """Denominators applied to each click's rank."""
        q = np.asarray(propensity, dtype=np.float64)
        if self.kind == "naive":
            return np.ones_like(q)
        w = q if self.kind == "ips" else np.maximum(self.tau, q)
        if np.any(w <= 0) or np.any(~np.isfinite(w)):
            raise DataError("IPS weighting needs strictly positive, finite propensities")
        return w


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    n_clicks: int
    n_impressions: int


def click_positions(log: ClickLog, ds: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    """Row (query) and column (candidate) index in ``ds`` of every logged click."""
    rows = np.empty(len(log), dtype=np.int64)
    cols = np.empty(len(log), dtype=np.int64)
    if len(log) == 0:
        return rows, cols
    table = np.array([ds.index_of(qid) for qid in log.query_ids], dtype=np.int64)
    rows[:] = table[log.query_index]
    order = np.argsort(log.query_index, kind="stable")
    bounds = np.flatnonzero(np.diff(log.query_index[order])) + 1
    for chunk in np.split(order, bounds):
        q = ds.queries[rows[chunk[0]]]
        cols[chunk] = q.positions(log.clicked_doc_id[chunk])
    return rows, cols


def per_impression_estimates(model: LinearModel, log: ClickLog, ds: Dataset,
                             cfg: EstimatorConfig, positions=None) -> np.ndarray:
    """Per-impression estimates; their mean is :func:`estimate_risk`."""
    if log.n_impressions == 0:
        return np.zeros(0)
    if len(log) == 0:
        return np.zeros(log.n_impressions)
    rows, cols = click_positions(log, ds) if positions is None else positions
    ranks = dataset_ranks(model, ds)[rows, cols]
    contrib = ranks / cfg.weights(log.propensity)
    base = int(log.impression_id.min()) if log.impression_id.min() < 0 else 0
    return np.bincount(log.impression_id - base, weights=contrib, minlength=log.n_impressions)


def estimate_risk(model: LinearModel, log: ClickLog, ds: Dataset, cfg: EstimatorConfig,
                  positions=None) -> RiskEstimate:
    """Naive, IPS or clipped-IPS empirical risk of ``model`` on ``log``.

    Only the propensities of clicked documents enter the estimate.  The
    model's ranking is computed afresh on the full candidate set of each
    logged query and generally differs from the presented one.
    """
    if len(log) == 0 or log.n_impressions == 0:
        return RiskEstimate(0.0, len(log), log.n_impressions)
    rows, cols = click_positions(log, ds) if positions is None else positions
    ranks = dataset_ranks(model, ds)[rows, cols]
    total = float(np.sum(ranks / cfg.weights(log.propensity)))
    return RiskEstimate(total / log.n_impressions, len(log), log.n_impressions)


# ---------------------------------------------------------------------------
# Exact small-instance oracles
# ---------------------------------------------------------------------------


def _presented_ranks(q: QueryInstance, presented: Ranking) -> np.ndarray:
    if len(presented) != q.n_candidates:
        raise DataError(f"presented ranking does not cover query {q.query_id!r}")
    ranks = np.empty(q.n_candidates, dtype=np.int64)
    ranks[q.positions(presented.doc_ids)] = np.arange(1, q.n_candidates + 1)
    return ranks


def exact_expected_ips(model: LinearModel, q_instance: QueryInstance, presented: Ranking,
                       profile: BiasProfile, noise: NoiseParams) -> float:
    """Expected per-impression IPS estimate, by enumerating every click pattern.

    Each candidate is clicked independently with probability
    ``p_r * eps`` where ``r`` is its presented rank; the estimate of a
    pattern is the sum over clicked documents of ``model rank / p_r``.
    The expectation is summed over all ``2**m`` patterns, so ``m`` is
    limited to 12.
    """
    m = q_instance.n_candidates
    if m > MAX_EXACT_CANDIDATES:
        raise ConfigError(f"exact enumeration limited to {MAX_EXACT_CANDIDATES} candidates, got {m}")
    shown = _presented_ranks(q_instance, presented)
    p = np.asarray(examination_probability(shown, profile))
    click_prob = p * noise.click_given_exam(q_instance.relevance)
    model_ranks = ranks_of_candidates(model, q_instance)

    patterns = np.array(list(product((0, 1), repeat=m)), dtype=bool)
    prob = np.prod(np.where(patterns, click_prob, 1.0 - click_prob), axis=1)
    value = patterns @ (model_ranks / p)
    return float(prob @ value)


def expected_ips_closed_form(model: LinearModel, q_instance: QueryInstance,
                             noise: NoiseParams) -> float:
    """``sum_y eps(y) * rank(y | model)``; the presented ranking cancels out."""
    eps = noise.click_given_exam(q_instance.relevance)
    return float(eps @ ranks_of_candidates(model, q_instance))


def expected_ips_risk(model: LinearModel, ds: Dataset, profile: BiasProfile, noise: NoiseParams,
                      presenter: Optional[LinearModel] = None) -> float:
    """Mean of :func:`exact_expected_ips` over the queries of ``ds``."""
    presenter = presenter or LinearModel.zeros(ds.feature_dim)
    vals = [
        exact_expected_ips(model, q, rank_candidates(presenter, q), profile, noise)
        for q in ds.queries
    ]
    return float(np.mean(vals))


def _sign(x: float) -> int:
    return 0 if abs(x) < TIE_TOLERANCE else (1 if x > 0 else -1)


def verify_order_preservation(models: Sequence[LinearModel], ds: Dataset, profile: BiasProfile,
                              noise: NoiseParams, presenter: Optional[LinearModel] = None) -> bool:
    """Check that noisy-click IPS orders two models like their true risk does.

    Compares ``sign(E[R_ips(S1)] - E[R_ips(S2)])`` with ``sign(R(S1) - R(S2))``,
    counting differences below 1e-9 as ties.
    """
    first, second = models
    d_est = expected_ips_risk(first, ds, profile, noise, presenter) - expected_ips_risk(
        second, ds, profile, noise, presenter
    )
    d_true = full_info_risk(first, ds) - full_info_risk(second, ds)
    return _sign(d_est) == _sign(d_true)
