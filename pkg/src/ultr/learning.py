"""Pairwise hinge-loss rankers trained from clicks or from full relevance labels.

Every click contributes the hinge losses of the clicked document against all
other candidates of its query, weighted by the inverse of its (possibly
clipped) propensity::

    0.5 * |w|^2 + C / n * sum_j weight_j * sum_{y != y_j} max(0, 1 - w·(x_{y_j} - x_y))

With unit weights this is the naive click-trained Ranking SVM.  The
full-information ranker uses the same machinery with one example per relevant
document, hinged against the irrelevant candidates only and normalized by the
number of pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import product
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.optimize
import scipy.sparse

from .clicks import ClickLog
from .dataset import Dataset
from .errors import ConfigError, DataError, ParseError
from .estimators import EstimatorConfig, click_positions, estimate_risk
from .ranking import LinearModel, full_info_risk

logger = logging.getLogger(__name__)

DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
SOLVERS = ("lbfgs", "subgradient")


@dataclass(frozen=True, eq=False)
class TrainingExample:
    """One click: candidate features, the clicked row, and its IPS weight."""

    features: np.ndarray
    clicked: int
    ips_weight: float = 1.0

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2 or not 0 <= self.clicked < X.shape[0]:
            raise DataError("clicked index must address a row of the candidate features")
        object.__setattr__(self, "features", X)


@dataclass(eq=False)
class TrainingSet:
    """Columnar, aggregated example set.

    ``features``/``mask`` hold the padded candidate sets of the queries that
    occur; ``opponents`` marks which candidates each example of a query is
    hinged against.  Examples sharing (query, target) are merged by summing
    their weights.
    """

    features: np.ndarray  # (Q, M, d)
    mask: np.ndarray  # (Q, M)
    opponents: np.ndarray  # (Q, M)
    row: np.ndarray  # (u,)
    target: np.ndarray  # (u,)
    weight: np.ndarray  # (u,)
    counts: np.ndarray  # (u,) examples merged into each entry
    n: int  # number of examples before merging
    normalizer: float  # denominator of C

    @property
    def feature_dim(self) -> int:
        return self.features.shape[2]

    def __len__(self):
        return self.n

    def with_weights(self, weight) -> "TrainingSet":
        return TrainingSet(self.features, self.mask, self.opponents, self.row, self.target,
                           np.asarray(weight, dtype=np.float64), self.counts, self.n,
                           self.normalizer)

    def uniform(self) -> "TrainingSet":
        """Same examples with every weight 1 (merged counts are kept)."""
        return self.with_weights(self.counts)

    @property
    def examples(self) -> List[TrainingExample]:
        out = []
        for r, t, w, c in zip(self.row, self.target, self.weight, self.counts):
            k = int(self.mask[r].sum())
            ex = TrainingExample(self.features[r, :k], int(t), float(w / c))
            out.extend([ex] * int(c))
        return out


def _aggregate(features, mask, opponents, row, target, weight, normalizer) -> TrainingSet:
    n = row.shape[0]
    M = mask.shape[1]
    key = row * max(M, 1) + target
    uniq, inverse = np.unique(key, return_inverse=True)
    w = np.bincount(inverse, weights=weight, minlength=uniq.shape[0])
    counts = np.bincount(inverse, minlength=uniq.shape[0]).astype(np.float64)
    return TrainingSet(features, mask, opponents, uniq // max(M, 1), uniq % max(M, 1), w, counts,
                       n, float(normalizer))


def build_examples(log: ClickLog, ds: Dataset, estimator: EstimatorConfig = EstimatorConfig.naive()
                   ) -> TrainingSet:
    """Materialize one example per click with weight ``1 / weight(q)`` under ``estimator``."""
    rows, cols = click_positions(log, ds)
    inv = 1.0 / estimator.weights(log.propensity) if len(log) else np.zeros(0)
    used, local = np.unique(rows, return_inverse=True)
    pad = ds.padded
    X = pad.features[used] if used.size else np.zeros((0, 0, ds.feature_dim))
    mask = pad.mask[used] if used.size else np.zeros((0, 0), dtype=bool)
    return _aggregate(X, mask, mask, local.reshape(-1), cols, inv, len(log))


def examples_from_list(examples: Sequence[TrainingExample], feature_dim: Optional[int] = None
                       ) -> TrainingSet:
    """Pack explicit :class:`TrainingExample` objects (one query per example)."""
    if not examples:
        d = feature_dim or 0
        z = np.zeros(0, dtype=np.int64)
        return _aggregate(np.zeros((0, 0, d)), np.zeros((0, 0), bool), np.zeros((0, 0), bool),
                          z, z, np.zeros(0), 0)
    d = examples[0].features.shape[1]
    M = max(e.features.shape[0] for e in examples)
    X = np.zeros((len(examples), M, d))
    mask = np.zeros((len(examples), M), dtype=bool)
    for i, e in enumerate(examples):
        if e.features.shape[1] != d:
            raise DataError("examples disagree on feature dimension")
        X[i, :e.features.shape[0]] = e.features
        mask[i, :e.features.shape[0]] = True
    row = np.arange(len(examples))
    target = np.array([e.clicked for e in examples], dtype=np.int64)
    weight = np.array([e.ips_weight for e in examples], dtype=np.float64)
    return _aggregate(X, mask, mask, row, target, weight, len(examples))


def full_info_examples(ds: Dataset) -> TrainingSet:
    """One example per relevant document, hinged against the irrelevant ones of its query."""
    pad = ds.padded
    rel = pad.relevance > 0
    irrelevant = pad.mask & ~rel
    n_pairs = rel.sum(axis=1) * irrelevant.sum(axis=1)
    keep = np.flatnonzero(n_pairs > 0)
    P = int(n_pairs.sum())
    if P == 0:
        raise ConfigError("no query has both relevant and irrelevant documents")
    rows, cols = np.nonzero(rel[keep])
    return _aggregate(pad.features[keep], pad.mask[keep], irrelevant[keep], rows, cols,
                      np.ones(rows.shape[0]), P)


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


class _Objective:
    """Value and subgradient of the weighted pairwise hinge objective."""

    def __init__(self, ts: TrainingSet, C: float):
        if not np.all(np.isfinite(ts.features)):
            raise DataError("non-finite feature values in training examples")
        self.ts = ts
        self.C = float(C)
        Q, M = ts.mask.shape
        self.scale = self.C / ts.normalizer if ts.normalizer > 0 else 0.0
        u = ts.row.shape[0]
        self.rowsel = scipy.sparse.csr_matrix(
            (ts.weight, (ts.row, np.arange(u))), shape=(Q, u)
        )
        opp = ts.opponents[ts.row].copy()
        opp[np.arange(u), ts.target] = False
        self.opp = opp
        self.flat_target = ts.row * M + ts.target
        self.Q, self.M = Q, M

    def loss_terms(self, w):
        ts = self.ts
        S = ts.features @ w
        margin = S[ts.row, ts.target][:, None] - S[ts.row]
        h = np.where(self.opp, 1.0 - margin, 0.0)
        active = h > 0
        return h, active

    def __call__(self, w):
        w = np.asarray(w, dtype=np.float64)
        reg = 0.5 * float(w @ w)
        if self.ts.row.shape[0] == 0:
            return reg, w.copy()
        h, active = self.loss_terms(w)
        loss = float(self.ts.weight @ np.where(active, h, 0.0).sum(axis=1))
        act = active.astype(np.float64)
        coef = np.asarray(self.rowsel @ act)  # weighted opponent counts per (query, candidate)
        cnt = self.ts.weight * act.sum(axis=1)
        coef -= np.bincount(self.flat_target, weights=cnt, minlength=self.Q * self.M).reshape(
            self.Q, self.M
        )
        grad_loss = np.einsum("qm,qmd->d", coef, self.ts.features)
        return reg + self.scale * loss, w + self.scale * grad_loss


def propensity_objective(w, examples, C: float) -> float:
    """Objective value at ``w``: ``0.5|w|^2 + C/n * sum_j weight_j * sum_y hinge_j(y)``."""
    ts = examples if isinstance(examples, TrainingSet) else examples_from_list(list(examples))
    w = w.weights if isinstance(w, LinearModel) else np.asarray(w, dtype=np.float64)
    return _Objective(ts, C)(w)[0]


def hinge_sums(w, example: TrainingExample) -> float:
    """``sum_{y != clicked} max(0, 1 - w·(x_clicked - x_y))`` for a single example."""
    w = w.weights if isinstance(w, LinearModel) else np.asarray(w)
    s = example.features @ w
    h = np.maximum(0.0, 1.0 - (s[example.clicked] - s))
    h[example.clicked] = 0.0
    return float(h.sum())


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LearnerConfig:
    C: float = 1.0
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig.ips)
    tol: float = 1e-4
    max_epochs: int = 1000
    seed: int = 0
    solver: str = "lbfgs"

    def __post_init__(self):
        if not self.C > 0:
            raise ConfigError(f"C must be > 0, got {self.C}")
        if not self.tol > 0:
            raise ConfigError(f"tol must be > 0, got {self.tol}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}; expected one of {SOLVERS}")


@dataclass
class SolverTrace:
    objective: List[float] = field(default_factory=list)


def _lbfgs(obj: _Objective, w0, cfg: LearnerConfig, trace: SolverTrace):
    w = w0
    f = obj(w)[0]
    trace.objective.append(f)
    # Restart until a fresh run no longer improves by more than tol (relative).
    for _ in range(10):
        res = scipy.optimize.minimize(
            obj, w, jac=True, method="L-BFGS-B",
            options={"maxiter": cfg.max_epochs, "ftol": cfg.tol * 1e-3, "gtol": 1e-10,
                     "maxcor": 20},
        )
        if res.fun < f:
            improvement = (f - res.fun) / max(abs(f), 1.0)
            w, f = res.x, float(res.fun)
            trace.objective.append(f)
            if improvement < cfg.tol * 1e-2:
                break
        else:
            break
    return w


def _subgradient(obj: _Objective, w0, cfg: LearnerConfig, trace: SolverTrace):
    # Batch subgradient steps of size step0 / sqrt(t), keeping the best iterate.
    w = w0.copy()
    f, g = obj(w)
    best_w, best_f = w.copy(), f
    trace.objective.append(best_f)
    step0 = 1.0 / max(1.0, np.linalg.norm(g))
    window = 50
    for t in range(1, cfg.max_epochs + 1):
        w = w - (step0 / np.sqrt(t)) * g
        f, g = obj(w)
        if f < best_f:
            best_w, best_f = w.copy(), f
        trace.objective.append(best_f)
        if t > window:
            old = trace.objective[-window - 1]
            if (old - best_f) / max(abs(old), 1.0) < cfg.tol:
                break
    return best_w


def _solve(ts: TrainingSet, C: float, cfg: LearnerConfig, w0=None,
           trace: Optional[SolverTrace] = None) -> LinearModel:
    d = ts.feature_dim
    if ts.row.shape[0] == 0:
        return LinearModel.zeros(d)
    obj = _Objective(ts, C)
    w0 = np.zeros(d) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    trace = trace if trace is not None else SolverTrace()
    run = _lbfgs if cfg.solver == "lbfgs" else _subgradient
    w = run(obj, w0, cfg, trace)
    return LinearModel(w)


def _as_set(examples, feature_dim=None) -> TrainingSet:
    if isinstance(examples, TrainingSet):
        return examples
    return examples_from_list(list(examples), feature_dim)


def train_propensity_ranker(examples, cfg: LearnerConfig, w0=None, trace=None) -> LinearModel:
    """Minimize the IPS-weighted pairwise hinge objective.

    ``examples`` carry their weights already (see :func:`build_examples`).
    Training is deterministic: L-BFGS (default) or best-iterate subgradient
    descent, both started from ``w0`` (zeros by default).
    """
    return _solve(_as_set(examples), cfg.C, cfg, w0, trace)


def train_naive_ranker(examples, cfg: LearnerConfig, w0=None, trace=None) -> LinearModel:
    """Same objective with every click weighted 1."""
    return _solve(_as_set(examples).uniform(), cfg.C, cfg, w0, trace)


def train_full_info_ranker(ds: Dataset, C: float = 1.0, tol: float = 1e-4,
                           solver: str = "lbfgs") -> LinearModel:
    """Ranking SVM on every (relevant, irrelevant) pair within each query."""
    ts = full_info_examples(ds)
    return _solve(ts, C, LearnerConfig(C=C, tol=tol, solver=solver))


# ---------------------------------------------------------------------------
# Model selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HyperparamGrid:
    C: Tuple[float, ...] = DEFAULT_C_GRID
    tau: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        c = tuple(sorted({float(x) for x in self.C}))
        if not c:
            raise ConfigError("C grid must be non-empty")
        object.__setattr__(self, "C", c)
        if self.tau is not None:
            t = tuple(sorted({float(x) for x in self.tau}))
            if not t:
                raise ConfigError("tau grid must be non-empty when given")
            object.__setattr__(self, "tau", t)

    def points(self):
        taus = self.tau if self.tau is not None else (None,)
        return list(product(self.C, taus))


def _better(score, C, tau, best) -> bool:
    if best is None:
        return True
    b_score, b_C, b_tau = best
    if score < b_score:
        return True
    if score > b_score:
        return False
    t, bt = (-1.0 if tau is None else tau), (-1.0 if b_tau is None else b_tau)
    return (C, t) > (b_C, bt)


def cross_validate(train_log: ClickLog, val_log: ClickLog, ds: Dataset, grid: HyperparamGrid,
                   mode: str = "propensity", val_ds: Optional[Dataset] = None,
                   tol: float = 1e-4, solver: str = "lbfgs"):
    """Grid search scored on a validation click log.

    Propensity mode trains with IPS weights (clipped at each ``tau`` of the
    grid if given) and always scores with unclipped IPS; naive mode trains
    and scores with unit propensities.  Ties prefer larger C, then larger tau.

    Returns
    -------
    model : LinearModel
    params : dict
        ``C``, ``tau``, ``validation_risk`` and the ``scores`` of every point.
    """
    if mode not in ("propensity", "naive"):
        raise ConfigError(f"unknown mode {mode!r}")
    if len(train_log) == 0 or val_log.n_impressions == 0:
        raise ConfigError("cross-validation needs non-empty training and validation logs")
    val_ds = ds if val_ds is None else val_ds
    val_cfg = EstimatorConfig.ips() if mode == "propensity" else EstimatorConfig.naive()
    val_pos = click_positions(val_log, val_ds)

    sets = {}
    best, best_model, scores = None, None, {}
    for C, tau in grid.points():
        if mode == "naive":
            est = EstimatorConfig.naive()
        else:
            est = EstimatorConfig.ips() if tau is None else EstimatorConfig.clipped(tau)
        if est not in sets:
            sets[est] = build_examples(train_log, ds, est)
        ts = sets[est]
        cfg = LearnerConfig(C=C, estimator=est, tol=tol, solver=solver)
        model = _solve(ts, C, cfg)
        score = estimate_risk(model, val_log, val_ds, val_cfg, positions=val_pos).value
        scores[(C, tau)] = score
        logger.debug("cv %s C=%g tau=%s -> %.6f", mode, C, tau, score)
        if _better(score, C, tau, best):
            best, best_model = (score, C, tau), model
    score, C, tau = best
    return best_model, {"C": C, "tau": tau, "validation_risk": score, "scores": scores}


def select_full_info_ranker(train_ds: Dataset, val_ds: Dataset, C_grid=DEFAULT_C_GRID,
                            tol: float = 1e-4) -> Tuple[LinearModel, float]:
    """Full-information ranker with C chosen by validation full-information risk."""
    best = None
    for C in sorted(set(C_grid)):
        model = train_full_info_ranker(train_ds, C, tol)
        risk = full_info_risk(model, val_ds)
        if best is None or risk <= best[0]:
            best = (risk, C, model)
    return best[2], best[1]


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------


def format_model(model: LinearModel) -> str:
    return f"dim={model.dim}\n" + " ".join(f"{v:.17g}" for v in model.weights) + "\n"


def write_model(model: LinearModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_model(model))


def read_model(path) -> LinearModel:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("dim="):
        raise ParseError("expected 'dim=<d>' on line 1", 1, path)
    try:
        d = int(lines[0][4:])
        w = [float(v) for v in (lines[1].split() if len(lines) > 1 else [])]
    except ValueError as exc:
        raise ParseError(str(exc), 2, path) from None
    if len(w) != d:
        raise ParseError(f"expected {d} weights, got {len(w)}", 2, path)
    return LinearModel(np.array(w))
