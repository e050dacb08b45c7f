"""Position-biased, noisy click simulation.

Users examine the result at rank ``r`` with probability ``(1/r)**eta``,
independently across ranks, and click an examined result with probability
``eps_plus`` if it is relevant and ``eps_minus`` otherwise.  Every click is
logged together with the examination probability of the rank it was shown at.

Randomness is counter-based: impression ``i`` always consumes the same slice
of a Philox stream keyed by the seed, so any range of impressions can be
simulated on its own and the result does not depend on block size or order.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DataError, DomainError, ParseError
from .ranking import LinearModel, Ranking, rank_order

PROPENSITY_DIGITS = 12


@dataclass(frozen=True)
class BiasProfile:
    """Examination probability ``(1/r)**eta`` at rank ``r``."""

    eta: float = 1.0

    def __post_init__(self):
        eta = float(self.eta)
        if not np.isfinite(eta) or eta < 0:
            raise ConfigError(f"eta must be finite and >= 0, got {self.eta}")
        object.__setattr__(self, "eta", eta)

    def propensity(self, ranks) -> np.ndarray:
        return examination_probability(ranks, self)


@dataclass(frozen=True)
class NoiseParams:
    """Click probabilities of examined relevant (``eps_plus``) and irrelevant (``eps_minus``) results.

    ``eps_plus == eps_minus`` is accepted for analytical use (it erases every
    relevance signal); the simulators require ``eps_plus > eps_minus``.
    """

    eps_plus: float = 1.0
    eps_minus: float = 0.1

    def __post_init__(self):
        p, m = float(self.eps_plus), float(self.eps_minus)
        if not (0.0 <= m <= p <= 1.0):
            raise ConfigError(f"need 0 <= eps_minus <= eps_plus <= 1, got ({p}, {m})")
        object.__setattr__(self, "eps_plus", p)
        object.__setattr__(self, "eps_minus", m)

    def check_strict(self):
        if not self.eps_plus > self.eps_minus:
            raise ConfigError(
                f"click noise must satisfy eps_plus > eps_minus, got ({self.eps_plus}, {self.eps_minus})"
            )

    def click_given_exam(self, relevance) -> np.ndarray:
        rel = np.asarray(relevance)
        return np.where(rel > 0, self.eps_plus, self.eps_minus)


def examination_probability(r, profile: BiasProfile):
    """``(1/r)**eta``; 1 at the top rank for every ``eta``.

    Accepts a scalar or an array of ranks and returns the same shape.
    """
    ranks = np.asarray(r, dtype=np.float64)
    if np.any(ranks < 1) or np.any(~np.isfinite(ranks)):
        raise DomainError(f"ranks must be >= 1, got {r}")
    p = np.power(ranks, -profile.eta)
    return float(p) if np.ndim(p) == 0 else p


@dataclass(frozen=True)
class ClickRecord:
    query_id: str
    presented_ranking: Ranking
    clicked_doc_id: int
    presented_rank: int
    propensity: float
    impression_id: int = -1


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    """Per-impression examination and click indicators by rank (0/1 matrices)."""

    examined: np.ndarray
    clicked: np.ndarray

    @property
    def observed(self) -> np.ndarray:
        return self.examined


@dataclass(eq=False)
class ClickLog:
    """Columnar click log: one row per click.

    Query ids and presented rankings are stored once in lookup tables and
    referenced by index from each row.
    """

    query_ids: Tuple[str, ...]
    rankings: Tuple[Ranking, ...]
    impression_id: np.ndarray
    query_index: np.ndarray
    ranking_index: np.ndarray
    clicked_doc_id: np.ndarray
    presented_rank: np.ndarray
    propensity: np.ndarray
    n_impressions: int
    profile: Optional[BiasProfile] = None
    noise: Optional[NoiseParams] = None
    seed: Optional[int] = None
    assumed: object = None
    max_rank: int = field(default=0)

    def __post_init__(self):
        n = self.impression_id.shape[0]
        for name in ("query_index", "ranking_index", "clicked_doc_id", "presented_rank", "propensity"):
            if getattr(self, name).shape != (n,):
                raise DataError(f"click log column {name} has wrong length")
        if self.max_rank == 0 and self.rankings:
            self.max_rank = max(len(r) for r in self.rankings)
        if n > self.n_impressions * max(self.max_rank, 1):
            raise DataError("more clicks than presented positions")

    def __len__(self):
        return self.impression_id.shape[0]

    @property
    def n_clicks(self) -> int:
        return len(self)

    def record(self, i: int) -> ClickRecord:
        return ClickRecord(
            query_id=self.query_ids[self.query_index[i]],
            presented_ranking=self.rankings[self.ranking_index[i]],
            clicked_doc_id=int(self.clicked_doc_id[i]),
            presented_rank=int(self.presented_rank[i]),
            propensity=float(self.propensity[i]),
            impression_id=int(self.impression_id[i]),
        )

    @property
    def records(self) -> List[ClickRecord]:
        return [self.record(i) for i in range(len(self))]

    def __iter__(self) -> Iterator[ClickRecord]:
        return (self.record(i) for i in range(len(self)))

    def with_propensity(self, propensity, assumed=None) -> "ClickLog":
        propensity = np.asarray(propensity, dtype=np.float64)
        return replace(self, propensity=propensity, assumed=assumed)

    def record_query_ids(self) -> np.ndarray:
        return np.asarray(self.query_ids, dtype=object)[self.query_index]


def empty_log(n_impressions=0, max_rank=0, **config) -> ClickLog:
    z = np.zeros(0, dtype=np.int64)
    return ClickLog((), (), z, z, z, z, z, np.zeros(0), n_impressions, max_rank=max_rank, **config)


# ---------------------------------------------------------------------------
# Counter-based randomness
# ---------------------------------------------------------------------------


def _stream_key(seed, *tags) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(t) for t in tags))
    return ss.generate_state(2, np.uint64)


def impression_uniforms(seed, start: int, count: int, width: int, tags=()) -> np.ndarray:
    """Uniforms for impressions ``start .. start+count-1``; row ``i`` depends only on
    ``(seed, tags, start + i)``.  ``width`` must be a multiple of 4."""
    if width % 4:
        raise ValueError("width must be a multiple of 4")
    bg = np.random.Philox(key=_stream_key(seed, *tags))
    if start:
        bg.advance(start * (width // 4))
    return np.random.Generator(bg).random((count, width))


def _padded_width(n: int) -> int:
    return -(-n // 4) * 4


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class _Presentation:
    """Presented rankings of every query, in rank-position layout."""

    rankings: Tuple[Ranking, ...]
    doc_by_pos: np.ndarray  # (nq, M)
    rel_by_pos: np.ndarray  # (nq, M)
    n_candidates: np.ndarray  # (nq,)

    @classmethod
    def build(cls, ds: Dataset, ranker: LinearModel, orders: Optional[Sequence[np.ndarray]] = None):
        nq = len(ds)
        M = max((q.n_candidates for q in ds.queries), default=0)
        doc_by_pos = np.zeros((nq, M), dtype=np.int64)
        rel_by_pos = np.zeros((nq, M))
        rankings = []
        for i, q in enumerate(ds.queries):
            order = rank_order(ranker, q) if orders is None else orders[i]
            k = q.n_candidates
            doc_by_pos[i, :k] = q.doc_ids[order]
            rel_by_pos[i, :k] = q.relevance[order]
            rankings.append(Ranking(q.query_id, q.doc_ids[order]))
        counts = np.array([q.n_candidates for q in ds.queries], dtype=np.int64)
        return cls(tuple(rankings), doc_by_pos, rel_by_pos, counts)


def _simulate_block(pres: _Presentation, profile, noise, seed, start, count, tags=()):
    nq, M = pres.doc_by_pos.shape
    width = _padded_width(1 + 2 * M)
    u = impression_uniforms(seed, start, count, width, tags)
    qidx = np.minimum((u[:, 0] * nq).astype(np.int64), nq - 1)
    p = examination_probability(np.arange(1, M + 1), profile)
    valid = np.arange(M)[None, :] < pres.n_candidates[qidx][:, None]
    examined = (u[:, 1:1 + M] < p[None, :]) & valid
    eps = np.where(pres.rel_by_pos[qidx] > 0, noise.eps_plus, noise.eps_minus)
    clicked = examined & (u[:, 1 + M:1 + 2 * M] < eps)
    return qidx, examined, clicked


def _block_size(M: int) -> int:
    return max(1, (1 << 21) // _padded_width(1 + 2 * M))


def _assemble(pres: _Presentation, ds: Dataset, blocks, n_impressions, profile, noise, seed) -> ClickLog:
    imp, qix, rank = [], [], []
    for start, qidx, clicked in blocks:
        b, r = np.nonzero(clicked)
        imp.append(start + b)
        qix.append(qidx[b])
        rank.append(r + 1)
    cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)  # noqa: E731
    imp, qix, rank = cat(imp), cat(qix), cat(rank)
    doc = pres.doc_by_pos[qix, rank - 1] if rank.size else np.zeros(0, dtype=np.int64)
    q = examination_probability(rank, profile) if rank.size else np.zeros(0)
    return ClickLog(
        query_ids=tuple(ds.query_ids),
        rankings=pres.rankings,
        impression_id=imp,
        query_index=qix,
        ranking_index=qix.copy(),
        clicked_doc_id=doc,
        presented_rank=rank,
        propensity=np.asarray(q, dtype=np.float64),
        n_impressions=int(n_impressions),
        profile=profile,
        noise=noise,
        seed=seed,
        max_rank=int(pres.n_candidates.max()) if len(pres.n_candidates) else 0,
    )


def simulate_clicks(ds: Dataset, ranker: LinearModel, profile: BiasProfile, noise: NoiseParams,
                    n_impressions: int, seed, return_trace: bool = False):
    """Simulate ``n_impressions`` query impressions and log every click.

    Each impression draws a query uniformly (with replacement), presents the
    ranking of ``ranker``, examines each rank independently with probability
    ``(1/r)**eta`` and clicks examined results with the noise probabilities.

    Returns
    -------
    log : ClickLog
    trace : SimulationTrace
        Only when ``return_trace`` is true.
    """
    noise.check_strict()
    if n_impressions < 1:
        raise ConfigError(f"n_impressions must be >= 1, got {n_impressions}")
    if len(ds) == 0:
        raise ConfigError("cannot simulate clicks on an empty dataset")
    pres = _Presentation.build(ds, ranker)
    M = pres.doc_by_pos.shape[1]
    bs = _block_size(M)
    blocks, exams, clicks = [], [], []
    for start in range(0, n_impressions, bs):
        count = min(bs, n_impressions - start)
        qidx, examined, clicked = _simulate_block(pres, profile, noise, seed, start, count)
        blocks.append((start, qidx, clicked))
        if return_trace:
            exams.append(examined)
            clicks.append(clicked)
    log = _assemble(pres, ds, blocks, n_impressions, profile, noise, seed)
    if return_trace:
        trace = SimulationTrace(np.concatenate(exams).astype(np.int8), np.concatenate(clicks).astype(np.int8))
        return log, trace
    return log


def simulate_until_clicks(ds: Dataset, ranker: LinearModel, profile: BiasProfile, noise: NoiseParams,
                          n_clicks: int, seed, max_impressions: int = 10**8) -> ClickLog:
    """Simulate impressions until at least ``n_clicks`` clicks are logged.

    Stops at the first impression whose clicks reach the target, so the
    result equals ``simulate_clicks`` with that many impressions.
    """
    noise.check_strict()
    if n_clicks < 1:
        raise ConfigError(f"n_clicks must be >= 1, got {n_clicks}")
    if len(ds) == 0:
        raise ConfigError("cannot simulate clicks on an empty dataset")
    pres = _Presentation.build(ds, ranker)
    bs = _block_size(pres.doc_by_pos.shape[1])
    blocks, total, start = [], 0, 0
    while total < n_clicks:
        if start >= max_impressions:
            raise ConfigError(f"fewer than {n_clicks} clicks after {max_impressions} impressions")
        qidx, _, clicked = _simulate_block(pres, profile, noise, seed, start, bs)
        per_imp = clicked.sum(axis=1)
        cum = total + np.cumsum(per_imp)
        hit = np.flatnonzero(cum >= n_clicks)
        if hit.size:
            stop = int(hit[0]) + 1
            blocks.append((start, qidx[:stop], clicked[:stop]))
            start += stop
            break
        blocks.append((start, qidx, clicked))
        total = int(cum[-1])
        start += bs
    return _assemble(pres, ds, blocks, start, profile, noise, seed)


def empirical_click_rate_by_rank(log: ClickLog, n_ranks: Optional[int] = None) -> np.ndarray:
    """Clicks at each presented rank divided by the number of impressions."""
    n_ranks = log.max_rank if n_ranks is None else n_ranks
    if log.n_impressions <= 0:
        if len(log):
            raise DataError("click log has clicks but no impressions")
        return np.zeros(n_ranks)
    counts = np.bincount(log.presented_rank, minlength=n_ranks + 1)[1:n_ranks + 1]
    return counts / log.n_impressions


def expected_click_rate_by_rank(ds: Dataset, ranker: LinearModel, profile: BiasProfile,
                                noise: NoiseParams) -> np.ndarray:
    """Closed-form expectation of :func:`empirical_click_rate_by_rank` under uniform query draws."""
    pres = _Presentation.build(ds, ranker)
    M = pres.doc_by_pos.shape[1]
    valid = np.arange(M)[None, :] < pres.n_candidates[:, None]
    eps = np.where(pres.rel_by_pos > 0, noise.eps_plus, noise.eps_minus) * valid
    p = examination_probability(np.arange(1, M + 1), profile)
    return p * eps.mean(axis=0)


def expected_noisy_click_fraction(ds: Dataset, ranker: LinearModel, profile: BiasProfile,
                                  noise: NoiseParams) -> float:
    """Expected share of clicks that land on irrelevant documents."""
    pres = _Presentation.build(ds, ranker)
    M = pres.doc_by_pos.shape[1]
    valid = np.arange(M)[None, :] < pres.n_candidates[:, None]
    p = examination_probability(np.arange(1, M + 1), profile)[None, :] * valid
    rel = pres.rel_by_pos
    good = (p * rel * noise.eps_plus).sum()
    bad = (p * (1 - rel) * noise.eps_minus).sum()
    return float(bad / (good + bad))


def noisy_click_fraction(log: ClickLog, ds: Dataset) -> float:
    """Observed share of clicks on irrelevant documents."""
    if len(log) == 0:
        return 0.0
    irrelevant = 0
    qids = log.query_ids
    for qi in np.unique(log.query_index):
        q = ds.query(qids[qi])
        sel = log.query_index == qi
        rel = q.relevance[q.positions(log.clicked_doc_id[sel])]
        irrelevant += int((rel == 0).sum())
    return irrelevant / len(log)


# ---------------------------------------------------------------------------
# TSV serialization
# ---------------------------------------------------------------------------

TSV_COLUMNS = ("impression_id", "query_id", "presented_ranking", "clicked_doc_id",
               "presented_rank", "propensity")


def format_click_log(log: ClickLog) -> str:
    buf = io.StringIO()
    meta = [f"n_impressions={log.n_impressions}", f"max_rank={log.max_rank}"]
    if log.profile is not None:
        meta.append(f"eta={log.profile.eta!r}")
    if log.noise is not None:
        meta.append(f"eps_plus={log.noise.eps_plus!r}")
        meta.append(f"eps_minus={log.noise.eps_minus!r}")
    if log.seed is not None:
        meta.append(f"seed={log.seed}")
    if log.assumed is not None:
        meta.append(f"assumed={_describe_assumed(log.assumed)}")
    buf.write("# " + " ".join(meta) + "\n")
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(TSV_COLUMNS)
    ranking_text = [",".join(str(d) for d in r.doc_ids) for r in log.rankings]
    for i in range(len(log)):
        writer.writerow((
            int(log.impression_id[i]),
            log.query_ids[log.query_index[i]],
            ranking_text[log.ranking_index[i]],
            int(log.clicked_doc_id[i]),
            int(log.presented_rank[i]),
            f"{log.propensity[i]:.{PROPENSITY_DIGITS}g}",
        ))
    return buf.getvalue()


def _describe_assumed(assumed) -> str:
    if isinstance(assumed, BiasProfile):
        return f"eta:{assumed.eta!r}"
    return type(assumed).__name__


def write_click_log(log: ClickLog, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_click_log(log))


def read_click_log(path) -> ClickLog:
    """Read a click log TSV.  Propensities come back at 12 significant digits."""
    meta = {}
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    body_start = 0
    while body_start < len(lines) and lines[body_start].startswith("#"):
        for tok in lines[body_start][1:].split():
            k, _, v = tok.partition("=")
            meta[k] = v
        body_start += 1
    reader = csv.reader(lines[body_start:], delimiter="\t")
    header = next(reader, None)
    if header is None or tuple(header) != TSV_COLUMNS:
        raise ParseError(f"expected header {TSV_COLUMNS}", body_start + 1, path)
    qid_index, rank_index = {}, {}
    rankings = []
    cols = {c: [] for c in ("imp", "q", "r", "doc", "rank", "p")}
    for lineno, row in enumerate(reader, start=body_start + 2):
        if not row:
            continue
        if len(row) != len(TSV_COLUMNS):
            raise ParseError(f"expected {len(TSV_COLUMNS)} columns, got {len(row)}", lineno, path)
        imp, qid, ranking, doc, rank, prop = row
        try:
            doc_ids = tuple(int(d) for d in ranking.split(","))
            vals = int(imp), int(doc), int(rank), float(prop)
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from None
        if not (1 <= vals[2] <= len(doc_ids)) or doc_ids[vals[2] - 1] != vals[1]:
            raise ParseError("presented_rank does not point at clicked_doc_id", lineno, path)
        qi = qid_index.setdefault(qid, len(qid_index))
        key = (qid, doc_ids)
        if key not in rank_index:
            rank_index[key] = len(rankings)
            rankings.append(Ranking(qid, np.array(doc_ids)))
        cols["imp"].append(vals[0])
        cols["q"].append(qi)
        cols["r"].append(rank_index[key])
        cols["doc"].append(vals[1])
        cols["rank"].append(vals[2])
        cols["p"].append(vals[3])
    n_imp = int(meta.get("n_impressions", (max(cols["imp"]) + 1) if cols["imp"] else 0))
    profile = BiasProfile(float(meta["eta"])) if "eta" in meta else None
    noise = None
    if "eps_plus" in meta and "eps_minus" in meta:
        noise = NoiseParams(float(meta["eps_plus"]), float(meta["eps_minus"]))
    as_int = lambda xs: np.array(xs, dtype=np.int64)  # noqa: E731
    return ClickLog(
        query_ids=tuple(qid_index),
        rankings=tuple(rankings),
        impression_id=as_int(cols["imp"]),
        query_index=as_int(cols["q"]),
        ranking_index=as_int(cols["r"]),
        clicked_doc_id=as_int(cols["doc"]),
        presented_rank=as_int(cols["rank"]),
        propensity=np.array(cols["p"], dtype=np.float64),
        n_impressions=n_imp,
        profile=profile,
        noise=noise,
        seed=int(meta["seed"]) if "seed" in meta else None,
        max_rank=int(meta.get("max_rank", 0)),
    )
