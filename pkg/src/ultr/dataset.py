"""Full-information ranking corpora.

Queries carry their complete candidate sets with dense feature matrices and
graded relevance labels.  Corpora come either from LETOR/SVMlight text files
or from a synthetic generator with a hidden linear ground truth.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError

DEFAULT_BINARIZE_AT = 3
SPLITS = ("train", "validation", "test")
FEATURE_PRECISION = 6


class QueryInstance:
    """One query with its candidate documents.

    Parameters
    ----------
    query_id : str
        Identifier, unique within a split.
    doc_ids : array-like of int, shape (m,)
        Unique document identifiers.
    features : array-like of float, shape (m, d)
        One feature vector per candidate.
    grades : array-like of int, shape (m,)
        Graded relevance labels (>= 0).
    binarize_at : int
        Documents with ``grade >= binarize_at`` are relevant.
    """

    __slots__ = ("query_id", "doc_ids", "features", "grades", "relevance", "binarize_at")

    def __init__(self, query_id, doc_ids, features, grades, binarize_at=DEFAULT_BINARIZE_AT):
        doc_ids = np.asarray(doc_ids, dtype=np.int64)
        features = np.asarray(features, dtype=np.float64)
        grades = np.asarray(grades, dtype=np.int64)
        m = doc_ids.shape[0]
        if m == 0:
            raise DataError(f"query {query_id!r} has no candidates")
        if features.ndim != 2 or features.shape[0] != m or grades.shape != (m,):
            raise DataError(f"query {query_id!r}: inconsistent candidate array shapes")
        if np.unique(doc_ids).shape[0] != m:
            raise DataError(f"query {query_id!r}: duplicate doc_ids")
        if not np.all(np.isfinite(features)):
            raise DataError(f"query {query_id!r}: non-finite feature values")
        if np.any(grades < 0):
            raise DataError(f"query {query_id!r}: negative relevance grade")
        for arr in (doc_ids, features, grades):
            arr.flags.writeable = False
        self.query_id = str(query_id)
        self.doc_ids = doc_ids
        self.features = features
        self.grades = grades
        self.binarize_at = int(binarize_at)
        self.relevance = (grades >= self.binarize_at).astype(np.int64)
        self.relevance.flags.writeable = False

    @property
    def n_candidates(self) -> int:
        return self.doc_ids.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def candidates(self):
        """List of ``(doc_id, features, grade, binary_relevance)`` tuples."""
        return [
            (int(d), self.features[i], int(self.grades[i]), int(self.relevance[i]))
            for i, d in enumerate(self.doc_ids)
        ]

    def positions(self, doc_ids) -> np.ndarray:
        """Map doc ids to row indices of the candidate arrays."""
        doc_ids = np.asarray(doc_ids, dtype=np.int64)
        sorter = np.argsort(self.doc_ids, kind="stable")
        idx = np.searchsorted(self.doc_ids, doc_ids, sorter=sorter)
        idx = np.clip(idx, 0, self.n_candidates - 1)
        pos = sorter[idx]
        if np.any(self.doc_ids[pos] != doc_ids):
            missing = doc_ids[self.doc_ids[pos] != doc_ids]
            raise DataError(f"query {self.query_id!r}: unknown doc_ids {missing.tolist()}")
        return pos

    def with_features(self, features) -> "QueryInstance":
        return QueryInstance(self.query_id, self.doc_ids, features, self.grades, self.binarize_at)

    def __eq__(self, other):
        if not isinstance(other, QueryInstance):
            return NotImplemented
        return (
            self.query_id == other.query_id
            and self.binarize_at == other.binarize_at
            and np.array_equal(self.doc_ids, other.doc_ids)
            and np.array_equal(self.grades, other.grades)
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"QueryInstance(query_id={self.query_id!r}, n_candidates={self.n_candidates}, "
            f"n_relevant={int(self.relevance.sum())})"
        )


@dataclass(eq=False)
class PaddedArrays:
    """Rectangular view of a dataset; rows are queries, padded to ``max_candidates``."""

    features: np.ndarray  # (n_queries, max_candidates, d)
    relevance: np.ndarray  # (n_queries, max_candidates), 0.0 on padding
    mask: np.ndarray  # (n_queries, max_candidates), True for real candidates
    doc_ids: np.ndarray  # (n_queries, max_candidates), int64 max on padding
    n_candidates: np.ndarray  # (n_queries,)


@dataclass(eq=False)
class Dataset:
    """A split of a full-information corpus."""

    split: str
    queries: List[QueryInstance]
    feature_dim: int
    true_weights: Optional[np.ndarray] = None
    _padded: Optional[PaddedArrays] = field(default=None, init=False, repr=False)
    _index: Optional[Dict[str, int]] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.queries = list(self.queries)
        ids = [q.query_id for q in self.queries]
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate query_ids in {self.split} split")
        for q in self.queries:
            if q.feature_dim != self.feature_dim:
                raise DataError(
                    f"query {q.query_id!r} has feature dimension {q.feature_dim}, "
                    f"expected {self.feature_dim}"
                )

    def __len__(self):
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.split == other.split
            and self.feature_dim == other.feature_dim
            and self.queries == other.queries
        )

    __hash__ = None

    @property
    def query_ids(self) -> List[str]:
        return [q.query_id for q in self.queries]

    def index_of(self, query_id) -> int:
        if self._index is None:
            self._index = {q.query_id: i for i, q in enumerate(self.queries)}
        try:
            return self._index[str(query_id)]
        except KeyError:
            raise DataError(f"unknown query_id {query_id!r} in {self.split} split") from None

    def query(self, query_id) -> QueryInstance:
        return self.queries[self.index_of(query_id)]

    @property
    def padded(self) -> PaddedArrays:
        if self._padded is None:
            self._padded = _pad(self.queries, self.feature_dim)
        return self._padded

    @property
    def min_candidates(self) -> int:
        return min(q.n_candidates for q in self.queries) if self.queries else 0

    def relevant_fraction(self) -> float:
        n_docs = sum(q.n_candidates for q in self.queries)
        n_rel = sum(int(q.relevance.sum()) for q in self.queries)
        return n_rel / n_docs if n_docs else 0.0


def _pad(queries: Sequence[QueryInstance], d: int) -> PaddedArrays:
    nq = len(queries)
    counts = np.array([q.n_candidates for q in queries], dtype=np.int64)
    m = int(counts.max()) if nq else 0
    X = np.zeros((nq, m, d))
    rel = np.zeros((nq, m))
    mask = np.zeros((nq, m), dtype=bool)
    ids = np.full((nq, m), np.iinfo(np.int64).max, dtype=np.int64)
    for i, q in enumerate(queries):
        k = q.n_candidates
        X[i, :k] = q.features
        rel[i, :k] = q.relevance
        mask[i, :k] = True
        ids[i, :k] = q.doc_ids
    for arr in (X, rel, mask, ids, counts):
        arr.flags.writeable = False
    return PaddedArrays(X, rel, mask, ids, counts)


# ---------------------------------------------------------------------------
# LETOR / SVMlight text format
# ---------------------------------------------------------------------------


def _parse_line(line: str, lineno: int, path):
    body = line.split("#", 1)[0].strip()
    if not body:
        return None
    tokens = body.split()
    try:
        grade = int(tokens[0])
    except ValueError:
        try:
            as_float = float(tokens[0])
        except ValueError:
            raise ParseError(f"bad relevance grade {tokens[0]!r}", lineno, path) from None
        if not as_float.is_integer():
            raise ParseError(f"non-integer relevance grade {tokens[0]!r}", lineno, path)
        grade = int(as_float)
    if grade < 0:
        raise ParseError(f"negative relevance grade {grade}", lineno, path)
    if len(tokens) < 2 or not tokens[1].startswith("qid:") or len(tokens[1]) == 4:
        raise ParseError("expected 'qid:<id>' as second token", lineno, path)
    qid = tokens[1][4:]
    feats = {}
    for tok in tokens[2:]:
        idx, sep, val = tok.partition(":")
        if not sep:
            raise ParseError(f"bad feature token {tok!r}", lineno, path)
        try:
            i = int(idx)
            v = float(val)
        except ValueError:
            raise ParseError(f"bad feature token {tok!r}", lineno, path) from None
        if i < 1:
            raise ParseError(f"feature index {i} < 1", lineno, path)
        if i in feats:
            raise ParseError(f"duplicate feature index {i}", lineno, path)
        if not math.isfinite(v):
            raise ParseError(f"non-finite feature value {val!r}", lineno, path)
        feats[i] = v
    return grade, qid, feats


def parse_letor(lines: Iterable[str], binarize_at: int = DEFAULT_BINARIZE_AT,
                split: str = "train", path=None) -> Dataset:
    """Parse LETOR-formatted lines into a :class:`Dataset`.

    Document ids are assigned per query in order of appearance (0, 1, ...).
    Features are densified to the largest index seen anywhere in the input.
    """
    groups: Dict[str, list] = {}
    max_index = 0
    for lineno, line in enumerate(lines, start=1):
        parsed = _parse_line(line, lineno, path)
        if parsed is None:
            continue
        grade, qid, feats = parsed
        if feats:
            max_index = max(max_index, max(feats))
        groups.setdefault(qid, []).append((grade, feats))

    queries = []
    for qid, rows in groups.items():
        X = np.zeros((len(rows), max_index))
        grades = np.empty(len(rows), dtype=np.int64)
        for j, (grade, feats) in enumerate(rows):
            grades[j] = grade
            for i, v in feats.items():
                X[j, i - 1] = v
        queries.append(QueryInstance(qid, np.arange(len(rows)), X, grades, binarize_at))
    return Dataset(split, queries, max_index)


def load_letor(path, binarize_at: int = DEFAULT_BINARIZE_AT, split: str = "train") -> Dataset:
    """Load a LETOR/SVMlight ranking file.

    Each non-blank line reads ``<grade> qid:<id> <idx>:<val> ... [# comment]``
    with 1-based, possibly sparse feature indices.  Lines of one query need not
    be contiguous.  A malformed line raises :class:`ParseError` carrying the
    line number.
    """
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_letor(fh, binarize_at=binarize_at, split=split, path=path)


def format_letor(ds: Dataset) -> str:
    lines = []
    for q in ds.queries:
        for j in range(q.n_candidates):
            feats = " ".join(
                f"{i + 1}:{v:.{FEATURE_PRECISION}g}" for i, v in enumerate(q.features[j])
            )
            lines.append(f"{q.grades[j]} qid:{q.query_id} {feats}".rstrip())
    return "\n".join(lines) + ("\n" if lines else "")


def write_letor(ds: Dataset, path) -> None:
    """Write ``ds`` densely, features at 6 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_letor(ds))


def round_features(ds: Dataset, digits: int = FEATURE_PRECISION) -> Dataset:
    """Return ``ds`` with features rounded exactly as the text writer rounds them."""
    fmt = f"{{:.{digits}g}}"
    to_text = np.vectorize(lambda v: float(fmt.format(v)), otypes=[np.float64])
    queries = [q.with_features(to_text(q.features)) if q.features.size else q for q in ds.queries]
    return Dataset(ds.split, queries, ds.feature_dim, ds.true_weights)


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------


def _check_synth_config(n_queries, n_candidates, feature_dim, relevant_fraction, noise_scale):
    if n_candidates < 2:
        raise ConfigError(f"n_candidates must be >= 2, got {n_candidates}")
    if n_queries < 1:
        raise ConfigError(f"n_queries must be >= 1, got {n_queries}")
    if feature_dim < 1:
        raise ConfigError(f"feature_dim must be >= 1, got {feature_dim}")
    if not 0.0 < relevant_fraction < 1.0:
        raise ConfigError(f"relevant_fraction must lie in (0, 1), got {relevant_fraction}")
    if not noise_scale >= 0.0:
        raise ConfigError(f"noise_scale must be >= 0, got {noise_scale}")


def _synthesize(seed, n_queries, n_candidates, feature_dim, relevant_fraction, noise_scale):
    _check_synth_config(n_queries, n_candidates, feature_dim, relevant_fraction, noise_scale)
    rng = np.random.default_rng(seed)
    w_star = rng.standard_normal(feature_dim)
    w_star /= np.linalg.norm(w_star)
    X = rng.standard_normal((n_queries, n_candidates, feature_dim))
    latent = X @ w_star
    if noise_scale > 0:
        latent = latent + noise_scale * rng.standard_normal(latent.shape)
    threshold = np.quantile(latent, 1.0 - relevant_fraction)
    relevant = latent > threshold

    # Grades 3-4 for relevant and 0-2 for irrelevant documents, so that the
    # default binarization threshold reproduces the relevance labels.
    grades = np.zeros(latent.shape, dtype=np.int64)
    if relevant.any():
        hi = np.quantile(latent[relevant], 0.5)
        grades[relevant] = np.where(latent[relevant] > hi, 4, 3)
    if (~relevant).any():
        lo, mid = np.quantile(latent[~relevant], [1 / 3, 2 / 3])
        grades[~relevant] = np.digitize(latent[~relevant], [lo, mid])
    return w_star, X, grades


def synthesize_dataset(seed, n_queries, n_candidates=30, feature_dim=20,
                       relevant_fraction=0.1, noise_scale=0.2, split="train") -> Dataset:
    """Draw a full-information corpus with a hidden linear ground truth.

    Features are i.i.d. standard normal.  A unit-norm weight vector ``w*`` is
    drawn, and a document is relevant iff ``w*·x + N(0, noise_scale²)`` exceeds
    the corpus-wide ``1 - relevant_fraction`` quantile.  The returned dataset
    keeps ``w*`` in ``true_weights``.
    """
    w_star, X, grades = _synthesize(
        seed, n_queries, n_candidates, feature_dim, relevant_fraction, noise_scale
    )
    ids = np.arange(n_candidates)
    queries = [QueryInstance(str(i), ids, X[i], grades[i]) for i in range(n_queries)]
    return Dataset(split, queries, feature_dim, w_star)


def synthesize_splits(seed, n_train, n_validation, n_test, n_candidates=30, feature_dim=20,
                      relevant_fraction=0.1, noise_scale=0.2) -> Dict[str, Dataset]:
    """Like :func:`synthesize_dataset`, but partitioned into disjoint train/validation/test splits
    sharing one ground truth."""
    total = n_train + n_validation + n_test
    w_star, X, grades = _synthesize(
        seed, total, n_candidates, feature_dim, relevant_fraction, noise_scale
    )
    ids = np.arange(n_candidates)
    bounds = np.cumsum([0, n_train, n_validation, n_test])
    out = {}
    for split, lo, hi in zip(SPLITS, bounds[:-1], bounds[1:]):
        queries = [QueryInstance(str(i), ids, X[i], grades[i]) for i in range(lo, hi)]
        out[split] = Dataset(split, queries, feature_dim, w_star)
    return out


def subsample_queries(ds: Dataset, fraction: float, seed) -> Dataset:
    """Uniform random subset of ``round(fraction * len(ds))`` queries (at least one)."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(ds)
    if n == 0:
        return Dataset(ds.split, [], ds.feature_dim, ds.true_weights)
    size = max(1, int(math.floor(fraction * n + 0.5)))
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(n, size=size, replace=False))
    return Dataset(ds.split, [ds.queries[i] for i in keep], ds.feature_dim, ds.true_weights)


def rebinarize(ds: Dataset, binarize_at: int) -> Dataset:
    queries = [
        QueryInstance(q.query_id, q.doc_ids, q.features, q.grades, binarize_at) for q in ds.queries
    ]
    return Dataset(ds.split, queries, ds.feature_dim, ds.true_weights)
