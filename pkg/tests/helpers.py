"""Builders for small random instances shared across test modules."""

import numpy as np

from ultr.dataset import Dataset, QueryInstance
from ultr.ranking import LinearModel

# Lines printed at the end of the session by conftest.pytest_terminal_summary.
ACCEPTANCE_REPORT = []


def report(criterion: int, passed: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_REPORT.append(line)
    print(line)


def random_query(rng, m, d=3, query_id="q", p_relevant=0.4, min_relevant=0):
    """Random query whose grades are 4 (relevant) or 0 (irrelevant)."""
    rel = rng.random(m) < p_relevant
    if min_relevant and rel.sum() < min_relevant:
        rel[rng.choice(m, min_relevant, replace=False)] = True
    return QueryInstance(
        query_id,
        doc_ids=rng.permutation(1000)[:m],
        features=rng.standard_normal((m, d)),
        grades=np.where(rel, 4, 0),
    )


def random_dataset(rng, n_queries, m, d=3, split="train", **kw):
    sizes = [m] * n_queries if np.isscalar(m) else list(m)
    queries = [random_query(rng, s, d, query_id=f"{split}{i}", **kw) for i, s in enumerate(sizes)]
    return Dataset(split, queries, d)


def random_model(rng, d=3):
    return LinearModel(rng.standard_normal(d))
