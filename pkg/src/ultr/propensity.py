"""Examination propensities from swap interventions.

A swap experiment moves the document the production ranker puts at the
landmark rank ``k`` to rank ``r`` and counts its clicks.  Under the
position-based model the click-through rate of that document is
proportional to the examination probability of the rank it is shown at, so
``CTR(arm r) / CTR(arm k)`` estimates ``p_r / p_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .clicks import (
    BiasProfile,
    ClickLog,
    NoiseParams,
    _padded_width,
    examination_probability,
    impression_uniforms,
)
from .dataset import Dataset
from .errors import ConfigError, EstimationError, ExperimentError, ParseError
from .ranking import LinearModel, rank_order

DEFAULT_P_MIN = 1e-6


@dataclass(frozen=True, eq=False)
class PropensityModel:
    """Examination probabilities for ranks ``1..r_max``, normalized to at most 1.

    Ranks beyond ``r_max`` reuse ``p[r_max]``.
    """

    p: np.ndarray
    smoothing_weight: float = 0.0
    landmark: int = 1
    p_min: float = DEFAULT_P_MIN

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64).reshape(-1)
        if p.size == 0:
            raise ConfigError("propensity model needs at least one rank")
        if np.any(~np.isfinite(p)) or np.any(p <= 0) or np.any(p > 1):
            raise ConfigError("propensities must lie in (0, 1]")
        p.flags.writeable = False
        object.__setattr__(self, "p", p)

    @property
    def r_max(self) -> int:
        return self.p.shape[0]

    def propensity(self, ranks):
        r = np.asarray(ranks, dtype=np.int64)
        if np.any(r < 1):
            raise ConfigError("ranks must be >= 1")
        out = self.p[np.minimum(r, self.r_max) - 1]
        return float(out) if out.ndim == 0 else out

    def __eq__(self, other):
        if not isinstance(other, PropensityModel):
            return NotImplemented
        return (
            np.array_equal(self.p, other.p)
            and self.smoothing_weight == other.smoothing_weight
            and self.landmark == other.landmark
            and self.p_min == other.p_min
        )

    __hash__ = None

    @classmethod
    def from_profile(cls, profile: BiasProfile, r_max: int) -> "PropensityModel":
        return cls(examination_probability(np.arange(1, r_max + 1), profile))


@dataclass(frozen=True)
class SwapExperimentConfig:
    landmark: int = 1
    swap_ranks: Tuple[int, ...] = tuple(range(1, 11))
    impressions_per_arm: int = 100_000
    seed: int = 0

    def __post_init__(self):
        ranks = tuple(sorted(set(int(r) for r in self.swap_ranks)))
        if self.landmark < 1 or any(r < 1 for r in ranks):
            raise ConfigError("ranks must be >= 1")
        if not ranks:
            raise ConfigError("swap experiment needs at least one target rank")
        if self.impressions_per_arm < 1:
            raise ConfigError("impressions_per_arm must be >= 1")
        object.__setattr__(self, "swap_ranks", ranks)


@dataclass(frozen=True)
class SwapArm:
    rank: int
    clicks: int
    impressions: int
    ratio: float
    std_error: float

    @property
    def ctr(self) -> float:
        return self.clicks / self.impressions


@dataclass(frozen=True)
class SwapExperimentResult:
    landmark: int
    arms: Dict[int, SwapArm]
    skipped_queries: int = 0

    @property
    def ranks(self) -> Tuple[int, ...]:
        return tuple(sorted(self.arms))

    def ratios(self) -> np.ndarray:
        return np.array([self.arms[r].ratio for r in self.ranks])

    def std_errors(self) -> np.ndarray:
        return np.array([self.arms[r].std_error for r in self.ranks])


def _ratio_std_error(c_r, n_r, c_k, n_k) -> float:
    # Delta method for a ratio of two independent binomial proportions.
    a, b = c_r / n_r, c_k / n_k
    if a == 0:
        return math.sqrt(1.0 / n_r) / b  # rule-of-one bound when no clicks were seen
    var = (1 - a) / (n_r * a) + (1 - b) / (n_k * b)
    return (a / b) * math.sqrt(var)


def run_swap_experiment(ds: Dataset, ranker: LinearModel, true_profile: BiasProfile,
                        noise: NoiseParams, cfg: SwapExperimentConfig) -> SwapExperimentResult:
    """Run one randomized arm per target rank plus the no-swap arm.

    In arm ``r`` every impression draws a query, swaps the documents at the
    landmark rank and at rank ``r`` of the production ranking, and records
    whether the document moved away from the landmark is clicked.  Ranks are
    examined independently, so only the moved document's examination and
    click are drawn.  Queries with fewer candidates than the deepest rank
    involved are skipped and counted.
    """
    noise.check_strict()
    k = cfg.landmark
    deepest = max(max(cfg.swap_ranks), k)
    eligible = [q for q in ds.queries if q.n_candidates >= deepest]
    skipped = len(ds) - len(eligible)
    if not eligible:
        offending = [q.query_id for q in ds.queries]
        raise ExperimentError(
            f"no query has {deepest} candidates; offending queries: {offending[:20]}"
            + (" ..." if len(offending) > 20 else "")
        )
    rel_at_landmark = np.array(
        [q.relevance[rank_order(ranker, q)[k - 1]] for q in eligible], dtype=np.float64
    )
    eps = np.where(rel_at_landmark > 0, noise.eps_plus, noise.eps_minus)
    n_eligible = len(eligible)

    counts = {}
    for r in sorted(set(cfg.swap_ranks) | {k}):
        p_r = examination_probability(r, true_profile)
        clicks, done, block = 0, 0, 1 << 19
        while done < cfg.impressions_per_arm:
            n = min(block, cfg.impressions_per_arm - done)
            u = impression_uniforms(cfg.seed, done, n, _padded_width(3), tags=(r,))
            qidx = np.minimum((u[:, 0] * n_eligible).astype(np.int64), n_eligible - 1)
            clicks += int(np.count_nonzero((u[:, 1] < p_r) & (u[:, 2] < eps[qidx])))
            done += n
        counts[r] = clicks

    n = cfg.impressions_per_arm
    if counts[k] == 0:
        raise EstimationError(f"no clicks observed in the no-swap arm (rank {k})")
    arms = {}
    for r in cfg.swap_ranks:
        ratio = (counts[r] / n) / (counts[k] / n)
        se = 0.0 if r == k else _ratio_std_error(counts[r], n, counts[k], n)
        arms[r] = SwapArm(r, counts[r], n, ratio, se)
    return SwapExperimentResult(k, arms, skipped)


def expected_swap_ratios(ds: Dataset, ranker: LinearModel, profile: BiasProfile,
                         noise: NoiseParams, cfg: SwapExperimentConfig) -> Dict[int, float]:
    """Exact expectation of each arm's click-through rate divided by the no-swap arm's."""
    k = cfg.landmark
    deepest = max(max(cfg.swap_ranks), k)
    eligible = [q for q in ds.queries if q.n_candidates >= deepest]
    rel = np.array([q.relevance[rank_order(ranker, q)[k - 1]] for q in eligible])
    click_given_exam = noise.click_given_exam(rel).mean()
    ctr = {
        r: examination_probability(r, profile) * click_given_exam
        for r in set(cfg.swap_ranks) | {k}
    }
    return {r: ctr[r] / ctr[k] for r in cfg.swap_ranks}


def fit_propensity_model(result: SwapExperimentResult, smoothing_weight: float = 0.0,
                         overall_ctr_by_rank: Optional[Sequence[float]] = None,
                         p_min: float = DEFAULT_P_MIN) -> PropensityModel:
    """Blend swap ratios with the normalized overall click-through curve.

    ``p_r = (1 - w) * ratio_r + w * CTR[r] / CTR[1]`` for ``r = 1..r_max``,
    where ``w`` is ``smoothing_weight``.  The arms must cover every rank from
    1 to ``r_max``.  If a value exceeds 1 (possible when the landmark is not
    the top rank) the vector is divided by its maximum; values are then
    clamped to ``[p_min, 1]``.
    """
    lam = float(smoothing_weight)
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"smoothing_weight must lie in [0, 1], got {smoothing_weight}")
    ranks = result.ranks
    r_max = ranks[-1]
    missing = sorted(set(range(1, r_max + 1)) - set(ranks))
    if missing:
        raise EstimationError(f"swap ratios missing for ranks {missing}")
    ratios = result.ratios()

    if overall_ctr_by_rank is not None:
        ctr = np.asarray(overall_ctr_by_rank, dtype=np.float64)
        if ctr.size == 0 or ctr[0] <= 0:
            raise EstimationError("overall click-through rate at rank 1 is zero")
        if ctr.size < r_max:
            raise EstimationError(f"overall CTR covers {ctr.size} ranks, need {r_max}")
        curve = ctr[:r_max] / ctr[0]
    elif lam > 0:
        raise EstimationError("smoothing needs the overall click-through rate by rank")
    else:
        curve = np.zeros(r_max)

    p = (1.0 - lam) * ratios + lam * curve
    if p.max() > 1.0:
        p = p / p.max()
    p = np.clip(p, p_min, 1.0)
    return PropensityModel(p, lam, result.landmark, p_min)


def relabel_log(log: ClickLog, model_or_profile: Union[PropensityModel, BiasProfile]) -> ClickLog:
    """Recompute each click's propensity from its presented rank.

    Relabeling with ``BiasProfile(0)`` sets every propensity to 1, which turns
    IPS into the naive estimator.
    """
    if isinstance(model_or_profile, BiasProfile):
        q = examination_probability(log.presented_rank, model_or_profile) if len(log) else np.zeros(0)
    elif isinstance(model_or_profile, PropensityModel):
        q = model_or_profile.propensity(log.presented_rank) if len(log) else np.zeros(0)
    else:
        raise ConfigError(f"cannot relabel with {type(model_or_profile).__name__}")
    return log.with_propensity(np.asarray(q, dtype=np.float64), assumed=model_or_profile)


# ---------------------------------------------------------------------------
# TSV serialization
# ---------------------------------------------------------------------------


def format_propensity_model(model: PropensityModel) -> str:
    lines = [
        f"# smoothing_weight={model.smoothing_weight!r} landmark={model.landmark} "
        f"r_max={model.r_max} clamp={model.p_min!r}",
        "rank\tp",
    ]
    lines += [f"{r}\t{v!r}" for r, v in enumerate(model.p.tolist(), start=1)]
    return "\n".join(lines) + "\n"


def write_propensity_model(model: PropensityModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_propensity_model(model))


def read_propensity_model(path) -> PropensityModel:
    meta = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    meta[key] = val
                continue
            if line.replace("\t", " ").split() == ["rank", "p"]:
                continue
            parts = line.split("\t")
            try:
                rows.append((int(parts[0]), float(parts[1])))
            except (ValueError, IndexError):
                raise ParseError(f"bad propensity row {line!r}", lineno, path) from None
    ranks = [r for r, _ in rows]
    if ranks != list(range(1, len(rows) + 1)):
        raise ParseError("ranks must run 1..r_max in order", None, path)
    return PropensityModel(
        [p for _, p in rows],
        float(meta.get("smoothing_weight", 0.0)),
        int(meta.get("landmark", 1)),
        float(meta.get("clamp", DEFAULT_P_MIN)),
    )
