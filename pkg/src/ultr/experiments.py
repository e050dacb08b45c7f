"""End-to-end synthetic-click experiments.

Each sweep builds (once) the full-information splits, a production ranker
trained on a small fraction of the training split, and a skyline ranker
trained on all training labels.  Click logs are then simulated from the
production ranker's rankings, click-trained rankers are cross-validated on a
validation click log, and everything is scored by full-information risk on
the test split.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .clicks import (
    BiasProfile,
    NoiseParams,
    empirical_click_rate_by_rank,
    noisy_click_fraction,
    simulate_clicks,
    simulate_until_clicks,
)
from .dataset import Dataset, load_letor, subsample_queries, synthesize_splits
from .errors import ConfigError, DataError
from .estimators import DEFAULT_TAU_GRID
from .learning import (
    DEFAULT_C_GRID,
    HyperparamGrid,
    cross_validate,
    select_full_info_ranker,
    train_full_info_ranker,
)
from .propensity import (
    PropensityModel,
    SwapExperimentConfig,
    SwapExperimentResult,
    fit_propensity_model,
    relabel_log,
    run_swap_experiment,
)
from .ranking import LinearModel, full_info_risk

logger = logging.getLogger(__name__)

METHODS = ("prod_baseline", "naive", "propensity", "propensity_clipped", "skyline")


@dataclass
class ExperimentSpec:
    """Declarative description of one experiment run."""

    dataset: str = "synthetic"
    binarize_at: int = 3
    n_train: int = 1000
    n_validation: int = 200
    n_test: int = 500
    n_candidates: int = 30
    feature_dim: int = 20
    relevant_fraction: float = 0.1
    # Label noise this large puts ~1/3 of clicks on irrelevant documents at
    # eta=1, eps_minus=0.1, and ~60% at eps_minus=0.3.
    noise_scale: float = 2.0
    data_seed: int = 0

    prod_fraction: float = 0.01
    prod_C: float = 1.0

    eta: float = 1.0
    eps_plus: float = 1.0
    eps_minus: float = 0.1
    n_clicks: Tuple[int, ...] = (2_000, 5_000, 20_000, 50_000)
    etas: Tuple[float, ...] = (0.0, 0.5, 1.0, 1.5, 2.0)
    eps_minus_values: Tuple[float, ...] = (0.0, 0.1, 0.2, 0.3)
    assumed_etas: Tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0)
    validation_fraction: float = 0.15

    c_grid: Tuple[float, ...] = DEFAULT_C_GRID
    tau_grid: Tuple[float, ...] = DEFAULT_TAU_GRID
    tol: float = 1e-4

    seed: int = 0
    n_seeds: int = 5
    small_n_threshold: int = 100_000

    landmark: int = 1
    swap_ranks: Tuple[int, ...] = tuple(range(1, 11))
    impressions_per_arm: int = 1_000_000
    smoothing_weight: float = 0.0
    ctr_impressions: int = 100_000

    out: str = "results"

    def __post_init__(self):
        for name in ("n_clicks", "etas", "eps_minus_values", "assumed_etas", "c_grid", "tau_grid",
                     "swap_ranks"):
            val = getattr(self, name)
            if isinstance(val, (int, float)):
                val = (val,)
            setattr(self, name, tuple(val))
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if not 0 < self.validation_fraction:
            raise ConfigError("validation_fraction must be > 0")
        if any(n < 1 for n in self.n_clicks):
            raise ConfigError("click counts must be >= 1")
        BiasProfile(self.eta)
        NoiseParams(self.eps_plus, self.eps_minus).check_strict()

    @property
    def seeds(self) -> List[int]:
        return [self.seed + i for i in range(self.n_seeds)]

    def seeds_for(self, n_clicks: int) -> List[int]:
        """All seeds below the small-data threshold, otherwise only the first."""
        return self.seeds if n_clicks < self.small_n_threshold else self.seeds[:1]

    def config_hash(self) -> str:
        d = dataclasses.asdict(self)
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @classmethod
    def field_types(cls) -> Dict[str, type]:
        out = {}
        for f in dataclasses.fields(cls):
            default = f.default
            out[f.name] = type(default[0]) if isinstance(default, tuple) else type(default)
        return out

    @classmethod
    def tuple_fields(cls) -> set:
        return {f.name for f in dataclasses.fields(cls) if isinstance(f.default, tuple)}


@dataclass
class ResultRow:
    sweep: str
    value: Optional[float]
    method: str
    test_risk: float
    n_clicks_target: int
    n_clicks: int
    n_impressions: int
    seed: int
    C: Optional[float]
    tau: Optional[float]
    noisy_click_fraction: Optional[float]
    config_hash: str

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if not self.test_risk >= 0:
            raise DataError("test risk must be non-negative")


CSV_FIELDS = [f.name for f in dataclasses.fields(ResultRow)]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def format_rows(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_FIELDS)
    for r in rows:
        writer.writerow([_fmt(getattr(r, f)) for f in CSV_FIELDS])
    return buf.getvalue()


def summarize(rows: Sequence[ResultRow]) -> List[dict]:
    """Mean test risk over seeds per (sweep value, click target, method), in first-seen order."""
    groups: Dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r.sweep, r.value, r.n_clicks_target, r.method), []).append(r.test_risk)
    return [
        {"sweep": k[0], "value": k[1], "n_clicks_target": k[2], "method": k[3],
         "mean_test_risk": float(np.mean(v)), "n_seeds": len(v)}
        for k, v in groups.items()
    ]


def format_summary(summary: Sequence[dict]) -> str:
    buf = io.StringIO()
    fields = ["sweep", "value", "n_clicks_target", "method", "mean_test_risk", "n_seeds"]
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(fields)
    for s in summary:
        writer.writerow([_fmt(s[f]) for f in fields])
    return buf.getvalue()


def format_gnuplot(summary: Sequence[dict]) -> str:
    """Whitespace table: one row per (value, n), one column per method."""
    methods = [m for m in METHODS if any(s["method"] == m for s in summary)]
    table: Dict[tuple, Dict[str, float]] = {}
    for s in summary:
        table.setdefault((s["value"], s["n_clicks_target"]), {})[s["method"]] = s["mean_test_risk"]
    lines = ["# value n_clicks " + " ".join(methods)]
    for (value, n), cols in table.items():
        vals = " ".join(repr(cols[m]) if m in cols else "NaN" for m in methods)
        lines.append(f"{'NaN' if value is None else repr(value)} {n} {vals}")
    return "\n".join(lines) + "\n"


def write_outputs(rows: Sequence[ResultRow], out_dir: str, name: str) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    summary = summarize(rows)
    paths = {
        "rows": os.path.join(out_dir, f"{name}.csv"),
        "summary": os.path.join(out_dir, f"{name}_summary.csv"),
        "gnuplot": os.path.join(out_dir, f"{name}.dat"),
    }
    for key, text in (("rows", format_rows(rows)), ("summary", format_summary(summary)),
                      ("gnuplot", format_gnuplot(summary))):
        with open(paths[key], "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return paths


# ---------------------------------------------------------------------------
# Shared experiment state
# ---------------------------------------------------------------------------


def load_splits(spec: ExperimentSpec) -> Dict[str, Dataset]:
    if spec.dataset == "synthetic":
        return synthesize_splits(
            spec.data_seed, spec.n_train, spec.n_validation, spec.n_test,
            n_candidates=spec.n_candidates, feature_dim=spec.feature_dim,
            relevant_fraction=spec.relevant_fraction, noise_scale=spec.noise_scale,
        )
    if not os.path.isdir(spec.dataset):
        raise ConfigError(f"dataset must be 'synthetic' or a directory of LETOR files: {spec.dataset}")
    names = {"train": ("train.txt",), "validation": ("vali.txt", "valid.txt", "validation.txt"),
             "test": ("test.txt",)}
    splits = {}
    for split, candidates in names.items():
        path = next((os.path.join(spec.dataset, c) for c in candidates
                     if os.path.exists(os.path.join(spec.dataset, c))), None)
        if path is None:
            raise ConfigError(f"no {split} file in {spec.dataset} (tried {candidates})")
        splits[split] = load_letor(path, spec.binarize_at, split)
    d = max(s.feature_dim for s in splits.values())
    splits = {k: _pad_features(v, d) for k, v in splits.items()}
    ids = [set(s.query_ids) for s in splits.values()]
    if ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2]:
        raise DataError("train/validation/test splits share query ids")
    return splits


def _pad_features(ds: Dataset, d: int) -> Dataset:
    if ds.feature_dim == d:
        return ds
    queries = [
        q.with_features(np.pad(q.features, ((0, 0), (0, d - q.feature_dim)))) for q in ds.queries
    ]
    return Dataset(ds.split, queries, d)


def _derive(seed: int, *tags: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(t) for t in tags))
    return int(ss.generate_state(1, np.uint64)[0])


class Experiment:
    """Datasets and baseline rankers shared by every point of a sweep."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.splits = load_splits(spec)
        self.train, self.val, self.test = (self.splits[s] for s in ("train", "validation", "test"))
        self.config_hash = spec.config_hash()
        self._prod: Optional[LinearModel] = None
        self._skyline: Optional[Tuple[LinearModel, float]] = None

    @property
    def prod(self) -> LinearModel:
        if self._prod is None:
            subset = subsample_queries(self.train, self.spec.prod_fraction, self.spec.data_seed)
            self._prod = train_full_info_ranker(subset, self.spec.prod_C, self.spec.tol)
        return self._prod

    @property
    def skyline(self) -> Tuple[LinearModel, float]:
        if self._skyline is None:
            self._skyline = select_full_info_ranker(self.train, self.val, self.spec.c_grid,
                                                    self.spec.tol)
        return self._skyline

    def logs(self, profile: BiasProfile, noise: NoiseParams, n_clicks: int, seed: int):
        n_val = max(1, int(round(self.spec.validation_fraction * n_clicks)))
        train = simulate_until_clicks(self.train, self.prod, profile, noise, n_clicks,
                                      _derive(seed, 0))
        val = simulate_until_clicks(self.val, self.prod, profile, noise, n_val, _derive(seed, 1))
        return train, val

    def grid(self, clipped: bool) -> HyperparamGrid:
        return HyperparamGrid(self.spec.c_grid, self.spec.tau_grid if clipped else None)

    def fit(self, method: str, train_log, val_log):
        mode = "naive" if method == "naive" else "propensity"
        model, params = cross_validate(
            train_log, val_log, self.train, self.grid(method == "propensity_clipped"), mode,
            val_ds=self.val, tol=self.spec.tol,
        )
        return model, params

    def row(self, sweep, value, method, risk, n_target, log, seed, C=None, tau=None,
            noisy=None) -> ResultRow:
        return ResultRow(
            sweep=sweep, value=None if value is None else float(value), method=method, test_risk=float(risk),
            n_clicks_target=int(n_target),
            n_clicks=len(log) if log is not None else 0,
            n_impressions=log.n_impressions if log is not None else 0,
            seed=int(seed), C=C, tau=tau, noisy_click_fraction=noisy, config_hash=self.config_hash,
        )

    def baseline_rows(self, sweep, value, n_target, seed) -> List[ResultRow]:
        sky, sky_C = self.skyline
        return [
            self.row(sweep, value, "prod_baseline", full_info_risk(self.prod, self.test), n_target,
                     None, seed, C=self.spec.prod_C),
            self.row(sweep, value, "skyline", full_info_risk(sky, self.test), n_target, None, seed,
                     C=sky_C),
        ]

    def click_rows(self, sweep, value, methods, train_log, val_log, n_target, seed,
                   relabel_with=None) -> List[ResultRow]:
        noisy = noisy_click_fraction(train_log, self.train)
        if relabel_with is not None:
            train_log = relabel_log(train_log, relabel_with)
            val_log = relabel_log(val_log, relabel_with)
        rows = []
        for method in methods:
            model, params = self.fit(method, train_log, val_log)
            rows.append(self.row(sweep, value, method, full_info_risk(model, self.test), n_target,
                                 train_log, seed, C=params["C"], tau=params["tau"], noisy=noisy))
            logger.info("%s=%s n=%d seed=%d %s risk=%.4f", sweep, value, n_target, seed, method,
                        rows[-1].test_risk)
        return rows


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def learning_curve(spec: ExperimentSpec, exp: Optional[Experiment] = None) -> List[ResultRow]:
    """Test risk against the number of training clicks."""
    exp = exp or Experiment(spec)
    profile, noise = BiasProfile(spec.eta), NoiseParams(spec.eps_plus, spec.eps_minus)
    rows = []
    for n in spec.n_clicks:
        for seed in spec.seeds_for(n):
            train, val = exp.logs(profile, noise, n, seed)
            rows += exp.baseline_rows("n_clicks", n, n, seed)
            rows += exp.click_rows("n_clicks", n, ("naive", "propensity", "propensity_clipped"),
                                   train, val, n, seed)
    return rows


def bias_sweep(spec: ExperimentSpec, exp: Optional[Experiment] = None) -> List[ResultRow]:
    """Naive vs propensity ranker as the examination bias ``eta`` grows."""
    exp = exp or Experiment(spec)
    noise = NoiseParams(spec.eps_plus, spec.eps_minus)
    rows = []
    for eta in spec.etas:
        for n in spec.n_clicks:
            for seed in spec.seeds_for(n):
                train, val = exp.logs(BiasProfile(eta), noise, n, seed)
                rows += exp.click_rows("eta", eta, ("naive", "propensity"), train, val, n, seed)
    return rows


def noise_sweep(spec: ExperimentSpec, exp: Optional[Experiment] = None) -> List[ResultRow]:
    """Naive vs propensity ranker as the irrelevant-click rate grows."""
    exp = exp or Experiment(spec)
    profile = BiasProfile(spec.eta)
    rows = []
    for eps_minus in spec.eps_minus_values:
        noise = NoiseParams(spec.eps_plus, eps_minus)
        noise.check_strict()
        for n in spec.n_clicks:
            for seed in spec.seeds_for(n):
                train, val = exp.logs(profile, noise, n, seed)
                rows += exp.click_rows("eps_minus", eps_minus, ("naive", "propensity"), train, val,
                                       n, seed)
    return rows


def misspecification_sweep(spec: ExperimentSpec, exp: Optional[Experiment] = None
                           ) -> List[ResultRow]:
    """Propensity ranker trained with propensities from an assumed ``eta``.

    Clicks are generated with ``spec.eta``; training and validation logs are
    relabeled with each assumed value.  The naive ranker is reported once per
    click count with an empty ``value``.
    """
    exp = exp or Experiment(spec)
    profile, noise = BiasProfile(spec.eta), NoiseParams(spec.eps_plus, spec.eps_minus)
    rows = []
    for n in spec.n_clicks:
        for seed in spec.seeds_for(n):
            train, val = exp.logs(profile, noise, n, seed)
            rows += exp.click_rows("assumed_eta", None, ("naive",), train, val, n, seed)
            for assumed in spec.assumed_etas:
                rows += exp.click_rows("assumed_eta", assumed, ("propensity",), train, val, n, seed,
                                       relabel_with=BiasProfile(assumed))
    return rows


def estimate_propensities(spec: ExperimentSpec, exp: Optional[Experiment] = None
                          ) -> Tuple[PropensityModel, SwapExperimentResult, np.ndarray]:
    """Swap-intervention experiment on the training split, then smoothing.

    The overall click-through curve used for smoothing comes from a regular
    (no-intervention) log of ``spec.ctr_impressions`` impressions.
    """
    exp = exp or Experiment(spec)
    profile, noise = BiasProfile(spec.eta), NoiseParams(spec.eps_plus, spec.eps_minus)
    cfg = SwapExperimentConfig(spec.landmark, spec.swap_ranks, spec.impressions_per_arm,
                               _derive(spec.seed, 2))
    result = run_swap_experiment(exp.train, exp.prod, profile, noise, cfg)
    log = simulate_clicks(exp.train, exp.prod, profile, noise, spec.ctr_impressions,
                          _derive(spec.seed, 3))
    ctr = empirical_click_rate_by_rank(log)
    model = fit_propensity_model(result, spec.smoothing_weight, ctr)
    return model, result, ctr


SWEEPS = {
    "learning-curve": (learning_curve, "learning_curve"),
    "bias-sweep": (bias_sweep, "bias_sweep"),
    "noise-sweep": (noise_sweep, "noise_sweep"),
    "misspec-sweep": (misspecification_sweep, "misspec_sweep"),
}
