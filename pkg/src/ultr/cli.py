"""Command-line entry point: ``ultr <subcommand> [flags]``.

Exit status is 0 on success, 1 for configuration errors and 2 for data errors.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import os
import sys
from typing import Dict, List, Optional

from .clicks import BiasProfile, NoiseParams, read_click_log, write_click_log
from .errors import ConfigError, DataError
from .estimators import EstimatorConfig, estimate_risk
from .experiments import SWEEPS, Experiment, ExperimentSpec, estimate_propensities, write_outputs
from .learning import read_model, write_model
from .propensity import read_propensity_model, relabel_log, write_propensity_model
from .ranking import full_info_risk

logger = logging.getLogger("ultr")

CONFIG_SECTION = "experiment"
METHOD_CHOICES = ("naive", "propensity", "propensity_clipped", "skyline", "prod_baseline")


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _convert(name: str, raw: str, types: Dict[str, type], tuples: set):
    typ = types[name]
    try:
        if name in tuples:
            return tuple(typ(v) for v in raw.replace(",", " ").split())
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def read_config(path: str) -> Dict[str, object]:
    """Key = value pairs from the ``[experiment]`` section of an INI file.

    Keys are :class:`ExperimentSpec` field names; list values are
    comma-separated.  A file without section headers is read as if it were
    entirely inside ``[experiment]``.
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text if text.lstrip().startswith("[") else f"[{CONFIG_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not parser.has_section(CONFIG_SECTION):
        raise ConfigError(f"{path}: missing [{CONFIG_SECTION}] section")
    types, tuples = ExperimentSpec.field_types(), ExperimentSpec.tuple_fields()
    out = {}
    for key, raw in parser.items(CONFIG_SECTION):
        if key not in types:
            raise ConfigError(f"{path}: unknown key {key!r}")
        out[key] = _convert(key, raw, types, tuples)
    return out


# flag name -> ExperimentSpec field
_FLAG_FIELDS = {
    "seed": "seed",
    "out": "out",
    "dataset": "dataset",
    "eta": "eta",
    "eps_plus": "eps_plus",
    "eps_minus": "eps_minus",
    "n_clicks": "n_clicks",
    "assumed_eta": "assumed_etas",
    "tau_grid": "tau_grid",
    "c_grid": "c_grid",
    "n_seeds": "n_seeds",
}


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    values = read_config(args.config) if args.config else {}
    types, tuples = ExperimentSpec.field_types(), ExperimentSpec.tuple_fields()
    for flag, name in _FLAG_FIELDS.items():
        raw = getattr(args, flag, None)
        if raw is not None:
            values[name] = _convert(name, str(raw), types, tuples)
    if values.get("dataset", "synthetic") != "synthetic" and not os.path.isdir(values["dataset"]):
        raise ConfigError(f"dataset directory not found: {values['dataset']}")
    return ExperimentSpec(**values)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with ExperimentSpec keys under [experiment]")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--dataset", help="'synthetic' or a directory with train/vali/test.txt")
    p.add_argument("--eta", type=float, help="examination bias exponent")
    p.add_argument("--eps-plus", type=float, help="click probability of examined relevant docs")
    p.add_argument("--eps-minus", type=float, help="click probability of examined irrelevant docs")
    p.add_argument("--n-clicks", help="click count(s), comma-separated")
    p.add_argument("--assumed-eta", help="assumed eta value(s) for the misspecification sweep")
    p.add_argument("--tau-grid", help="clipping thresholds, comma-separated")
    p.add_argument("--c-grid", help="regularization constants, comma-separated")
    p.add_argument("--n-seeds", type=int, help="repetitions for small click counts")
    p.add_argument("-v", "--verbose", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="ultr", description="Unbiased learning-to-rank experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    p = sub.add_parser("simulate", help="simulate training and validation click logs")
    _add_common(p)

    p = sub.add_parser("estimate-propensities", help="swap-intervention propensity estimate")
    _add_common(p)
    p.add_argument("--impressions-per-arm", type=int)
    p.add_argument("--smoothing-weight", type=float)

    p = sub.add_parser("train", help="train one ranker and write its weights")
    _add_common(p)
    p.add_argument("--method", choices=METHOD_CHOICES, default="propensity")
    p.add_argument("--train-log", help="click log TSV (default: simulate)")
    p.add_argument("--val-log", help="validation click log TSV (default: simulate)")
    p.add_argument("--propensities", help="propensity TSV used to relabel both logs")

    p = sub.add_parser("evaluate", help="test risk of a saved model")
    _add_common(p)
    p.add_argument("model", help="model file written by 'train'")
    p.add_argument("--log", help="also report the IPS and naive estimates on this click log")
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")

    for name in SWEEPS:
        p = sub.add_parser(name, help=f"run the {name.replace('-', ' ')}")
        _add_common(p)
    return parser


def _spec_with(spec: ExperimentSpec, **changes) -> ExperimentSpec:
    changes = {k: v for k, v in changes.items() if v is not None}
    return dataclasses.replace(spec, **changes) if changes else spec


def _cmd_simulate(spec: ExperimentSpec, args) -> None:
    exp = Experiment(spec)
    n = spec.n_clicks[0]
    train, val = exp.logs(BiasProfile(spec.eta), NoiseParams(spec.eps_plus, spec.eps_minus), n,
                          spec.seed)
    os.makedirs(spec.out, exist_ok=True)
    for name, log in (("clicks_train.tsv", train), ("clicks_validation.tsv", val)):
        path = os.path.join(spec.out, name)
        write_click_log(log, path)
        print(f"{path}: {len(log)} clicks in {log.n_impressions} impressions")


def _cmd_estimate(spec: ExperimentSpec, args) -> None:
    spec = _spec_with(spec, impressions_per_arm=args.impressions_per_arm,
                      smoothing_weight=args.smoothing_weight)
    model, result, _ = estimate_propensities(spec)
    os.makedirs(spec.out, exist_ok=True)
    path = os.path.join(spec.out, "propensities.tsv")
    write_propensity_model(model, path)
    print("rank\tclicks\timpressions\tratio\tstd_error\tp")
    for r in result.ranks:
        arm = result.arms[r]
        print(f"{r}\t{arm.clicks}\t{arm.impressions}\t{arm.ratio:.5f}\t{arm.std_error:.5f}\t"
              f"{model.propensity(r):.5f}")
    if result.skipped_queries:
        print(f"skipped {result.skipped_queries} queries with too few candidates")
    print(f"wrote {path}")


def _cmd_train(spec: ExperimentSpec, args) -> None:
    exp = Experiment(spec)
    if args.method == "prod_baseline":
        model, params = exp.prod, {"C": spec.prod_C, "tau": None}
    elif args.method == "skyline":
        model, C = exp.skyline
        params = {"C": C, "tau": None}
    else:
        if args.train_log and args.val_log:
            train, val = read_click_log(args.train_log), read_click_log(args.val_log)
        elif args.train_log or args.val_log:
            raise ConfigError("--train-log and --val-log must be given together")
        else:
            train, val = exp.logs(BiasProfile(spec.eta), NoiseParams(spec.eps_plus, spec.eps_minus),
                                  spec.n_clicks[0], spec.seed)
        if args.propensities:
            prop = read_propensity_model(args.propensities)
            train, val = relabel_log(train, prop), relabel_log(val, prop)
        model, params = exp.fit(args.method, train, val)
    os.makedirs(spec.out, exist_ok=True)
    path = os.path.join(spec.out, f"model_{args.method}.txt")
    write_model(model, path)
    print(f"{args.method}: C={params['C']} tau={params['tau']} "
          f"test_risk={full_info_risk(model, exp.test):.4f}")
    print(f"wrote {path}")


def _cmd_evaluate(spec: ExperimentSpec, args) -> None:
    if not os.path.exists(args.model):
        raise ConfigError(f"model file not found: {args.model}")
    model = read_model(args.model)
    exp = Experiment(spec)
    ds = exp.splits[args.split]
    print(f"{args.split}_risk={full_info_risk(model, ds):.6f}")
    if args.log:
        log = read_click_log(args.log)
        log_ds = _log_split(log, exp)
        for cfg in (EstimatorConfig.naive(), EstimatorConfig.ips()):
            est = estimate_risk(model, log, log_ds, cfg)
            print(f"{cfg.kind}_estimate={est.value:.6f} clicks={est.n_clicks} "
                  f"impressions={est.n_impressions}")


def _log_split(log, exp: Experiment):
    ids = set(log.query_ids)
    for ds in (exp.train, exp.val, exp.test):
        if ids <= set(ds.query_ids):
            return ds
    raise DataError("click log references queries not found in any split")


def _cmd_sweep(spec: ExperimentSpec, args) -> None:
    fn, name = SWEEPS[args.command]
    rows = fn(spec)
    paths = write_outputs(rows, spec.out, name)
    for p in paths.values():
        print(f"wrote {p}")


def _run(args: argparse.Namespace) -> None:
    spec = build_spec(args)
    if args.command == "simulate":
        _cmd_simulate(spec, args)
    elif args.command == "estimate-propensities":
        _cmd_estimate(spec, args)
    elif args.command == "train":
        _cmd_train(spec, args)
    elif args.command == "evaluate":
        _cmd_evaluate(spec, args)
    else:
        _cmd_sweep(spec, args)


def main(argv: Optional[List[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
