"""Command line entry points.

Subcommands: ``fit`` a model to a wide CSV, ``simulate`` a dataset from a
design condition, ``mc`` run replication sweeps, and ``transform``
parameter files between spaces.  All commands are driven by a JSON
config whose hash and master seed are embedded in every report, and all
output is deterministic for a fixed config.

Exit codes: 0 success, 1 input or config error, 2 non-convergence,
3 internal numeric failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import dataio
from .dataio import InputError
from .estimate import (
    EstimationError,
    FitOptions,
    IdentificationError,
    fit_baseline,
    fit_full,
    fit_reduced,
)
from .harness import run_condition, summarize_grid
from .model import OriginalParams, ReparamParams
from .simulate import InvalidCondition, SimCondition, gen_dataset
from .transform import from_reparam, from_reparam_cellwise, to_reparam

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NONCONVERGED = 2
EXIT_NUMERIC = 3

_CONFIG_KEYS = {
    "model", "mode", "ciLevel", "maxAttempts", "gradTol", "relFTol", "maxIter",
    "masterSeed", "condition", "conditions", "workers", "S", "computeSe",
}
_CONDITION_KEYS = {"n", "J", "knotMean", "knotSD", "slopeDiff", "explainedShare", "thetaEps", "delta"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def _load_config(path):
    cfg = dataio.read_json(path)
    if not isinstance(cfg, dict):
        raise InputError(f"{path}: config must be a JSON object")
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise InputError(f"{path}: unknown config keys {sorted(unknown)}")
    return cfg


def _condition_from_dict(obj):
    if not isinstance(obj, dict):
        raise InputError("condition must be an object")
    unknown = set(obj) - _CONDITION_KEYS
    if unknown:
        raise InputError(f"unknown condition keys {sorted(unknown)}")
    missing = {"n", "J", "knotMean", "knotSD", "slopeDiff", "explainedShare", "thetaEps"} - set(obj)
    if missing:
        raise InputError(f"condition is missing keys {sorted(missing)}")
    try:
        return SimCondition(
            n=int(obj["n"]),
            n_waves=int(obj["J"]),
            knot_mean=float(obj["knotMean"]),
            knot_sd=float(obj["knotSD"]),
            slope_diff=float(obj["slopeDiff"]),
            explained_share=float(obj["explainedShare"]),
            theta_eps=float(obj["thetaEps"]),
            delta=float(obj.get("delta", 0.25)),
        )
    except InvalidCondition as exc:
        raise InputError(f"invalid condition: {exc}") from None


def _fit_options(cfg):
    try:
        return FitOptions(
            mode=cfg.get("mode", "marginal"),
            max_attempts=int(cfg.get("maxAttempts", 10)),
            grad_tol=float(cfg.get("gradTol", 1e-6)),
            rel_f_tol=float(cfg.get("relFTol", 1e-10)),
            max_iter=int(cfg.get("maxIter", 2000)),
            ci_level=float(cfg.get("ciLevel", 0.95)),
            seed=int(cfg.get("masterSeed", 0)),
            compute_se=bool(cfg.get("computeSe", True)),
        )
    except ValueError as exc:
        raise InputError(f"invalid options: {exc}") from None


_FITTERS = {
    "full": fit_full,
    "reduced": fit_reduced,
    "linear": lambda ds, opt: fit_baseline(ds, "linear", opt),
    "quadratic": lambda ds, opt: fit_baseline(ds, "quadratic", opt),
}


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    cfg_hash = dataio.config_hash(cfg)
    options = _fit_options(cfg)
    model = cfg.get("model", "full")
    reader = dataio.read_long_csv if args.format == "long" else dataio.read_wide_csv
    dataset = reader(args.data)
    if model == "compare":
        fits = {}
        for name, fitter in _FITTERS.items():
            fits[name] = fitter(dataset, options)
        rows = sorted(
            ({
                "model": name,
                "minus2loglik": -2.0 * fit.loglik,
                "aic": fit.aic,
                "bic": fit.bic,
                "nParams": fit.n_params,
                "residualVar": fit.residual_var,
                "converged": fit.converged,
            } for name, fit in fits.items()),
            key=lambda r: r["aic"],
        )
        report = {
            "configHash": cfg_hash,
            "seed": options.seed,
            "comparison": rows,
            "fits": {name: dataio.fit_report_dict(fit, cfg_hash, options.seed)
                     for name, fit in fits.items()},
        }
        dataio.write_json(args.out, report)
        _print_comparison(rows)
        return EXIT_OK if all(f.converged for f in fits.values()) else EXIT_NONCONVERGED
    if model not in _FITTERS:
        raise InputError(f"unknown model {model!r}")
    fit = _FITTERS[model](dataset, options)
    dataio.write_json(args.out, dataio.fit_report_dict(fit, cfg_hash, options.seed))
    print(f"{model}: loglik={fit.loglik:.4f} aic={fit.aic:.2f} bic={fit.bic:.2f} "
          f"converged={fit.converged} attempts={fit.attempts}")
    if fit.improper_flags:
        print("improper: " + ", ".join(fit.improper_flags))
    return EXIT_OK if fit.converged else EXIT_NONCONVERGED


def _print_comparison(rows):
    header = f"{'model':<12}{'-2loglik':>14}{'AIC':>12}{'BIC':>12}{'#par':>6}{'resid':>10}"
    print(header)
    for r in rows:
        print(f"{r['model']:<12}{r['minus2loglik']:>14.2f}{r['aic']:>12.2f}"
              f"{r['bic']:>12.2f}{r['nParams']:>6d}{r['residualVar']:>10.4f}")


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    cfg_hash = dataio.config_hash(cfg)
    if "condition" not in cfg:
        raise InputError("simulate needs a 'condition' block")
    cond = _condition_from_dict(cfg["condition"])
    seed = int(cfg.get("masterSeed", 0))
    rng = np.random.default_rng(seed)
    dataset, truth = gen_dataset(cond, rng)
    dataio.write_wide_csv(args.out, dataset)
    if args.truth:
        dataio.write_json(args.truth, {
            "configHash": cfg_hash,
            "seed": seed,
            "condition": dataio.condition_to_dict(cond),
            "params": dataio.params_to_json(truth),
        })
    print(f"wrote {dataset.n_individuals} individuals x {dataset.n_waves} waves to {args.out}")
    return EXIT_OK


def cmd_mc(args) -> int:
    cfg = _load_config(args.config)
    cfg_hash = dataio.config_hash(cfg)
    if "conditions" in cfg:
        conds = [_condition_from_dict(c) for c in cfg["conditions"]]
    elif "condition" in cfg:
        conds = [_condition_from_dict(cfg["condition"])]
    else:
        raise InputError("mc needs a 'condition' or 'conditions' block")
    options = _fit_options(cfg)
    s = int(cfg.get("S", 100))
    workers = int(cfg.get("workers", 1)) if args.workers is None else args.workers
    reports = [run_condition(cond, s, options, workers=workers) for cond in conds]
    payload = {
        "configHash": cfg_hash,
        "masterSeed": options.seed,
        "S": s,
        "reports": [dataio.metrics_report_dict(r) for r in reports],
        "summary": summarize_grid(reports),
    }
    dataio.write_json(args.out, payload)
    if args.csv:
        dataio.write_metrics_csv(args.csv, reports)
    for rep in reports:
        print(f"condition n={rep.condition.n} J={rep.condition.n_waves} "
              f"knot={rep.condition.knot_mean}: {rep.converged}/{rep.attempted} convergent, "
              f"improper {rep.n_improper_negative_variance}//{rep.n_improper_out_of_range}")
    return EXIT_OK


def cmd_transform(args) -> int:
    obj = dataio.read_json(args.params)
    params = dataio.params_from_json(obj)
    if args.direction == "toReparam":
        if not isinstance(params, OriginalParams):
            raise InputError("toReparam expects a parameter file with space='original'")
        out = to_reparam(params)
    elif args.direction == "fromReparam":
        if not isinstance(params, ReparamParams):
            raise InputError("fromReparam expects a parameter file with space='reparam'")
        out = from_reparam(params)
    elif args.direction == "cellwise":
        if not isinstance(params, ReparamParams):
            raise InputError("cellwise expects a parameter file with space='reparam'")
        out = from_reparam_cellwise(params)
    else:
        raise InputError(f"unknown direction {args.direction!r}")
    dataio.write_json(args.out, dataio.params_to_json(out))
    print(f"wrote {args.direction} parameters to {args.out}")
    return EXIT_OK


def _build_parser():
    parser = _Parser(prog="bsgm", description="Piecewise growth models with an estimated knot")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model to a CSV dataset")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--format", choices=["wide", "long"], default="wide",
                       help="long format (id, wave, y, t, x...) is pivoted internally")
    p_fit.set_defaults(fn=cmd_fit)

    p_sim = sub.add_parser("simulate", help="generate a dataset from a design condition")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--truth", default=None)
    p_sim.set_defaults(fn=cmd_simulate)

    p_mc = sub.add_parser("mc", help="run Monte Carlo replications over conditions")
    p_mc.add_argument("--config", required=True)
    p_mc.add_argument("--out", required=True)
    p_mc.add_argument("--csv", default=None)
    p_mc.add_argument("--workers", type=int, default=None,
                      help="override the config worker count (results are identical)")
    p_mc.set_defaults(fn=cmd_mc)

    p_tr = sub.add_parser("transform", help="transform a parameter file between spaces")
    p_tr.add_argument("--params", required=True)
    p_tr.add_argument("--direction", required=True,
                      choices=["toReparam", "fromReparam", "cellwise"])
    p_tr.add_argument("--out", required=True)
    p_tr.set_defaults(fn=cmd_transform)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (InputError, IdentificationError, InvalidCondition) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (EstimationError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
