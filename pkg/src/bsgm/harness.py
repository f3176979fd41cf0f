"""Replication loops and performance metrics for simulation studies.

A replication generates a dataset from a condition, fits the random-knot
model, and on a convergent-but-improper solution refits the fixed-knot
model and evaluates that instead (parameters the fixed-knot model does
not carry are then summarized only over the proper replications).
Conditions are run until a requested number of convergent replications
is reached, taking replications strictly in seed-index order so results
do not depend on how work is scheduled across processes.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .estimate import FitOptions, FitResult, fit_full, fit_reduced, param_names
from .model import OriginalParams
from .simulate import SimCondition, condition_to_params, gen_dataset

ZERO_TRUTH = 1e-8


class TooFewReps(ValueError):
    pass


@dataclass(frozen=True)
class MetricValue:
    """A bias-style metric; ``absolute`` marks a near-zero truth, where
    the unscaled value is reported instead of the relative one."""

    value: float
    absolute: bool = False


def metric_relative_bias(estimates, truth):
    """Mean estimation error relative to the truth.

    When the truth is below the zero threshold the relative version
    would blow up, so the absolute mean error is returned with the
    marker set.
    """
    est = np.asarray(estimates, dtype=float)
    bias = float(np.mean(est - truth))
    if abs(truth) < ZERO_TRUTH:
        return MetricValue(bias, absolute=True)
    return MetricValue(bias / truth, absolute=False)


def metric_empirical_se(estimates):
    """Sample standard deviation of the estimates across replications."""
    est = np.asarray(estimates, dtype=float)
    if est.size < 2:
        raise TooFewReps("empirical SE needs at least two replications")
    return float(np.sqrt(np.sum((est - est.mean()) ** 2) / (est.size - 1)))


def metric_relative_rmse(estimates, truth):
    """Root mean squared error relative to the truth (same zero rule)."""
    est = np.asarray(estimates, dtype=float)
    rmse = float(np.sqrt(np.mean((est - truth) ** 2)))
    if abs(truth) < ZERO_TRUTH:
        return MetricValue(rmse, absolute=True)
    return MetricValue(rmse / truth, absolute=False)


def metric_coverage(cis, truth):
    """Fraction of closed intervals containing the truth."""
    if len(cis) < 1:
        raise TooFewReps("coverage needs at least one interval")
    hits = sum(1 for lo, hi in cis if lo <= truth <= hi)
    return hits / len(cis)


def mc_se_bias(variance, s):
    """Monte Carlo standard error of an estimated bias."""
    return float(np.sqrt(variance / s))


@dataclass(frozen=True)
class RepOutcome:
    """Everything recorded about one replication."""

    seed: int
    full_fit: FitResult
    reduced_fit: FitResult | None
    used_reduced: bool
    converged: bool
    attempts: int
    improper: tuple


@dataclass(frozen=True)
class ParamMetrics:
    name: str
    truth: float
    n_used: int
    relative_bias: float
    bias_is_absolute: bool
    empirical_se: float
    relative_rmse: float
    rmse_is_absolute: bool
    coverage: float | None
    n_ci: int
    mc_se_bias: float


@dataclass(frozen=True)
class MetricsReport:
    """Per-parameter performance summary for one condition."""

    condition: SimCondition
    s: int
    master_seed: int
    attempted: int
    converged: int
    n_improper_any: int
    n_improper_negative_variance: int
    n_improper_out_of_range: int
    n_used_reduced: int
    params: dict


def replication_seed(master_seed, rep_index):
    """Well-mixed 64-bit seed for one replication of one run."""
    ss = np.random.SeedSequence((int(master_seed), int(rep_index)))
    return int(ss.generate_state(1, np.uint64)[0])


def run_replication(cond: SimCondition, seed, options: FitOptions) -> RepOutcome:
    """Generate, fit, and apply the improper-solution replacement rule."""
    rng = np.random.default_rng(int(seed))
    dataset, _ = gen_dataset(cond, rng)
    opts = dataclasses.replace(options, seed=int(seed))
    full = fit_full(dataset, opts)
    reduced = None
    used_reduced = False
    if full.converged and full.improper_flags:
        reduced = fit_reduced(dataset, opts)
        used_reduced = bool(reduced.converged)
    return RepOutcome(
        seed=int(seed),
        full_fit=full,
        reduced_fit=reduced,
        used_reduced=used_reduced,
        converged=bool(full.converged),
        attempts=full.attempts,
        improper=full.improper_flags,
    )


def _evaluation_fit(outcome: RepOutcome) -> FitResult:
    return outcome.reduced_fit if outcome.used_reduced else outcome.full_fit


def _call_replication(args):
    fn, cond, seed, options = args
    return fn(cond, seed, options)


def _run_batch(indices, cond, options, master_seed, workers, replication_fn):
    args = [(replication_fn, cond, replication_seed(master_seed, i), options) for i in indices]
    if workers <= 1 or len(args) == 1:
        return [_call_replication(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call_replication, args))


def truth_param_dict(theta: OriginalParams):
    """Flat name -> value map of interpretable-space population values."""
    c = theta.n_covariates
    flat = np.concatenate([
        theta.alpha,
        theta.psi[np.tril_indices(4)],
        theta.beta.ravel(),
        [theta.theta_eps],
    ])
    return dict(zip(param_names("full", c, "original"), flat))


def run_condition(cond: SimCondition, s, options: FitOptions, workers=1,
                  replication_fn=run_replication) -> MetricsReport:
    """Replicate a condition until ``s`` convergent fits are collected.

    The convergent outcomes used are exactly the first ``s`` in
    replication-index order; ``attempted`` records how many indices that
    took.  ``options.seed`` acts as the master seed.
    """
    if s < 1:
        raise ValueError("need at least one replication")
    master_seed = options.seed
    results = {}
    next_idx = 0
    prefix_len = None
    while prefix_len is None:
        done = sum(results[i].converged for i in range(next_idx))
        deficit = s - done
        if deficit <= 0:
            cum = 0
            for i in range(next_idx):
                cum += results[i].converged
                if cum == s:
                    prefix_len = i + 1
                    break
            break
        batch = list(range(next_idx, next_idx + max(deficit, workers)))
        for idx, out in zip(batch, _run_batch(batch, cond, options, master_seed,
                                              workers, replication_fn)):
            results[idx] = out
        next_idx = batch[-1] + 1

    outcomes = [results[i] for i in range(prefix_len) if results[i].converged]
    truth = truth_param_dict(condition_to_params(cond))

    n_any = sum(1 for o in outcomes if o.improper)
    n_neg = sum(1 for o in outcomes if any(f.startswith("negativeVariance") for f in o.improper))
    n_oor = sum(1 for o in outcomes if any(f.startswith("outOfRangeCorrelation") for f in o.improper))
    n_red = sum(1 for o in outcomes if o.used_reduced)

    params = {}
    for name, true_val in truth.items():
        ests = []
        cis = []
        for o in outcomes:
            fit = _evaluation_fit(o)
            if name not in fit.estimates_original:
                continue
            ests.append(fit.estimates_original[name])
            if fit.ci_original is not None:
                lo, hi = fit.ci_original[name]
                if np.isfinite(lo) and np.isfinite(hi):
                    cis.append((lo, hi))
        if not ests:
            continue
        arr = np.asarray(ests)
        bias = metric_relative_bias(arr, true_val)
        rmse = metric_relative_rmse(arr, true_val)
        emp_se = metric_empirical_se(arr) if arr.size >= 2 else 0.0
        params[name] = ParamMetrics(
            name=name,
            truth=float(true_val),
            n_used=int(arr.size),
            relative_bias=bias.value,
            bias_is_absolute=bias.absolute,
            empirical_se=emp_se,
            relative_rmse=rmse.value,
            rmse_is_absolute=rmse.absolute,
            coverage=metric_coverage(cis, true_val) if cis else None,
            n_ci=len(cis),
            mc_se_bias=mc_se_bias(float(np.var(arr)), arr.size),
        )

    return MetricsReport(
        condition=cond,
        s=s,
        master_seed=int(master_seed),
        attempted=prefix_len,
        converged=len(outcomes),
        n_improper_any=n_any,
        n_improper_negative_variance=n_neg,
        n_improper_out_of_range=n_oor,
        n_used_reduced=n_red,
        params=params,
    )


_SUMMARY_METRICS = ("relative_bias", "empirical_se", "relative_rmse", "coverage", "mc_se_bias")


def summarize_grid(reports):
    """Median and range of each metric per parameter across conditions.

    ``reports`` is an iterable (or mapping) of MetricsReport values.
    Parameters absent from a condition's report are skipped for that
    condition.
    """
    if hasattr(reports, "values"):
        reports = list(reports.values())
    else:
        reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    names = []
    for rep in reports:
        for nm in rep.params:
            if nm not in names:
                names.append(nm)
    summary = {}
    for nm in names:
        per_metric = {}
        for metric in _SUMMARY_METRICS:
            vals = []
            for rep in reports:
                pm = rep.params.get(nm)
                if pm is None:
                    continue
                val = getattr(pm, metric)
                if val is None or not np.isfinite(val):
                    continue
                vals.append(float(val))
            if not vals:
                continue
            per_metric[metric] = {
                "median": float(np.median(vals)),
                "min": float(np.min(vals)),
                "max": float(np.max(vals)),
            }
        summary[nm] = per_metric
    return summary
