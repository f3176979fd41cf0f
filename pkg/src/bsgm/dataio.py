"""File formats: wide CSV datasets, parameter JSON, report JSON/CSV.

The wide CSV has one row per individual with columns
``id, y1..yJ, t1..tJ, x1..xc``; values are written with 17 significant
digits so a write/read round trip is lossless for doubles.  Matrices in
JSON files are row-major flat arrays with explicit dimensions.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re

import numpy as np

from .estimate import BaselineParams, FitResult
from .harness import MetricsReport
from .model import LongitudinalDataset, OriginalParams, ReducedOriginal, ReducedParams, ReparamParams
from .simulate import SimCondition


class InputError(ValueError):
    pass


def _fmt(x):
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# Wide CSV datasets
# ---------------------------------------------------------------------------


def write_wide_csv(path, dataset: LongitudinalDataset):
    n_waves = dataset.n_waves
    c = dataset.n_covariates
    header = (["id"]
              + [f"y{j + 1}" for j in range(n_waves)]
              + [f"t{j + 1}" for j in range(n_waves)]
              + [f"x{j + 1}" for j in range(c)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n_individuals):
            row = ([str(i + 1)]
                   + [_fmt(v) for v in dataset.y[i]]
                   + [_fmt(v) for v in dataset.t[i]]
                   + [_fmt(v) for v in dataset.x[i]])
            writer.writerow(row)


def _header_layout(header):
    cols = [h.strip() for h in header]
    if not cols or cols[0] != "id":
        raise InputError("first column must be 'id'")
    groups = {"y": [], "t": [], "x": []}
    for name in cols[1:]:
        m = re.fullmatch(r"([ytx])(\d+)", name)
        if not m:
            raise InputError(f"unexpected column {name!r}; expected y#/t#/x# names")
        groups[m.group(1)].append(int(m.group(2)))
    for key in ("y", "t", "x"):
        if groups[key] != list(range(1, len(groups[key]) + 1)):
            raise InputError(f"{key} columns must be consecutive starting at {key}1")
    if len(groups["y"]) != len(groups["t"]):
        raise InputError("need matching numbers of y and t columns")
    if not groups["y"]:
        raise InputError("need at least one y column")
    return len(groups["y"]), len(groups["x"])


def read_wide_csv(path) -> LongitudinalDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        n_waves, c = _header_layout(header)
        names = header[1:]
        y_rows, t_rows, x_rows = [], [], []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 1 + 2 * n_waves + c:
                raise InputError(f"{path}: row {r} has {len(row)} cells, expected {1 + 2 * n_waves + c}")
            vals = []
            for name, cell in zip(names, row[1:]):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise InputError(f"{path}: row {r}, column {name}: cannot parse {cell!r}") from None
            y_rows.append(vals[:n_waves])
            t_rows.append(vals[n_waves:2 * n_waves])
            x_rows.append(vals[2 * n_waves:])
    if not y_rows:
        raise InputError(f"{path}: no data rows")
    x = np.asarray(x_rows) if c else np.zeros((len(y_rows), 0))
    try:
        return LongitudinalDataset(y=np.asarray(y_rows), t=np.asarray(t_rows), x=x)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def read_long_csv(path) -> LongitudinalDataset:
    """Long-format reader: columns ``id, wave, y, t, x1..xc``.

    One row per observation, pivoted internally to the wide layout.
    Every individual must have exactly one row per wave (complete data),
    and covariates must not vary within an individual.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if header[:4] != ["id", "wave", "y", "t"]:
            raise InputError(f"{path}: long format needs columns id, wave, y, t, x1..xc")
        x_names = header[4:]
        for j, name in enumerate(x_names):
            if name != f"x{j + 1}":
                raise InputError(f"{path}: unexpected covariate column {name!r}")
        rows = {}
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            try:
                ident = row[0].strip()
                wave = int(row[1])
                vals = [float(v) for v in row[2:]]
            except ValueError:
                raise InputError(f"{path}: row {r}: cannot parse cells {row[1:]!r}") from None
            rows.setdefault(ident, {})
            if wave in rows[ident]:
                raise InputError(f"{path}: duplicate wave {wave} for id {ident}")
            rows[ident][wave] = vals
    if not rows:
        raise InputError(f"{path}: no data rows")
    waves = sorted(next(iter(rows.values())).keys())
    y_rows, t_rows, x_rows = [], [], []
    for ident, per_wave in rows.items():
        if sorted(per_wave.keys()) != waves:
            raise InputError(f"{path}: id {ident} does not cover waves {waves}")
        y_rows.append([per_wave[w][0] for w in waves])
        t_rows.append([per_wave[w][1] for w in waves])
        xs = {tuple(per_wave[w][2:]) for w in waves}
        if len(xs) > 1:
            raise InputError(f"{path}: covariates vary within id {ident}")
        x_rows.append(list(xs.pop()))
    x = np.asarray(x_rows) if x_names else np.zeros((len(y_rows), 0))
    try:
        return LongitudinalDataset(y=np.asarray(y_rows), t=np.asarray(t_rows), x=x)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# Parameter JSON
# ---------------------------------------------------------------------------


def _mat_to_json(m):
    m = np.asarray(m, dtype=float)
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]), "data": [float(v) for v in m.ravel()]}


def _mat_from_json(obj, name):
    try:
        rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
    except (KeyError, TypeError):
        raise InputError(f"{name}: expected an object with rows/cols/data") from None
    if len(data) != rows * cols:
        raise InputError(f"{name}: data length {len(data)} does not match {rows}x{cols}")
    return np.asarray(data, dtype=float).reshape(rows, cols)


def params_to_json(params) -> dict:
    if isinstance(params, OriginalParams):
        return {
            "space": "original",
            "alpha": [float(v) for v in params.alpha],
            "psi": _mat_to_json(params.psi),
            "beta": _mat_to_json(params.beta),
            "muX": [float(v) for v in params.mu_x],
            "phi": _mat_to_json(params.phi),
            "thetaEps": float(params.theta_eps),
        }
    if isinstance(params, ReparamParams):
        return {
            "space": "reparam",
            "alphaPrime": [float(v) for v in params.alpha],
            "psiPrime": _mat_to_json(params.psi),
            "betaPrime": _mat_to_json(params.beta),
            "muX": [float(v) for v in params.mu_x],
            "phi": _mat_to_json(params.phi),
            "thetaEps": float(params.theta_eps),
        }
    if isinstance(params, (ReducedParams, ReducedOriginal)):
        space = "reducedReparam" if isinstance(params, ReducedParams) else "reducedOriginal"
        key = "alphaPrime" if isinstance(params, ReducedParams) else "alpha"
        psi_key = "psiPrime" if isinstance(params, ReducedParams) else "psi"
        beta_key = "betaPrime" if isinstance(params, ReducedParams) else "beta"
        return {
            "space": space,
            key: [float(v) for v in params.alpha],
            "knot": float(params.knot),
            psi_key: _mat_to_json(params.psi),
            beta_key: _mat_to_json(params.beta),
            "muX": [float(v) for v in params.mu_x],
            "phi": _mat_to_json(params.phi),
            "thetaEps": float(params.theta_eps),
        }
    if isinstance(params, BaselineParams):
        return {
            "space": "baseline",
            "form": params.form,
            "alpha": [float(v) for v in params.alpha],
            "psi": _mat_to_json(params.psi),
            "beta": _mat_to_json(params.beta),
            "muX": [float(v) for v in params.mu_x],
            "phi": _mat_to_json(params.phi),
            "thetaEps": float(params.theta_eps),
        }
    raise TypeError(f"cannot serialize {type(params).__name__}")


def params_from_json(obj):
    if not isinstance(obj, dict) or "space" not in obj:
        raise InputError("parameter file must be an object with a 'space' field")
    space = obj["space"]
    try:
        if space == "original":
            return OriginalParams(
                alpha=np.asarray(obj["alpha"], dtype=float),
                psi=_mat_from_json(obj["psi"], "psi"),
                beta=_mat_from_json(obj["beta"], "beta"),
                mu_x=np.asarray(obj["muX"], dtype=float),
                phi=_mat_from_json(obj["phi"], "phi"),
                theta_eps=float(obj["thetaEps"]),
            )
        if space == "reparam":
            return ReparamParams(
                alpha=np.asarray(obj["alphaPrime"], dtype=float),
                psi=_mat_from_json(obj["psiPrime"], "psiPrime"),
                beta=_mat_from_json(obj["betaPrime"], "betaPrime"),
                mu_x=np.asarray(obj["muX"], dtype=float),
                phi=_mat_from_json(obj["phi"], "phi"),
                theta_eps=float(obj["thetaEps"]),
            )
    except KeyError as exc:
        raise InputError(f"parameter file is missing field {exc}") from None
    except ValueError as exc:
        raise InputError(str(exc)) from None
    raise InputError(f"unsupported parameter space {space!r}")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Fit reports
# ---------------------------------------------------------------------------


def _ci_block(ci):
    if ci is None:
        return None
    return {k: [float(lo), float(hi)] for k, (lo, hi) in ci.items()}


def fit_report_dict(fit: FitResult, cfg_hash, seed) -> dict:
    return {
        "configHash": cfg_hash,
        "seed": int(seed),
        "model": fit.model,
        "mode": fit.mode,
        "originalParams": params_to_json(fit.theta),
        "reparamParams": params_to_json(fit.theta_prime),
        "estimates": {
            "original": {k: float(v) for k, v in fit.estimates_original.items()},
            "reparam": {k: float(v) for k, v in fit.estimates_reparam.items()},
        },
        "se": {
            "original": None if fit.se_original is None else {k: float(v) for k, v in fit.se_original.items()},
            "reparam": None if fit.se_reparam is None else {k: float(v) for k, v in fit.se_reparam.items()},
        },
        "ci": {
            "original": _ci_block(fit.ci_original),
            "reparam": _ci_block(fit.ci_reparam),
        },
        "fit": {
            "loglik": float(fit.loglik),
            "aic": float(fit.aic),
            "bic": float(fit.bic),
            "residualVar": float(fit.residual_var),
            "nParams": int(fit.n_params),
        },
        "status": {
            "converged": bool(fit.converged),
            "attempts": int(fit.attempts),
            "improperFlags": list(fit.improper_flags),
            "seFailed": bool(fit.se_failed),
        },
        "xMeans": [float(v) for v in fit.x_means],
    }


# ---------------------------------------------------------------------------
# Metrics reports
# ---------------------------------------------------------------------------


def condition_to_dict(cond: SimCondition) -> dict:
    return {
        "n": cond.n,
        "J": cond.n_waves,
        "knotMean": cond.knot_mean,
        "knotSD": cond.knot_sd,
        "slopeDiff": cond.slope_diff,
        "explainedShare": cond.explained_share,
        "thetaEps": cond.theta_eps,
        "delta": cond.delta,
    }


def metrics_report_dict(report: MetricsReport) -> dict:
    return {
        "condition": condition_to_dict(report.condition),
        "S": report.s,
        "masterSeed": report.master_seed,
        "attempted": report.attempted,
        "converged": report.converged,
        "improper": {
            "any": report.n_improper_any,
            "negativeVariance": report.n_improper_negative_variance,
            "outOfRangeCorrelation": report.n_improper_out_of_range,
        },
        "usedReduced": report.n_used_reduced,
        "params": {
            name: {
                "truth": pm.truth,
                "nUsed": pm.n_used,
                "relativeBias": pm.relative_bias,
                "biasIsAbsolute": pm.bias_is_absolute,
                "empiricalSE": pm.empirical_se,
                "relativeRMSE": pm.relative_rmse,
                "rmseIsAbsolute": pm.rmse_is_absolute,
                "coverage": pm.coverage,
                "nCI": pm.n_ci,
                "mcSeBias": pm.mc_se_bias,
            }
            for name, pm in report.params.items()
        },
    }


_METRIC_CSV_COLS = [
    "n", "J", "knotMean", "knotSD", "slopeDiff", "explainedShare", "thetaEps", "delta",
    "masterSeed", "S", "attempted", "parameter", "truth", "nUsed",
    "relativeBias", "biasIsAbsolute", "empiricalSE", "relativeRMSE", "coverage", "mcSeBias",
]


def write_metrics_csv(path, reports):
    """Flat CSV: one row per parameter per condition."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_METRIC_CSV_COLS)
        for report in reports:
            cond = condition_to_dict(report.condition)
            for name, pm in report.params.items():
                writer.writerow([
                    cond["n"], cond["J"], _fmt(cond["knotMean"]), _fmt(cond["knotSD"]),
                    _fmt(cond["slopeDiff"]), _fmt(cond["explainedShare"]),
                    _fmt(cond["thetaEps"]), _fmt(cond["delta"]),
                    report.master_seed, report.s, report.attempted,
                    name, _fmt(pm.truth), pm.n_used,
                    _fmt(pm.relative_bias), int(pm.bias_is_absolute),
                    _fmt(pm.empirical_se), _fmt(pm.relative_rmse),
                    "" if pm.coverage is None else _fmt(pm.coverage),
                    _fmt(pm.mc_se_bias),
                ])
