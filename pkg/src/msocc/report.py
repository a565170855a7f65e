"""JSON / CSV serialization of fits and experiments."""
from __future__ import annotations

import csv
import json
import math
from typing import Sequence

import numpy as np

from . import model
from .estimation import (
    Conditional,
    FitResult,
    Marginal,
    derived_interval,
    wald_interval,
)
from .simulation import ExperimentReport, default_quantities

SCHEMA_VERSION = "1.0"

ROW_FIELDS = ("quantity", "point", "lower", "upper", "se", "level")


def _clean(obj):
    """Make ``obj`` strict-JSON safe: numpy scalars to Python, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def estimate_rows(
    result: FitResult,
    quantities: Sequence[Marginal | Conditional] | None = None,
    level: float = 0.95,
    target: int = 0,
) -> list[dict]:
    """Point estimates with intervals: detection probabilities then derived quantities.

    Without a variance matrix the intervals are left empty.
    """
    names = result.species
    S = result.S
    quantities = list(quantities) if quantities is not None else default_quantities(S, target)
    rows = []
    k0 = 2**S - 1
    for s, name in enumerate(names):
        if result.vcov is not None:
            iv = wald_interval(result, k0 + s, level)
            rows.append(dict(quantity=f"p({name})", point=iv.point, lower=iv.lower,
                             upper=iv.upper, se=iv.se, level=level))
        else:
            rows.append(dict(quantity=f"p({name})", point=float(result.params_hat.p[s]),
                             lower=None, upper=None, se=None, level=level))
    for q in quantities:
        label = q.label(names)
        try:
            if result.vcov is not None:
                iv = derived_interval(result, q, level)
                rows.append(dict(quantity=label, point=iv.point, lower=iv.lower,
                                 upper=iv.upper, se=iv.se, level=level))
            else:
                rows.append(dict(quantity=label, point=q.value(result.params_hat),
                                 lower=None, upper=None, se=None, level=level))
        except ZeroDivisionError:
            rows.append(dict(quantity=label, point=None, lower=None, upper=None,
                             se=None, level=level))
    return rows


def fit_to_dict(result: FitResult, level: float = 0.95, quantities=None, target: int = 0) -> dict:
    S = result.S
    params = result.params_hat
    return {
        "species": list(result.species),
        "theta_hat": result.theta_hat,
        "params": {
            "psi": {model.state_label(z, S): params.psi[z] for z in range(2**S)},
            "p": {name: params.p[s] for s, name in enumerate(result.species)},
        },
        "nll": result.nll,
        "vcov": result.vcov,
        "converged": result.converged,
        "n_starts_converged": result.n_starts_converged,
        "boundary_warning": result.boundary_warning,
        "grad_norm": result.grad_norm,
        "start_nlls": list(result.start_nlls),
        "warnings": list(result.warnings),
        "estimates": estimate_rows(result, quantities, level, target),
    }


def fit_from_dict(data: dict) -> FitResult:
    """Rebuild the parts of a :class:`FitResult` needed for interval work."""
    species = tuple(data["species"])
    theta = np.asarray(data["theta_hat"], dtype=float)
    vcov = data.get("vcov")
    return FitResult(
        species=species,
        theta_hat=theta,
        params_hat=model.theta_to_params(theta, len(species)),
        nll=float(data["nll"]),
        vcov=None if vcov is None else np.asarray(vcov, dtype=float),
        converged=bool(data["converged"]),
        n_starts_converged=int(data.get("n_starts_converged", 0)),
        boundary_warning=bool(data.get("boundary_warning", False)),
        grad_norm=float(data.get("grad_norm") or float("nan")),
        start_nlls=tuple(float("nan") if v is None else v for v in data.get("start_nlls", ())),
        warnings=tuple(data.get("warnings", ())),
    )


def experiment_to_dict(report: ExperimentReport, level: float = 0.95, target: int = 0) -> dict:
    return {
        "species": list(report.species),
        "fit_truth": fit_to_dict(report.fit_truth, level, target=target),
        "fit_classified": fit_to_dict(report.fit_classified, level, target=target),
        "deltas": report.deltas,
        "max_marginal_delta": report.max_marginal_delta,
        "metrics": report.metrics.to_dict() if report.metrics else None,
        "histories_identical": report.history_truth == report.history_classified,
    }


def write_rows_csv(path, rows: Sequence[dict], fields=ROW_FIELDS, extra: dict | None = None) -> None:
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*extra.keys(), *fields])
        for row in rows:
            writer.writerow([*extra.values(), *(_fmt(row.get(f)) for f in fields)])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if not math.isfinite(v) else repr(v)
    return str(v)


def experiment_rows(report: ExperimentReport, level: float = 0.95, target: int = 0) -> list[dict]:
    rows = []
    for dataset, result in (("truth", report.fit_truth), ("classified", report.fit_classified)):
        for row in estimate_rows(result, None, level, target):
            rows.append({"dataset": dataset, **row})
    return rows
