"""Command-line interface.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import report, simulation
from .estimation import ConvergenceError, FitOptions, fit, parse_quantity
from .metrics import (
    confusion_matrix,
    identity_probs,
    precision_recall,
    read_confusion_csv,
)
from .model import OccupancyParams
from .rng import DEFAULT_SEED
from .survey import (
    DetectionHistory,
    SurveyDataError,
    build_detection_history,
    history_summary,
    read_deployments_csv,
    read_images_csv,
    write_deployments_csv,
    write_images_csv,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    pass


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _existing(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {path}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> dict:
    # threads and out do not change results, so they stay out of the record
    skip = {"func", "out", "threads"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _envelope(args, payload: dict) -> dict:
    return {"schema_version": report.SCHEMA_VERSION, "command": args.command,
            "config": _config(args), **payload}


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    print(path)


def _fit_options(args) -> FitOptions:
    return FitOptions(n_starts=args.starts, seed=args.seed, threads=args.threads,
                      grad_tol=args.grad_tol, max_iter=args.max_iter)


def _species(args) -> list[str]:
    if not args.species:
        raise InputError("--species is required")
    return _csv_list(args.species)


def _load_history(args) -> DetectionHistory:
    if getattr(args, "history", None):
        path = _existing(args.history, "history")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        return DetectionHistory.from_dict(data.get("history", data))
    if not args.images:
        raise InputError("--images (or --history) is required")
    records = read_images_csv(_existing(args.images, "images"))
    deployments = (
        read_deployments_csv(_existing(args.deployments, "deployments"))
        if args.deployments else None
    )
    return build_detection_history(records, _species(args), deployments, args.label_source)


def _load_probs(spec: str, labels):
    if spec == "identity":
        return identity_probs(labels)
    if spec == "transfer":
        return simulation.transfer_probs(labels)
    return read_confusion_csv(_existing(spec, "confusion"))


def _target_index(args, species) -> int:
    if args.target is None:
        return 0
    if args.target not in species:
        raise InputError(f"--target {args.target!r} is not among {list(species)}")
    return list(species).index(args.target)


# -- subcommands ------------------------------------------------------------------


def cmd_ingest(args) -> int:
    h = _load_history(args)
    out = _out_dir(args)
    payload = _envelope(args, {"history": h.to_dict()})
    _write(out / "history.json", report.dumps(payload))
    rows = [dataclasses.asdict(s) for s in history_summary(h)]
    fields = ("species", "detections", "active_cells", "sites_detected", "sites_surveyed",
              "naive_occupancy")
    report.write_rows_csv(out / "summary.csv", rows, fields)
    print(out / "summary.csv")
    return EXIT_OK


def cmd_metrics(args) -> int:
    records = read_images_csv(_existing(args.images, "images"))
    cm = confusion_matrix(records)
    m = precision_recall(cm)
    if m.undefined:
        warnings.warn(f"undefined metrics (zero denominator): {', '.join(m.undefined)}")
    out = _out_dir(args)
    _write(out / "metrics.json", report.dumps(_envelope(args, {"n_records": cm.total, **m.to_dict()})))
    cm.to_csv(out / "confusion.csv")
    print(out / "confusion.csv")
    return EXIT_OK


def cmd_fit(args) -> int:
    h = _load_history(args)
    target = _target_index(args, h.species)
    result = fit(h, _fit_options(args))
    out = _out_dir(args)
    payload = report.fit_to_dict(result, args.level, target=target)
    _write(out / "fit-result.json", report.dumps(_envelope(args, {"fit": payload})))
    report.write_rows_csv(out / "derived.csv", payload["estimates"])
    print(out / "derived.csv")
    return EXIT_OK


def cmd_derive(args) -> int:
    path = _existing(args.fit, "fit result")
    try:
        data = json.loads(path.read_text())
        result = report.fit_from_dict(data.get("fit", data))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: not a fit result ({exc})") from None
    if result.vcov is None:
        raise InputError(f"{path}: fit has no variance matrix; intervals unavailable")
    target = _target_index(args, result.species)
    quantities = None
    if args.quantity:
        try:
            quantities = [parse_quantity(q, result.species) for q in args.quantity]
        except KeyError as exc:
            raise InputError(str(exc.args[0])) from None
    rows = report.estimate_rows(result, quantities, args.level, target)
    out = _out_dir(args)
    _write(out / "derived.json", report.dumps(_envelope(args, {"estimates": rows})))
    report.write_rows_csv(out / "derived.csv", rows)
    print(out / "derived.csv")
    return EXIT_OK


def _sim_params(args) -> tuple[OccupancyParams, tuple[str, ...]]:
    species = tuple(_csv_list(args.species)) if args.species else simulation.CASE_STUDY_SPECIES
    S = len(species)
    if args.psi is None and args.p is None:
        if S != 3:
            raise InputError("--psi and --p are required unless simulating the 3-species default")
        return simulation.case_study_params(), species
    if args.psi is None or args.p is None:
        raise InputError("give both --psi and --p")
    try:
        return OccupancyParams(np.array(args.psi), np.array(args.p)), species
    except ValueError as exc:
        raise InputError(f"invalid parameters: {exc}") from None


def _background(text: str | None) -> dict[str, float]:
    out = {}
    for part in _csv_list(text or ""):
        try:
            name, rate = part.split(":")
            out[name.strip()] = float(rate)
        except ValueError:
            raise InputError(f"--background entries look like label:rate, got {part!r}") from None
    return out


def cmd_simulate(args) -> int:
    params, species = _sim_params(args)
    if len(species) != params.S:
        raise InputError(f"{len(species)} species names for {params.S}-species parameters")
    spec = simulation.SimSpec(params, args.sites, args.occasions, args.missing_rate, args.seed,
                              species, args.start_month)
    h = simulation.simulate_history(spec)
    out = _out_dir(args)
    if args.format == "history":
        _write(out / "history.json", report.dumps(_envelope(args, {"history": h.to_dict()})))
        return EXIT_OK
    records, windows = simulation.simulate_records(
        h, args.seed, args.images_per_detection, _background(args.background)
    )
    write_images_csv(out / "images.csv", records)
    write_deployments_csv(out / "deployments.csv", windows)
    print(out / "images.csv")
    print(out / "deployments.csv")
    return EXIT_OK


def _corrupt_sites(args, records) -> set[str] | None:
    if not args.corrupt_sites:
        return None
    sites = set(_csv_list(args.corrupt_sites))
    unknown = sites - {r.site_id for r in records}
    if unknown:
        warnings.warn(f"--corrupt-sites names sites without records: {sorted(unknown)}")
    return sites


def cmd_corrupt(args) -> int:
    records = read_images_csv(_existing(args.images, "images"))
    labels = sorted({r.label_true for r in records})
    probs = _load_probs(args.confusion, labels)
    classified = simulation.corrupt_labels(records, probs, args.seed, _corrupt_sites(args, records))
    out = _out_dir(args)
    write_images_csv(out / "images.csv", classified)
    print(out / "images.csv")
    return EXIT_OK


def cmd_experiment(args) -> int:
    records = read_images_csv(_existing(args.images, "images"))
    deployments = (
        read_deployments_csv(_existing(args.deployments, "deployments"))
        if args.deployments else None
    )
    species = _species(args)
    target = _target_index(args, species)
    labels = sorted({r.label_true for r in records} | set(species))
    probs = _load_probs(args.confusion, labels)
    rep = simulation.run_experiment(
        records, species, probs, deployments, _fit_options(args), args.seed,
        _corrupt_sites(args, records), target,
    )
    if rep.metrics and rep.metrics.undefined:
        warnings.warn(f"undefined metrics (zero denominator): {', '.join(rep.metrics.undefined)}")
    out = _out_dir(args)
    payload = report.experiment_to_dict(rep, args.level, target)
    _write(out / "experiment.json", report.dumps(_envelope(args, payload)))
    report.write_rows_csv(
        out / "comparison.csv", report.experiment_rows(rep, args.level, target),
        ("dataset", *report.ROW_FIELDS),
    )
    print(out / "comparison.csv")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help=f"random seed (default: {DEFAULT_SEED})")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads; results do not depend on it (default: 1)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--images", help="images.csv (site_id,timestamp,label_true,label_pred)")
    data.add_argument("--deployments", help="deployments.csv (site_id,start,end)")
    data.add_argument("--species", help="comma-separated species to model, e.g. lynx,roe_deer")
    data.add_argument("--label-source", choices=("true", "predicted"), default="true")

    fitting = argparse.ArgumentParser(add_help=False)
    fitting.add_argument("--starts", type=int, default=5, help="random optimizer starts (default: 5)")
    fitting.add_argument("--level", type=float, default=0.95, help="interval level (default: 0.95)")
    fitting.add_argument("--grad-tol", type=float, default=1e-6,
                         help="gradient inf-norm convergence tolerance (default: 1e-6)")
    fitting.add_argument("--max-iter", type=int, default=500, help="optimizer iterations (default: 500)")
    fitting.add_argument("--target", help="species whose conditional occupancy is reported "
                                          "(default: first species)")

    parser = argparse.ArgumentParser(
        prog="msocc",
        description="Multispecies occupancy models for camera-trap data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common, data], help="build a monthly detection history")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("metrics", parents=[common], help="classifier confusion matrix and rates")
    p.add_argument("--images", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("fit", parents=[common, data, fitting], help="fit the occupancy model")
    p.add_argument("--history", help="history JSON from `ingest` or `simulate` (instead of --images)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("derive", parents=[common, fitting],
                       help="intervals for derived quantities of a saved fit")
    p.add_argument("--fit", required=True, help="fit-result.json")
    p.add_argument("--quantity", action="append",
                   help="e.g. 'marginal(lynx)' or 'conditional(lynx|roe_deer=1)'; repeatable")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("simulate", parents=[common], help="simulate a survey")
    p.add_argument("--species", help="species names (default: lynx,roe_deer,chamois)")
    p.add_argument("--psi", type=_float_list, help="2**S state probabilities, species 0 = low bit")
    p.add_argument("--p", type=_float_list, help="S detection probabilities")
    p.add_argument("--sites", type=int, default=500)
    p.add_argument("--occasions", type=int, default=12)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--start-month", default="2017-01")
    p.add_argument("--format", choices=("history", "images"), default="history")
    p.add_argument("--images-per-detection", type=float, default=3.0)
    p.add_argument("--background", help="extra labels as label:rate per site-month, e.g. human:2,fox:1")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("corrupt", parents=[common], help="fill label_pred by simulated misclassification")
    p.add_argument("--images", required=True)
    p.add_argument("--confusion", default="transfer",
                   help="confusion CSV, or 'transfer' / 'identity' (default: transfer)")
    p.add_argument("--corrupt-sites", help="comma-separated sites to corrupt (default: all)")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("experiment", parents=[common, data, fitting],
                       help="compare fits on true vs classifier labels")
    p.add_argument("--confusion", default="transfer",
                   help="confusion CSV, or 'transfer' / 'identity' (default: transfer)")
    p.add_argument("--corrupt-sites", help="comma-separated sites to corrupt (default: all)")
    p.set_defaults(func=cmd_experiment)
    return parser


def _showwarning(message, category, filename, lineno, file=None, line=None):
    print(f"msocc: warning: {message}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    saved, warnings.showwarning = warnings.showwarning, _showwarning
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"msocc: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, SurveyDataError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"msocc: error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        warnings.showwarning = saved


if __name__ == "__main__":
    sys.exit(main())
