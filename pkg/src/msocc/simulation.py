"""Seeded simulation of detection histories, image streams and classifier errors."""
from __future__ import annotations

import calendar
import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Mapping, Sequence

import numpy as np

from . import model
from .estimation import (
    Conditional,
    ConvergenceError,
    FitOptions,
    FitResult,
    Marginal,
    derived_interval,
    fit,
    wald_interval,
)
from .metrics import (
    MetricsReport,
    MisclassificationProbs,
    confusion_matrix,
    precision_recall,
)
from .model import OccupancyParams, SiteCounts
from .rng import DEFAULT_SEED, Stream, child_seed, generator
from .survey import (
    MISSING,
    DeploymentWindow,
    DetectionHistory,
    ImageRecord,
    SurveyDataError,
    _month_index,
    _month_label,
    build_detection_history,
)

__all__ = [
    "CASE_STUDY_SPECIES",
    "CASE_STUDY_P",
    "TRANSFER_RECALL",
    "SimSpec",
    "ExperimentReport",
    "case_study_params",
    "simulate_history",
    "simulate_counts",
    "simulate_records",
    "corrupt_labels",
    "transfer_probs",
    "default_quantities",
    "run_experiment",
    "case_study_experiment",
    "bootstrap",
    "recovery_study",
]

CASE_STUDY_SPECIES = ("lynx", "roe_deer", "chamois")
# detection probabilities reported for the ground-truth fit
CASE_STUDY_P = (0.51, 0.63, 0.61)

# per-class recall on the transfer (unseen) study site
TRANSFER_RECALL = {
    "badger": 0.89,
    "rider": 0.92,
    "red_deer": 0.00,
    "chamois": 0.08,
    "hunter": 0.11,
    "cat": 0.59,
    "roe_deer": 0.86,
    "dog": 0.35,
    "human": 0.93,
    "hare": 0.35,
    "lynx": 0.89,
    "marten": 0.04,
    "fox": 0.53,
    "wild_boar": 0.94,
    "cow": 0.25,
    "vehicle": 0.51,
}


def case_study_params() -> OccupancyParams:
    """Three-species parameters with high, positively associated occupancy.

    Species order is ``CASE_STUDY_SPECIES``; roe deer is the most prevalent.
    Marginals are lynx 0.61, roe deer 0.84, chamois 0.69.
    """
    # keyed by presence of (lynx, roe_deer, chamois)
    joint = {
        (0, 0, 0): 0.06,
        (1, 0, 0): 0.03,
        (0, 1, 0): 0.12,
        (1, 1, 0): 0.10,
        (0, 0, 1): 0.04,
        (1, 0, 1): 0.03,
        (0, 1, 1): 0.17,
        (1, 1, 1): 0.45,
    }
    psi = np.zeros(8)
    for bits, prob in joint.items():
        psi[sum(b << k for k, b in enumerate(bits))] = prob
    return OccupancyParams(psi, np.array(CASE_STUDY_P))


@dataclass(frozen=True)
class SimSpec:
    params: OccupancyParams
    n_sites: int
    n_occasions: int
    missing_rate: float = 0.0
    seed: int = DEFAULT_SEED
    species: tuple[str, ...] | None = None
    start_month: str = "2017-01"

    def __post_init__(self):
        if self.n_sites < 1 or self.n_occasions < 1:
            raise ValueError("n_sites and n_occasions must be >= 1")
        if not 0 <= self.missing_rate < 1:
            raise ValueError("missing_rate must be in [0, 1)")
        if self.species is not None and len(self.species) != self.params.S:
            raise ValueError("species names do not match params")

    @property
    def species_names(self) -> tuple[str, ...]:
        if self.species is not None:
            return tuple(self.species)
        return tuple(f"sp{k}" for k in range(self.params.S))


def _draw_state(rng: np.random.Generator, cum_psi: np.ndarray) -> int:
    return int(min(np.searchsorted(cum_psi, rng.random(), side="right"), cum_psi.size - 1))


def simulate_history(spec: SimSpec, return_states: bool = False):
    """Simulate latent states, detections and site-occasion missingness.

    Site ``i`` draws, from its own ``SITES`` sub-stream: one uniform for the
    latent state, an ``S x T`` block of uniforms for detections, then ``T``
    uniforms for missingness (drawn even when ``missing_rate`` is 0).
    With ``return_states`` the latent state index of every site is returned
    alongside the history.
    """
    params = spec.params
    S, I, T = params.S, spec.n_sites, spec.n_occasions
    cum_psi = np.cumsum(params.psi)
    cum_psi /= cum_psi[-1]
    bits = (np.arange(2**S)[:, None] >> np.arange(S)) & 1
    y = np.empty((S, I, T), dtype=np.int8)
    states = np.empty(I, dtype=np.int64)
    for i in range(I):
        rng = generator(spec.seed, Stream.SITES, i)
        states[i] = _draw_state(rng, cum_psi)
        z = bits[states[i]]
        y[:, i, :] = rng.random((S, T)) < (z * params.p)[:, None]
        y[:, i, rng.random(T) < spec.missing_rate] = MISSING
    width = len(str(I - 1))
    sites = tuple(f"site{i:0{width}d}" for i in range(I))
    first = _month_index(*map(int, spec.start_month.split("-")))
    occasions = tuple(_month_label(first + t) for t in range(T))
    h = DetectionHistory(spec.species_names, sites, occasions, y)
    return (h, states) if return_states else h


def simulate_counts(params: OccupancyParams, nocc: np.ndarray, seed: int) -> SiteCounts:
    """Simulate per-site detection counts directly, keeping each site's effort."""
    nocc = np.asarray(nocc, dtype=np.int32)
    S = params.S
    rng = generator(seed, Stream.SITES)
    cum_psi = np.cumsum(params.psi)
    cum_psi /= cum_psi[-1]
    states = np.minimum(np.searchsorted(cum_psi, rng.random(nocc.size), side="right"), 2**S - 1)
    z = (states[:, None] >> np.arange(S)) & 1
    det = rng.binomial(nocc[:, None], z * params.p[None, :])
    return SiteCounts(np.ascontiguousarray(det, dtype=np.int32), nocc, S)


def _month_bounds(month: int) -> tuple[datetime, int]:
    year, mon = month // 12, month % 12 + 1
    start = datetime(year, mon, 1, tzinfo=timezone.utc)
    return start, calendar.monthrange(year, mon)[1] * 86400


def simulate_records(
    h: DetectionHistory,
    seed: int = DEFAULT_SEED,
    images_per_detection: float = 3.0,
    background: Mapping[str, float] | None = None,
) -> tuple[list[ImageRecord], list[DeploymentWindow]]:
    """Expand a detection history into an image stream plus deployment windows.

    Each detection becomes ``1 + Poisson(images_per_detection - 1)`` images at
    uniform times within its month. ``background`` maps extra labels to the
    mean number of images per surveyed site-month (Poisson). Deployment
    windows are the runs of consecutive surveyed months of each site, so
    ``build_detection_history`` on the output recovers ``h``.
    """
    if images_per_detection < 1:
        raise ValueError("images_per_detection must be >= 1")
    background = dict(background or {})
    clash = set(background) & set(h.species)
    if clash:
        raise ValueError(f"background labels {sorted(clash)} are modeled species")
    first = _month_index(*map(int, h.occasions[0].split("-")))
    records: list[ImageRecord] = []
    windows: list[DeploymentWindow] = []
    S, I, T = h.shape
    for i, site in enumerate(h.sites):
        rng = generator(seed, Stream.IMAGES, i)
        active = h.y[0, i] != MISSING
        site_records = []
        for t in range(T):
            if not active[t]:
                continue
            start, span = _month_bounds(first + t)
            labels = []
            for k in range(S):
                if h.y[k, i, t] == 1:
                    labels += [h.species[k]] * (1 + int(rng.poisson(images_per_detection - 1)))
            for lab, rate in background.items():
                labels += [lab] * int(rng.poisson(rate))
            offsets = rng.integers(0, span, len(labels))
            for lab, off in zip(labels, offsets):
                site_records.append(ImageRecord(site, start + timedelta(seconds=int(off)), lab))
        site_records.sort(key=lambda r: (r.timestamp, r.label_true))
        records += site_records

        t = 0
        while t < T:
            if not active[t]:
                t += 1
                continue
            t0 = t
            while t + 1 < T and active[t + 1]:
                t += 1
            lo, _ = _month_bounds(first + t0)
            hi, span = _month_bounds(first + t)
            windows.append(
                DeploymentWindow(site, lo.date(), (hi + timedelta(seconds=span - 1)).date())
            )
            t += 1
    return records, windows


def corrupt_labels(
    records: Sequence[ImageRecord],
    probs: MisclassificationProbs,
    seed: int = DEFAULT_SEED,
    sites: set[str] | None = None,
) -> list[ImageRecord]:
    """Fill ``label_pred`` by sampling from each record's misclassification row.

    One uniform per record is drawn in record order from the ``CORRUPT``
    stream. Records at sites outside ``sites`` (when given) keep their true
    label as prediction but still consume their uniform.
    """
    records = list(records)
    missing = sorted(
        {r.label_true for r in records if (sites is None or r.site_id in sites)}
        - set(probs.true_labels)
    )
    if missing:
        raise SurveyDataError(f"no misclassification row for labels {missing}")
    cum = np.cumsum(probs.probs, axis=1)
    cum /= cum[:, -1:]
    row_of = {lab: k for k, lab in enumerate(probs.true_labels)}
    u = generator(seed, Stream.CORRUPT).random(len(records))
    out = []
    for rec, ui in zip(records, u):
        if sites is not None and rec.site_id not in sites:
            pred = rec.label_true
        else:
            c = cum[row_of[rec.label_true]]
            pred = probs.pred_labels[int(np.searchsorted(c, ui, side="right"))]
        out.append(dataclasses.replace(rec, label_pred=pred))
    return out


def _normalize_label(label: str) -> str:
    return label.strip().lower().replace(" ", "_")


def transfer_probs(
    labels: Sequence[str] = (),
    recall: Mapping[str, float] | None = None,
    include_table: bool = True,
) -> MisclassificationProbs:
    """Misclassification matrix with the given per-class recall on the diagonal.

    Each class keeps its recall as self-probability and spreads the rest
    evenly over every other label. The label set is ``labels`` followed by
    the remaining classes of the recall table (the classifier can predict
    any of its classes whether or not they occur in the data). Defaults to
    ``TRANSFER_RECALL``; labels absent from the table are kept perfectly.
    """
    table = dict(recall or TRANSFER_RECALL)
    norm = {_normalize_label(k): v for k, v in table.items()}
    labels = list(labels)
    if include_table:
        known = {_normalize_label(x) for x in labels}
        labels += [k for k in table if _normalize_label(k) not in known]
    if not labels:
        raise ValueError("no labels")
    K = len(labels)
    probs = np.zeros((K, K))
    for a, lab in enumerate(labels):
        r = norm.get(_normalize_label(lab), 1.0) if K > 1 else 1.0
        if K > 1:
            probs[a] = (1.0 - r) / (K - 1)
        probs[a, a] = r
    return MisclassificationProbs(tuple(labels), tuple(labels), probs)


def default_quantities(S: int, target: int = 0) -> list[Marginal | Conditional]:
    """All marginals, plus ``target`` conditioned on each other species being
    present/absent and (with three or more species) on all others jointly."""
    out: list[Marginal | Conditional] = [Marginal(s) for s in range(S)]
    others = tuple(s for s in range(S) if s != target)
    for g in others:
        for state in (True, False):
            out.append(Conditional(target, (g,), (state,)))
    if len(others) > 1:
        for state in (True, False):
            out.append(Conditional(target, others, (state,) * len(others)))
    return out


# -- truth vs classified experiment ---------------------------------------------


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    species: tuple[str, ...]
    fit_truth: FitResult
    fit_classified: FitResult
    history_truth: DetectionHistory = field(repr=False)
    history_classified: DetectionHistory = field(repr=False)
    deltas: dict[str, float] = field(default_factory=dict)
    metrics: MetricsReport | None = None

    @property
    def max_marginal_delta(self) -> float:
        return max(v for k, v in self.deltas.items() if k.startswith("marginal("))


def _point_estimates(result: FitResult, target: int = 0) -> dict[str, float]:
    names = result.species
    out = {}
    for q in default_quantities(result.S, target):
        try:
            out[q.label(names)] = q.value(result.params_hat)
        except ZeroDivisionError:
            out[q.label(names)] = float("nan")
    for s, name in enumerate(names):
        out[f"p({name})"] = float(result.params_hat.p[s])
    return out


def run_experiment(
    records: Sequence[ImageRecord],
    species_filter: Sequence[str],
    probs: MisclassificationProbs,
    deployments: Sequence[DeploymentWindow] | None = None,
    opts: FitOptions | None = None,
    seed: int = DEFAULT_SEED,
    corrupt_sites: set[str] | None = None,
    target: int = 0,
) -> ExperimentReport:
    """Fit the same survey twice: with true labels and with classifier labels.

    Labels are corrupted record by record before aggregation, at every site
    or only at ``corrupt_sites``. Both fits use the same options and seed.
    """
    opts = opts or FitOptions(seed=seed)
    classified = corrupt_labels(records, probs, seed, corrupt_sites)
    h_truth = build_detection_history(classified, species_filter, deployments, "true")
    h_class = build_detection_history(classified, species_filter, deployments, "predicted")
    fit_truth = fit(h_truth, opts)
    fit_class = fit_truth if h_class == h_truth else fit(h_class, opts)

    est_t = _point_estimates(fit_truth, target)
    est_c = _point_estimates(fit_class, target)
    deltas = {k: abs(est_t[k] - est_c[k]) for k in est_t}

    scored = [r for r in classified if corrupt_sites is None or r.site_id in corrupt_sites]
    metrics = precision_recall(confusion_matrix(scored)) if scored else None
    return ExperimentReport(
        tuple(species_filter), fit_truth, fit_class, h_truth, h_class, deltas, metrics
    )


CASE_STUDY_BACKGROUND = {"human": 2.0, "fox": 1.0, "dog": 1.0}


def case_study_experiment(
    seed: int = DEFAULT_SEED,
    opts: FitOptions | None = None,
    n_reference: int = 18,
    n_classified: int = 11,
    n_occasions: int = 9,
    images_per_detection: float = 3.0,
    background: Mapping[str, float] | None = None,
) -> ExperimentReport:
    """Truth-vs-classified experiment at the scale of the original survey.

    ``n_reference`` sites keep manual labels and ``n_classified`` sites are
    labelled by a classifier with the transfer-site recall table; occasions
    are the months March to November.
    """
    params = case_study_params()
    n_sites = n_reference + n_classified
    spec = SimSpec(params, n_sites, n_occasions, 0.0, seed, CASE_STUDY_SPECIES, "2017-03")
    h = simulate_history(spec)
    bg = CASE_STUDY_BACKGROUND if background is None else background
    records, windows = simulate_records(h, seed, images_per_detection, bg)
    labels = sorted({r.label_true for r in records} | set(CASE_STUDY_SPECIES))
    return run_experiment(
        records,
        CASE_STUDY_SPECIES,
        transfer_probs(labels),
        windows,
        opts or FitOptions(seed=seed),
        seed,
        corrupt_sites=set(h.sites[n_reference:]),
    )


# -- resampling studies -----------------------------------------------------------


def bootstrap(
    result: FitResult,
    counts: SiteCounts,
    quantities: Sequence[Marginal | Conditional],
    n_boot: int = 200,
    seed: int = DEFAULT_SEED,
    opts: FitOptions | None = None,
) -> np.ndarray:
    """Parametric bootstrap of derived quantities.

    Replicate ``b`` simulates counts from ``result.params_hat`` with the
    observed per-site effort, refits, and evaluates ``quantities``.
    Replicates that fail to converge are returned as rows of NaN.
    """
    opts = opts or FitOptions(n_starts=1)
    fit_opts = dataclasses.replace(opts, threads=1)

    def one(b: int) -> np.ndarray:
        sim = simulate_counts(result.params_hat, counts.nocc, child_seed(seed, Stream.BOOTSTRAP, b))
        try:
            r = fit(sim, fit_opts, result.species)
        except ConvergenceError:
            return np.full(len(quantities), np.nan)
        return np.array([q.value(r.params_hat) for q in quantities])

    return np.array(_map(one, range(n_boot), opts.threads))


@dataclass(frozen=True, eq=False)
class RecoveryStudy:
    truth: dict[str, float]
    estimates: np.ndarray = field(repr=False)   # (n_reps, n_quantities)
    covered: np.ndarray = field(repr=False)     # bool, same shape
    names: tuple[str, ...] = ()
    n_failed: int = 0

    @property
    def coverage(self) -> dict[str, float]:
        return {n: float(np.nanmean(self.covered[:, k])) for k, n in enumerate(self.names)}

    @property
    def bias(self) -> dict[str, float]:
        return {
            n: float(np.nanmean(self.estimates[:, k]) - self.truth[n])
            for k, n in enumerate(self.names)
        }


def recovery_study(
    params: OccupancyParams,
    n_sites: int,
    n_occasions: int,
    n_reps: int,
    seed: int = DEFAULT_SEED,
    opts: FitOptions | None = None,
    level: float = 0.95,
    species: Sequence[str] | None = None,
) -> RecoveryStudy:
    """Simulate-and-refit replicates recording estimates and interval coverage.

    Tracked quantities are each ``p_s`` (Wald interval) and each marginal
    occupancy (delta-method interval).
    """
    opts = opts or FitOptions(n_starts=1)
    fit_opts = dataclasses.replace(opts, threads=1)
    S = params.S
    names = tuple(species) if species else tuple(f"sp{k}" for k in range(S))
    qnames = tuple(f"p({n})" for n in names) + tuple(f"marginal({n})" for n in names)
    truth = {f"p({n})": float(params.p[k]) for k, n in enumerate(names)}
    truth |= {f"marginal({n})": model.marginal_occupancy(params, k) for k, n in enumerate(names)}
    k0 = 2**S - 1

    def one(r: int):
        spec = SimSpec(params, n_sites, n_occasions, 0.0, child_seed(seed, Stream.REPLICATES, r), names)
        h = simulate_history(spec)
        try:
            res = fit(h, fit_opts)
        except ConvergenceError:
            return None
        if res.vcov is None:
            return None
        ivs = [wald_interval(res, k0 + s, level) for s in range(S)]
        ivs += [derived_interval(res, Marginal(s), level) for s in range(S)]
        est = np.array([iv.point for iv in ivs])
        cov = np.array([iv.lower <= truth[n] <= iv.upper for iv, n in zip(ivs, qnames)])
        return est, cov

    outs = _map(one, range(n_reps), opts.threads)
    good = [o for o in outs if o is not None]
    est = np.array([o[0] for o in good]).reshape(-1, len(qnames))
    cov = np.array([o[1] for o in good]).reshape(-1, len(qnames))
    return RecoveryStudy(truth, est, cov, qnames, n_reps - len(good))


def _map(fn, items, threads: int):
    items = list(items)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]
