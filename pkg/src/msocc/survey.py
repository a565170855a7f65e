"""Survey records, deployment windows and monthly detection histories.

A detection history is an ``S x I x T`` array (species, sites, monthly
occasions) holding 1 for a detection, 0 for a non-detection and
``MISSING`` (-1) when the site was not active during that month.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import Iterable, Literal, Sequence

import numpy as np

MISSING = -1

__all__ = [
    "MISSING",
    "SurveyDataError",
    "ImageRecord",
    "DeploymentWindow",
    "DetectionHistory",
    "SpeciesSummary",
    "build_detection_history",
    "history_summary",
    "read_images_csv",
    "write_images_csv",
    "read_deployments_csv",
    "write_deployments_csv",
    "parse_timestamp",
]


class SurveyDataError(ValueError):
    """Raised for malformed or inconsistent survey input."""


def parse_timestamp(value: str | datetime) -> datetime:
    """Parse an ISO-8601 timestamp into an aware UTC datetime (second precision).

    Naive timestamps are taken to be UTC already.
    """
    if isinstance(value, datetime):
        ts = value
    else:
        text = str(value).strip()
        if not text:
            raise ValueError("empty timestamp")
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    else:
        ts = ts.astimezone(timezone.utc)
    return ts.replace(microsecond=0)


def _check_label(label: str, what: str) -> str:
    if not isinstance(label, str) or not label:
        raise SurveyDataError(f"{what} must be a non-empty string, got {label!r}")
    if any(c in label for c in ",\n\r\t"):
        raise SurveyDataError(f"{what} {label!r} contains a separator character")
    return label


@dataclass(frozen=True)
class ImageRecord:
    """One labelled camera-trap image event."""

    site_id: str
    timestamp: datetime
    label_true: str
    label_pred: str | None = None

    def __post_init__(self):
        if not self.site_id:
            raise SurveyDataError("site_id must be non-empty")
        object.__setattr__(self, "timestamp", parse_timestamp(self.timestamp))
        _check_label(self.label_true, "label_true")
        if self.label_pred is not None:
            _check_label(self.label_pred, "label_pred")

    @property
    def month(self) -> int:
        return _month_index(self.timestamp.year, self.timestamp.month)


@dataclass(frozen=True)
class DeploymentWindow:
    site_id: str
    start: date
    end: date

    def __post_init__(self):
        if not self.site_id:
            raise SurveyDataError("site_id must be non-empty")
        for name in ("start", "end"):
            value = getattr(self, name)
            if isinstance(value, str):
                object.__setattr__(self, name, date.fromisoformat(value.strip()))
            elif isinstance(value, datetime):
                object.__setattr__(self, name, value.date())
        if self.start > self.end:
            raise SurveyDataError(
                f"deployment at {self.site_id}: start {self.start} after end {self.end}"
            )


def _month_index(year: int, month: int) -> int:
    return year * 12 + (month - 1)


def _month_label(index: int) -> str:
    return f"{index // 12:04d}-{index % 12 + 1:02d}"


def _parse_month_label(label: str) -> int:
    year, month = label.split("-")
    return _month_index(int(year), int(month))


@dataclass(frozen=True, eq=False)
class DetectionHistory:
    """Species x site x occasion detection array.

    Attributes
    ----------
    species : tuple of str
        Ordered species registry (length S).
    sites : tuple of str
        Ordered site registry (length I).
    occasions : tuple of str
        Calendar months as ``YYYY-MM`` labels, strictly increasing (length T).
    y : ndarray of int8, shape (S, I, T)
        1 detected, 0 not detected, ``MISSING`` inactive.
    """

    species: tuple[str, ...]
    sites: tuple[str, ...]
    occasions: tuple[str, ...]
    y: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "sites", tuple(self.sites))
        object.__setattr__(self, "occasions", tuple(self.occasions))
        y = np.array(self.y, dtype=np.int8)
        S, I, T = len(self.species), len(self.sites), len(self.occasions)
        if min(S, I, T) < 1:
            raise SurveyDataError("detection history needs S, I, T >= 1")
        if y.shape != (S, I, T):
            raise SurveyDataError(f"y has shape {y.shape}, expected {(S, I, T)}")
        if not np.isin(y, (0, 1, MISSING)).all():
            raise SurveyDataError("y cells must be 0, 1 or MISSING")
        miss = y == MISSING
        if not (miss.all(axis=0) | ~miss.any(axis=0)).all():
            raise SurveyDataError("MISSING must be uniform across species for each site-occasion")
        for registry, what in ((self.species, "species"), (self.sites, "sites")):
            if len(set(registry)) != len(registry):
                raise SurveyDataError(f"duplicate entries in {what} registry")
        months = [_parse_month_label(o) for o in self.occasions]
        if any(b <= a for a, b in zip(months, months[1:])):
            raise SurveyDataError("occasions must be strictly increasing")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.y.shape

    @property
    def active(self) -> np.ndarray:
        """Boolean (I, T) mask of surveyed site-occasions."""
        return self.y[0] != MISSING

    def __eq__(self, other):
        if not isinstance(other, DetectionHistory):
            return NotImplemented
        return (
            self.species == other.species
            and self.sites == other.sites
            and self.occasions == other.occasions
            and np.array_equal(self.y, other.y)
        )

    def subset_species(self, species: Sequence[str]) -> DetectionHistory:
        idx = [self.species.index(s) for s in species]
        return DetectionHistory(tuple(species), self.sites, self.occasions, self.y[idx])

    def to_dict(self) -> dict:
        y = [
            [[None if v == MISSING else int(v) for v in row] for row in plane]
            for plane in self.y.tolist()
        ]
        return {
            "species": list(self.species),
            "sites": list(self.sites),
            "occasions": list(self.occasions),
            "y": y,
        }

    @classmethod
    def from_dict(cls, data: dict) -> DetectionHistory:
        try:
            raw = data["y"]
            y = np.array(
                [[[MISSING if v is None else v for v in row] for row in plane] for plane in raw],
                dtype=np.int8,
            )
            return cls(data["species"], data["sites"], data["occasions"], y)
        except (KeyError, TypeError) as exc:
            raise SurveyDataError(f"malformed history JSON: {exc}") from None

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> DetectionHistory:
        return cls.from_dict(json.loads(text))


def _active_months(
    records: Sequence[ImageRecord], deployments: Sequence[DeploymentWindow] | None
) -> dict[str, set[int]]:
    by_site: dict[str, list[int]] = {}
    for rec in records:
        by_site.setdefault(rec.site_id, []).append(rec.month)

    active: dict[str, set[int]] = {}
    if deployments:
        for win in deployments:
            lo = _month_index(win.start.year, win.start.month)
            hi = _month_index(win.end.year, win.end.month)
            active.setdefault(win.site_id, set()).update(range(lo, hi + 1))
        undeployed = sorted(set(by_site) - set(active))
        if undeployed:
            warnings.warn(
                f"no deployment window for sites {undeployed}; inferring from record span",
                stacklevel=3,
            )
    else:
        undeployed = sorted(by_site)
    for site in undeployed:
        months = by_site[site]
        active[site] = set(range(min(months), max(months) + 1))
    return active


def build_detection_history(
    records: Iterable[ImageRecord],
    species_filter: Sequence[str],
    deployments: Sequence[DeploymentWindow] | None = None,
    label_source: Literal["true", "predicted"] = "true",
) -> DetectionHistory:
    """Aggregate image records into a monthly detection history.

    Parameters
    ----------
    records : iterable of ImageRecord
        Every labelled image, any species. Records of species outside
        ``species_filter`` still mark their site as surveyed.
    species_filter : sequence of str
        Species to model, in registry order.
    deployments : sequence of DeploymentWindow, optional
        Camera activity per site. A month is active for a site when it
        intersects one of its windows. Without deployments the active span
        of each site runs from its first to its last record month.
    label_source : {"true", "predicted"}
        Which label decides the species of each record.

    Returns
    -------
    DetectionHistory
        Occasions cover every calendar month from the earliest to the latest
        active month over all sites; sites are sorted.
    """
    records = list(records)
    if not records:
        raise SurveyDataError("no records")
    if not species_filter:
        raise SurveyDataError("species_filter must be non-empty")
    species = tuple(_check_label(s, "species") for s in species_filter)
    if len(set(species)) != len(species):
        raise SurveyDataError("duplicate species in filter")
    if label_source not in ("true", "predicted"):
        raise SurveyDataError(f"unknown label_source {label_source!r}")
    if label_source == "predicted":
        for row, rec in enumerate(records):
            if rec.label_pred is None:
                raise SurveyDataError(f"record {row} has no predicted label")

    active = _active_months(records, deployments)
    sites = tuple(sorted(active))
    all_months = set().union(*active.values())
    if not all_months:
        raise SurveyDataError("no active site-months")
    first, last = min(all_months), max(all_months)
    occasions = tuple(_month_label(m) for m in range(first, last + 1))

    S, I, T = len(species), len(sites), last - first + 1
    y = np.full((S, I, T), MISSING, dtype=np.int8)
    site_pos = {s: i for i, s in enumerate(sites)}
    sp_pos = {s: k for k, s in enumerate(species)}
    for site, months in active.items():
        cols = np.fromiter((m - first for m in months), dtype=np.intp)
        y[:, site_pos[site], cols] = 0

    seen = set()
    outside = 0
    for rec in records:
        label = rec.label_true if label_source == "true" else rec.label_pred
        seen.add(label)
        k = sp_pos.get(label)
        if k is None:
            continue
        i, t = site_pos[rec.site_id], rec.month - first
        if not 0 <= t < T or y[k, i, t] == MISSING:
            outside += 1
            continue
        y[k, i, t] = 1

    unknown = [s for s in species if s not in seen]
    if unknown:
        warnings.warn(f"species {unknown} never appear in the records", stacklevel=2)
    if outside:
        warnings.warn(
            f"{outside} records fall outside their site's deployment windows and were ignored",
            stacklevel=2,
        )
    return DetectionHistory(species, sites, occasions, y)


@dataclass(frozen=True)
class SpeciesSummary:
    species: str
    detections: int
    active_cells: int
    sites_detected: int
    sites_surveyed: int
    naive_occupancy: float


def history_summary(h: DetectionHistory) -> list[SpeciesSummary]:
    """Naive per-species detection counts and site coverage."""
    active = h.active
    surveyed = int(active.any(axis=1).sum())
    out = []
    for k, name in enumerate(h.species):
        det = h.y[k] == 1
        sites_det = int(det.any(axis=1).sum())
        out.append(
            SpeciesSummary(
                species=name,
                detections=int(det.sum()),
                active_cells=int(active.sum()),
                sites_detected=sites_det,
                sites_surveyed=surveyed,
                naive_occupancy=sites_det / surveyed if surveyed else 0.0,
            )
        )
    return out


# -- CSV I/O ---------------------------------------------------------------

IMAGE_FIELDS = ("site_id", "timestamp", "label_true", "label_pred")
DEPLOYMENT_FIELDS = ("site_id", "start", "end")


def _read_rows(path, fields: Sequence[str]):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [f for f in fields if f not in (reader.fieldnames or ())]
        if missing:
            raise SurveyDataError(f"{path}: missing columns {missing}")
        # row numbers count the header as line 1
        yield from enumerate(reader, start=2)


def read_images_csv(path) -> list[ImageRecord]:
    records = []
    for line, row in _read_rows(path, IMAGE_FIELDS[:3]):
        try:
            ts = parse_timestamp(row["timestamp"])
        except (ValueError, TypeError) as exc:
            raise SurveyDataError(
                f"{path}: line {line}: malformed timestamp {row['timestamp']!r} ({exc})"
            ) from None
        pred = (row.get("label_pred") or "").strip() or None
        try:
            records.append(
                ImageRecord(row["site_id"].strip(), ts, row["label_true"].strip(), pred)
            )
        except SurveyDataError as exc:
            raise SurveyDataError(f"{path}: line {line}: {exc}") from None
    return records


def write_images_csv(path, records: Iterable[ImageRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(IMAGE_FIELDS)
        for rec in records:
            writer.writerow(
                [
                    rec.site_id,
                    rec.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
                    rec.label_true,
                    rec.label_pred or "",
                ]
            )


def read_deployments_csv(path) -> list[DeploymentWindow]:
    windows = []
    for line, row in _read_rows(path, DEPLOYMENT_FIELDS):
        try:
            windows.append(DeploymentWindow(row["site_id"].strip(), row["start"], row["end"]))
        except ValueError as exc:
            raise SurveyDataError(f"{path}: line {line}: {exc}") from None
    return windows


def write_deployments_csv(path, windows: Iterable[DeploymentWindow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DEPLOYMENT_FIELDS)
        for w in windows:
            writer.writerow([w.site_id, w.start.isoformat(), w.end.isoformat()])
