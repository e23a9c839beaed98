"""Cohort manifest and on-disk data formats.

Manifest: CSV with header `subject_id,label,aal_path,cc200_path,dos160_path`.
Time series files: headerless CSV, T rows x k columns.
Connectome cache: one CSV row of feature_len floats, named
`<subject_id>.<atlas>.fc.csv`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    ATLAS_ORDER,
    AtlasSpec,
    Connectome,
    RoiTimeSeries,
    Subject,
    connectome_from_timeseries,
)
from .errors import (
    DuplicateSubjectError,
    ManifestParseError,
    MissingAtlasPathError,
    NonFiniteError,
)

MANIFEST_HEADER = ("subject_id", "label", "aal_path", "cc200_path", "dos160_path")
_PATH_COLUMNS = dict(zip(ATLAS_ORDER, MANIFEST_HEADER[2:]))


@dataclass(frozen=True)
class SubjectRecord:
    """One manifest row: label plus a time-series path per atlas."""

    subject_id: str
    label: str
    paths: dict[str, str]  # atlas name -> path, in canonical order


def load_manifest(path: str | Path) -> list[SubjectRecord]:
    """Parse and validate a cohort manifest."""
    path = Path(path)
    records: list[SubjectRecord] = []
    seen: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestParseError(1, "empty file") from None
        if tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ManifestParseError(1, f"expected header {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestParseError(lineno, f"expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            subject_id, label = row[0].strip(), row[1].strip()
            if not subject_id:
                raise ManifestParseError(lineno, "empty subject_id")
            if label not in ("ASD", "TC"):
                raise ManifestParseError(lineno, f"label must be ASD or TC, got {label!r}")
            if subject_id in seen:
                raise DuplicateSubjectError(subject_id)
            seen.add(subject_id)
            paths = {}
            for atlas_name, cell in zip(ATLAS_ORDER, row[2:]):
                cell = cell.strip()
                if not cell:
                    raise MissingAtlasPathError(subject_id, atlas_name)
                paths[atlas_name] = cell
            records.append(SubjectRecord(subject_id, label, paths))
    return records


def write_manifest(records: list[SubjectRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in records:
            writer.writerow([r.subject_id, r.label] + [r.paths[a] for a in ATLAS_ORDER])


def read_timeseries(path: str | Path, subject_id: str, atlas: AtlasSpec) -> RoiTimeSeries:
    values = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return RoiTimeSeries(subject_id, atlas, values)


def write_timeseries(ts: RoiTimeSeries, path: str | Path) -> None:
    np.savetxt(path, ts.values, delimiter=",", fmt="%.17g")


def cache_filename(subject_id: str, atlas: AtlasSpec) -> str:
    return f"{subject_id}.{atlas.name}.fc.csv"


def write_connectome_cache(c: Connectome, directory: str | Path) -> Path:
    path = Path(directory) / cache_filename(c.subject_id, c.atlas)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(repr(float(v)) for v in c.features) + "\n")
    return path


def read_connectome_cache(path: str | Path, subject_id: str, atlas: AtlasSpec) -> Connectome:
    features = np.loadtxt(path, delimiter=",", dtype=np.float64)
    if not np.isfinite(features).all():
        raise NonFiniteError(f"cache {path} contains NaN/Inf")
    return Connectome(subject_id, atlas, features)


def infer_atlases(records: list[SubjectRecord], base_dir: str | Path) -> tuple[AtlasSpec, ...]:
    """Derive per-atlas ROI counts from the first subject's time-series files."""
    first = records[0]
    specs = []
    for name in ATLAS_ORDER:
        path = Path(base_dir) / first.paths[name]
        values = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        specs.append(AtlasSpec(name, values.shape[1]))
    return tuple(specs)


def load_subjects(manifest_path: str | Path,
                  atlases: tuple[AtlasSpec, ...] | None = None,
                  cache_dir: str | Path | None = None) -> list[Subject]:
    """Materialize subjects with raw (unstandardized) connectomes.

    Time-series paths are resolved relative to the manifest's directory.
    When cache_dir is given, per-connectome cache files are used if present
    and written after computation otherwise.
    """
    manifest_path = Path(manifest_path)
    base_dir = manifest_path.parent
    records = load_manifest(manifest_path)
    if not records:
        return []
    if atlases is None:
        atlases = infer_atlases(records, base_dir)
    subjects = []
    for rec in records:
        connectomes = []
        for atlas in atlases:
            cache_path = Path(cache_dir) / cache_filename(rec.subject_id, atlas) if cache_dir else None
            if cache_path is not None and cache_path.exists():
                c = read_connectome_cache(cache_path, rec.subject_id, atlas)
            else:
                ts = read_timeseries(base_dir / rec.paths[atlas.name], rec.subject_id, atlas)
                c = connectome_from_timeseries(ts)
                if cache_path is not None:
                    write_connectome_cache(c, cache_path.parent)
            connectomes.append(c)
        subjects.append(Subject(rec.subject_id, rec.label, tuple(connectomes)))
    return subjects
