"""Synthetic cohort generator.

Draws per-subject ROI time series from multivariate normals whose correlation
structure carries a class-specific block: ASD subjects get extra correlation
of strength delta among the first block of ROIs, TC subjects among the second
block. delta=0 makes the classes identically distributed (chance-level
cohort); larger delta separates the classes through the block means of their
FC features. Exists to exercise the full pipeline at desk scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ATLAS_ORDER, AtlasSpec, RoiTimeSeries, Subject, connectome_from_timeseries
from .errors import InvalidConfigError
from .manifest import SubjectRecord, write_manifest, write_timeseries
from .rng import stream


@dataclass(frozen=True)
class SynthConfig:
    n_asd: int
    n_tc: int
    atlases: tuple[AtlasSpec, ...]
    t_len: int
    delta: float
    seed: int

    def __post_init__(self):
        if self.n_asd < 1:
            raise InvalidConfigError("n_asd", f"must be >= 1, got {self.n_asd}")
        if self.n_tc < 1:
            raise InvalidConfigError("n_tc", f"must be >= 1, got {self.n_tc}")
        if self.t_len < 2:
            raise InvalidConfigError("t_len", f"must be >= 2, got {self.t_len}")
        if not 0.0 <= self.delta < 1.0:
            raise InvalidConfigError("delta", f"must be in [0, 1), got {self.delta}")
        names = tuple(a.name for a in self.atlases)
        if names != ATLAS_ORDER:
            raise InvalidConfigError("atlases", f"names must be {ATLAS_ORDER} in order, got {names}")
        for a in self.atlases:
            if a.k < 4:
                raise InvalidConfigError("atlases", f"{a.name}: k must be >= 4, got {a.k}")

    @staticmethod
    def from_json(path: str | Path) -> "SynthConfig":
        with open(path) as fh:
            raw = json.load(fh)
        try:
            atlases = tuple(AtlasSpec(a["name"], int(a["k"])) for a in raw["atlases"])
            return SynthConfig(
                n_asd=int(raw["n_asd"]),
                n_tc=int(raw["n_tc"]),
                atlases=atlases,
                t_len=int(raw["t_len"]),
                delta=float(raw["delta"]),
                seed=int(raw["seed"]),
            )
        except KeyError as exc:
            raise InvalidConfigError(str(exc.args[0]), "missing") from None


@dataclass(frozen=True)
class SyntheticSubject:
    subject_id: str
    label: str
    timeseries: tuple[RoiTimeSeries, ...]


def class_block(atlas_k: int, class_index: int) -> np.ndarray:
    """ROI indices of the block that carries this class's signal."""
    m = max(2, atlas_k // 4)
    start = class_index * m
    return np.arange(start, start + m)


def _class_correlation(k: int, delta: float, class_index: int) -> np.ndarray:
    r = np.eye(k)
    if delta > 0.0:
        block = class_block(k, class_index)
        ix = np.ix_(block, block)
        r[ix] = delta
        r[block, block] = 1.0
    return r


def generate_synthetic(cfg: SynthConfig, rng_seed: int | None = None) -> list[SyntheticSubject]:
    """Draw the cohort. Per-subject RNG streams are derived from the config
    seed and the subject index, so output is schedule-independent."""
    base_seed = cfg.seed if rng_seed is None else rng_seed
    chols = {}
    for atlas in cfg.atlases:
        for ci in (0, 1):
            r = _class_correlation(atlas.k, cfg.delta, ci)
            chols[(atlas.name, ci)] = np.linalg.cholesky(r)
    subjects = []
    labels = ["ASD"] * cfg.n_asd + ["TC"] * cfg.n_tc
    width = len(str(len(labels)))
    for idx, label in enumerate(labels):
        subject_id = f"sub{idx:0{width}d}"
        class_index = 0 if label == "ASD" else 1
        ts = []
        for atlas in cfg.atlases:
            g = stream(base_seed, "subject", idx, atlas.name)
            z = g.standard_normal((cfg.t_len, atlas.k))
            values = z @ chols[(atlas.name, class_index)].T
            ts.append(RoiTimeSeries(subject_id, atlas, values))
        subjects.append(SyntheticSubject(subject_id, label, tuple(ts)))
    return subjects


def to_subjects(cohort: list[SyntheticSubject]) -> list[Subject]:
    """Run the FC pipeline in memory to get labelled connectome subjects."""
    return [
        Subject(s.subject_id, s.label,
                tuple(connectome_from_timeseries(ts) for ts in s.timeseries))
        for s in cohort
    ]


def write_cohort(cohort: list[SyntheticSubject], out_dir: str | Path) -> Path:
    """Write per-subject time-series CSVs plus the manifest; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ts_dir = out_dir / "timeseries"
    ts_dir.mkdir(exist_ok=True)
    records = []
    for s in cohort:
        paths = {}
        for ts in s.timeseries:
            rel = f"timeseries/{s.subject_id}.{ts.atlas.name}.csv"
            write_timeseries(ts, out_dir / rel)
            paths[ts.atlas.name] = rel
        records.append(SubjectRecord(s.subject_id, s.label, {a: paths[a] for a in ATLAS_ORDER}))
    manifest_path = out_dir / "manifest.csv"
    write_manifest(records, manifest_path)
    return manifest_path
