"""Connectome feature construction.

ROI time series -> Pearson correlation matrix -> flattened strict lower
triangle -> per-feature standardization. Also the corruption operators used
during training: Gaussian noise augmentation and binary masking for the
imputation task.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    AlreadyStandardizedError,
    AtlasMismatchError,
    ConstantRoiError,
    EmptyInputError,
    LengthMismatchError,
    MixedAtlasError,
    NonFiniteError,
    NotSquareError,
    NotSymmetricError,
    ShapeMismatchError,
)

SYMMETRY_TOL = 1e-9
DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class AtlasSpec:
    """A brain parcellation: name and ROI count k. Feature vectors built
    from its correlation matrices have length k(k-1)/2."""

    name: str
    k: int

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"atlas {self.name!r}: k must be >= 2, got {self.k}")

    @property
    def feature_len(self) -> int:
        return self.k * (self.k - 1) // 2


AAL = AtlasSpec("AAL", 116)
CC200 = AtlasSpec("CC200", 200)
DOS160 = AtlasSpec("DOS160", 160)

#: Canonical atlas order used by the ensemble and by manifest columns.
BUILTIN_ATLASES = (AAL, CC200, DOS160)
ATLAS_ORDER = tuple(a.name for a in BUILTIN_ATLASES)

LABELS = ("TC", "ASD")  # class index 0, 1; ASD is the positive class


@dataclass(frozen=True)
class RoiTimeSeries:
    """ROI-averaged signal for one subject: T time points x k regions."""

    subject_id: str
    atlas: AtlasSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise ShapeMismatchError(f"time series must be 2-D, got shape {v.shape}")
        if v.shape[0] < 2:
            raise ShapeMismatchError("need at least 2 time points")
        if v.shape[1] != self.atlas.k:
            raise ShapeMismatchError(
                f"atlas {self.atlas.name} expects {self.atlas.k} columns, got {v.shape[1]}"
            )
        if not np.isfinite(v).all():
            raise NonFiniteError("time series contains NaN/Inf")


@dataclass(frozen=True)
class Connectome:
    """Flattened lower-triangular FC features for one subject/atlas pair.

    Unstandardized features produced by the pipeline are Pearson coefficients
    and lie in [-1, 1]; pearson_fc guarantees that range.
    """

    subject_id: str
    atlas: AtlasSpec
    features: np.ndarray
    standardized: bool = False

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", f)
        if f.ndim != 1 or f.shape[0] != self.atlas.feature_len:
            raise ShapeMismatchError(
                f"atlas {self.atlas.name} expects {self.atlas.feature_len} features, "
                f"got shape {f.shape}"
            )
        if not np.isfinite(f).all():
            raise NonFiniteError("connectome contains NaN/Inf")


@dataclass(frozen=True)
class Subject:
    """One subject: class label plus connectomes in canonical atlas order."""

    subject_id: str
    label: str
    connectomes: tuple[Connectome, ...]

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        names = [c.atlas.name for c in self.connectomes]
        if len(set(names)) != len(names):
            raise ValueError(f"atlases must be pairwise distinct, got {names}")
        for c in self.connectomes:
            if c.subject_id != self.subject_id:
                raise ValueError("all connectomes must share the subject_id")

    @property
    def y(self) -> int:
        return LABELS.index(self.label)


@dataclass(frozen=True)
class NoiseMask:
    """Binary keep-mask: 0 marks a feature set to zero and to be imputed."""

    atlas_index: int
    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask)
        if not np.isin(m, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        object.__setattr__(self, "mask", m.astype(np.float64))

    @property
    def n_masked(self) -> int:
        return int((self.mask == 0).sum())


@dataclass
class StandardizerState:
    """Per-feature mean/std fitted on one split; degenerate stds replaced by 1
    so those features pass through centered."""

    mean: np.ndarray
    std: np.ndarray
    atlas: AtlasSpec
    fitted_on: str = ""
    degenerate: np.ndarray = field(default=None, repr=False)


def pearson_fc(ts: RoiTimeSeries) -> np.ndarray:
    """Pearson correlation between every pair of ROI time series.

    Returns a symmetric k x k matrix with unit diagonal, entries in [-1, 1].
    Raises ConstantRoiError on any zero-variance column rather than emitting NaN.
    """
    x = ts.values
    xc = x - x.mean(axis=0)
    norms = np.sqrt((xc * xc).sum(axis=0))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ConstantRoiError(int(zero[0]))
    c = (xc.T @ xc) / np.outer(norms, norms)
    c = (c + c.T) / 2.0
    np.clip(c, -1.0, 1.0, out=c)
    np.fill_diagonal(c, 1.0)
    return c


def vectorize_lower(m: np.ndarray) -> np.ndarray:
    """Flatten the strict lower triangle of a symmetric matrix, row-major.

    Entry order is m[1,0], m[2,0], m[2,1], m[3,0], ... giving k(k-1)/2 values.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSquareError(f"expected square matrix, got shape {m.shape}")
    if np.abs(m - m.T).max() > SYMMETRY_TOL:
        raise NotSymmetricError(f"asymmetry exceeds {SYMMETRY_TOL}")
    rows, cols = np.tril_indices(m.shape[0], k=-1)
    return m[rows, cols].copy()


def connectome_from_timeseries(ts: RoiTimeSeries) -> Connectome:
    """Full feature pipeline for one subject/atlas: correlate and flatten."""
    return Connectome(ts.subject_id, ts.atlas, vectorize_lower(pearson_fc(ts)))


def standardize_fit(connectomes: list[Connectome], fitted_on: str = "") -> StandardizerState:
    """Per-feature mean/std (population convention) over a single-atlas list."""
    if not connectomes:
        raise EmptyInputError("cannot fit standardizer on empty list")
    atlas = connectomes[0].atlas
    for c in connectomes[1:]:
        if c.atlas != atlas:
            raise MixedAtlasError(f"mixed atlases {atlas.name} and {c.atlas.name}")
    x = np.stack([c.features for c in connectomes])
    mean = x.mean(axis=0)
    std = x.std(axis=0)  # population (ddof=0)
    degenerate = std < DEGENERATE_STD
    std = np.where(degenerate, 1.0, std)
    return StandardizerState(mean=mean, std=std, atlas=atlas, fitted_on=fitted_on,
                             degenerate=degenerate)


def standardize_apply(state: StandardizerState, c: Connectome) -> Connectome:
    """Z-score a connectome with fitted statistics; sets the standardized flag."""
    if c.atlas != state.atlas:
        raise AtlasMismatchError(
            f"state fitted on {state.atlas.name}, connectome is {c.atlas.name}"
        )
    if c.standardized:
        raise AlreadyStandardizedError(f"connectome {c.subject_id} already standardized")
    features = (c.features - state.mean) / state.std
    return replace(c, features=features, standardized=True)


def augment_noise(c: Connectome, p_aug: float, sigma: float,
                  rng: np.random.Generator) -> Connectome:
    """With probability p_aug (one draw per call) add N(0, sigma^2) noise to
    every feature; otherwise return the input unchanged."""
    if not c.standardized:
        raise ValueError("augmentation expects a standardized connectome")
    if rng.random() >= p_aug:
        return c
    noise = rng.normal(0.0, sigma, size=c.features.shape)
    return replace(c, features=c.features + noise)


def sample_mask(n: int, mask_ratio: float, rng: np.random.Generator,
                atlas_index: int = 0) -> NoiseMask:
    """Choose exactly round(mask_ratio * n) positions uniformly without
    replacement and zero them; the rest stay 1."""
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must be in (0, 1), got {mask_ratio}")
    n_zero = int(round(mask_ratio * n))
    mask = np.ones(n, dtype=np.float64)
    idx = rng.choice(n, size=n_zero, replace=False)
    mask[idx] = 0.0
    return NoiseMask(atlas_index=atlas_index, mask=mask)


def apply_mask(c: Connectome, m: NoiseMask) -> Connectome:
    """Element-wise product with the keep-mask: masked positions become 0."""
    if m.mask.shape != c.features.shape:
        raise LengthMismatchError(
            f"mask length {m.mask.shape[0]} vs features {c.features.shape[0]}"
        )
    return replace(c, features=c.features * m.mask)
