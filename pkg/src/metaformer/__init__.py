"""Connectome classification toolkit: functional-connectivity features, a
multi-atlas transformer ensemble with masked-imputation pretraining, and a
stratified cross-validation harness."""

from .data import (
    AAL,
    ATLAS_ORDER,
    BUILTIN_ATLASES,
    CC200,
    DOS160,
    AtlasSpec,
    Connectome,
    NoiseMask,
    RoiTimeSeries,
    StandardizerState,
    Subject,
    apply_mask,
    augment_noise,
    pearson_fc,
    sample_mask,
    standardize_apply,
    standardize_fit,
    vectorize_lower,
)
from .model import MetaFormerModel, SatConfig, SingleAtlasTransformer, transfer_pretrained
from .train import AdamW, GridSpec, TrainConfig, fit, grid_search, pretrain
from .evaluation import CvReport, MetricSet, run_cv_experiment, stratified_kfold

__version__ = "0.1.0"

__all__ = [
    "AAL", "ATLAS_ORDER", "BUILTIN_ATLASES", "CC200", "DOS160",
    "AtlasSpec", "Connectome", "NoiseMask", "RoiTimeSeries",
    "StandardizerState", "Subject",
    "apply_mask", "augment_noise", "pearson_fc", "sample_mask",
    "standardize_apply", "standardize_fit", "vectorize_lower",
    "MetaFormerModel", "SatConfig", "SingleAtlasTransformer", "transfer_pretrained",
    "AdamW", "GridSpec", "TrainConfig", "fit", "grid_search", "pretrain",
    "CvReport", "MetricSet", "run_cv_experiment", "stratified_kfold",
    "__version__",
]
