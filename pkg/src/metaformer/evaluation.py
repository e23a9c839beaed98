"""Stratified cross-validation harness and classification metrics.

One fold assignment is built per experiment and shared by every model
variant, so comparisons are on identical splits. Standardization statistics,
pretraining, fine-tuning and early stopping only ever see training-side
indices; a leakage guard checks the index sets before any model runs.
"""

from __future__ import annotations

import hashlib
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

import numpy as np

from .checkpoint import save_weights
from .data import Subject, standardize_apply, standardize_fit
from .errors import (
    ClassTooSmallError,
    EmptyResultError,
    LeakageError,
    LengthMismatchError,
    NoPositivesError,
    OneClassOnlyError,
)
from .model import CLASSIFY, MetaFormerModel, PRETRAIN, SatConfig, SingleAtlasTransformer, transfer_pretrained
from .nn import Tape, softmax
from .rng import derive_seed, stream
from .train import FeatureSplit, LabeledSplit, TrainConfig, fit, forward_classify_views, pretrain

VAL_FRACTION = 0.30


# --- fold construction ---

@dataclass(frozen=True)
class FoldAssignment:
    fold_id: int
    test_indices: np.ndarray
    train_indices: np.ndarray
    val_indices: np.ndarray


def train_val_split(indices: np.ndarray, labels: np.ndarray, fraction: float = VAL_FRACTION,
                    seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified carve of a validation set: per class, round(fraction * n_c)
    members chosen at random."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    indices = np.asarray(indices)
    labels = np.asarray(labels)
    val_parts, train_parts = [], []
    for cls in np.unique(labels[indices]):
        members = indices[labels[indices] == cls]
        members = members[stream(seed, "val", int(cls)).permutation(len(members))]
        n_val = int(round(fraction * len(members)))
        val_parts.append(members[:n_val])
        train_parts.append(members[n_val:])
    val = np.sort(np.concatenate(val_parts))
    train = np.sort(np.concatenate(train_parts))
    if len(val) == 0 or len(train) == 0:
        raise EmptyResultError(f"split left {len(train)} train / {len(val)} val")
    return train, val


def stratified_kfold(labels: np.ndarray, k: int = 10, seed: int = 0,
                     val_fraction: float = VAL_FRACTION) -> list[FoldAssignment]:
    """Class-stratified test folds (per-class counts within +-1 of proportional)
    with fold sizes balanced to within one subject, plus a stratified
    train/validation carve of each fold's remainder."""
    labels = np.asarray(labels)
    n = len(labels)
    classes = np.unique(labels)
    for cls in classes:
        if (labels == cls).sum() < k:
            raise ClassTooSmallError(f"class {cls} has fewer than k={k} members")

    # Distribute each class round-robin-wise: every fold gets the base count,
    # and the remainder goes to the folds currently smallest overall so total
    # fold sizes stay within one of each other.
    fold_members: list[list[int]] = [[] for _ in range(k)]
    totals = np.zeros(k, dtype=np.int64)
    for cls in classes:
        members = np.flatnonzero(labels == cls)
        members = members[stream(seed, "fold", int(cls)).permutation(len(members))]
        base, extra = divmod(len(members), k)
        counts = np.full(k, base, dtype=np.int64)
        if extra:
            order = np.lexsort((np.arange(k), totals))  # smallest totals, lowest id first
            counts[order[:extra]] += 1
        start = 0
        for f in range(k):
            fold_members[f].extend(members[start:start + counts[f]].tolist())
            start += counts[f]
        totals += counts

    assignments = []
    all_indices = np.arange(n)
    for f in range(k):
        test = np.sort(np.array(fold_members[f], dtype=np.int64))
        rest = np.setdiff1d(all_indices, test)
        train, val = train_val_split(rest, labels, val_fraction, derive_seed(seed, "carve", f))
        assignments.append(FoldAssignment(f, test, train, val))
    return assignments


def fold_fingerprint(folds: list[FoldAssignment]) -> str:
    """Stable digest of the complete assignment, used to assert that every
    variant consumed identical splits."""
    h = hashlib.sha256()
    for fa in folds:
        for part in (fa.test_indices, fa.train_indices, fa.val_indices):
            h.update(np.asarray(part, dtype=np.int64).tobytes())
        h.update(b"|")
    return h.hexdigest()[:16]


def assert_no_leakage(fold: FoldAssignment) -> None:
    test = set(fold.test_indices.tolist())
    if test & set(fold.train_indices.tolist()):
        raise LeakageError(f"fold {fold.fold_id}: test indices appear in train")
    if test & set(fold.val_indices.tolist()):
        raise LeakageError(f"fold {fold.fold_id}: test indices appear in val")
    if set(fold.train_indices.tolist()) & set(fold.val_indices.tolist()):
        raise LeakageError(f"fold {fold.fold_id}: train and val overlap")


# --- metrics ---

@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float

    def as_dict(self) -> dict[str, float]:
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1, "auc": self.auc}


METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "auc")


def confusion_counts(preds: np.ndarray, labels: np.ndarray) -> tuple[int, int, int, int]:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise LengthMismatchError(f"preds {preds.shape} vs labels {labels.shape}")
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    tn = int(((preds == 0) & (labels == 0)).sum())
    return tp, fp, fn, tn


def accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    tp, fp, fn, tn = confusion_counts(preds, labels)
    return (tp + tn) / (tp + fp + fn + tn)


def precision(preds: np.ndarray, labels: np.ndarray) -> float:
    tp, fp, _, _ = confusion_counts(preds, labels)
    if tp + fp == 0:
        warnings.warn("no predicted positives; precision reported as 0", stacklevel=2)
        return 0.0
    return tp / (tp + fp)


def recall(preds: np.ndarray, labels: np.ndarray) -> float:
    tp, _, fn, _ = confusion_counts(preds, labels)
    if tp + fn == 0:
        raise NoPositivesError("recall undefined without actual positives")
    return tp / (tp + fn)


def f1_score(preds: np.ndarray, labels: np.ndarray) -> float:
    p = precision(preds, labels)
    r = recall(preds, labels)
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def _tied_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based Mann-Whitney area: the probability a random positive scores
    above a random negative, ties credited one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise LengthMismatchError(f"scores {scores.shape} vs labels {labels.shape}")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnlyError("AUC needs both classes present")
    ranks = _tied_ranks(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def compute_metrics(preds: np.ndarray, labels: np.ndarray, scores: np.ndarray) -> MetricSet:
    # the zero-predicted-positives warning is meaningful per call but noise in
    # a CV sweep; the reported 0.0 already flags it
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return MetricSet(
            accuracy=accuracy(preds, labels),
            precision=precision(preds, labels),
            recall=recall(preds, labels),
            f1=f1_score(preds, labels),
            auc=auc(scores, labels),
        )


# --- variants ---

@dataclass(frozen=True)
class VariantSpec:
    key: str
    pretrained: bool
    atlas: str | None  # None = three-atlas ensemble

    @property
    def display(self) -> str:
        base = "METAFormer" if self.atlas is None else f"SAT ({self.atlas})"
        return f"{base} PT" if self.pretrained else base


def parse_variant(token: str, atlas_names: tuple[str, ...]) -> VariantSpec:
    key = token.strip().lower()
    pretrained = key.endswith("-pt")
    stem = key[:-3] if pretrained else key
    if stem == "metaformer":
        return VariantSpec(key, pretrained, None)
    if stem.startswith("sat-"):
        name = stem[4:]
        for atlas in atlas_names:
            if atlas.lower() == name:
                return VariantSpec(key, pretrained, atlas)
    raise ValueError(
        f"unknown variant {token!r}; expected metaformer[-pt] or sat-<atlas>[-pt] "
        f"with atlas in {atlas_names}"
    )


ALL_VARIANT_KEYS = ("metaformer", "metaformer-pt",
                    "sat-aal", "sat-cc200", "sat-dos160",
                    "sat-aal-pt", "sat-cc200-pt", "sat-dos160-pt")


# --- experiment ---

@dataclass(frozen=True)
class ModelParams:
    d_model: int = 256
    n_layers: int = 2
    d_ff: int = 128
    n_heads: int = 4


@dataclass
class CvReport:
    variant: str
    per_fold: list[MetricSet]
    mean: dict[str, float]
    std: dict[str, float]
    fold_fingerprint: str


def summarize(variant: str, per_fold: list[MetricSet], fingerprint: str) -> CvReport:
    mean, std = {}, {}
    for name in METRIC_NAMES:
        values = np.array([m.as_dict()[name] for m in per_fold])
        mean[name] = float(values.mean())
        std[name] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return CvReport(variant, per_fold, mean, std, fingerprint)


def _standardized_views(subjects: list[Subject], fold: FoldAssignment,
                        atlas_indices: list[int]) -> list[tuple[np.ndarray, ...]]:
    """Fit the per-atlas standardizer on the fold's training subjects only,
    then z-score every subject with those statistics."""
    states = []
    for a in atlas_indices:
        train_conns = [subjects[i].connectomes[a] for i in fold.train_indices]
        states.append(standardize_fit(train_conns, fitted_on=f"fold{fold.fold_id}/train"))
    views = []
    for subject in subjects:
        views.append(tuple(
            standardize_apply(state, subject.connectomes[a]).features
            for state, a in zip(states, atlas_indices)
        ))
    return views


def _gather(views, labels, indices, with_labels=True):
    xs = tuple(views[i] for i in indices)
    if with_labels:
        return LabeledSplit(xs, labels[indices])
    return FeatureSplit(xs)


def _predict(model, views, indices) -> tuple[np.ndarray, np.ndarray]:
    """Class predictions and positive-class probabilities, evaluation mode."""
    batch = [np.stack([views[i][v] for i in indices]) for v in range(len(views[0]))]
    tape = Tape()
    logits = forward_classify_views(model, tape, batch, False, None)
    probs = softmax(tape, logits).value
    return probs.argmax(axis=1), probs[:, 1]


def _train_variant(subjects, views, labels, fold: FoldAssignment, variant: VariantSpec,
                   params: ModelParams, cfg: TrainConfig,
                   pretrain_cfg: TrainConfig | None, job_seed: int, atlas_indices):
    """One full training run of a variant on a fold's train/val split.
    Returns (model, supervised FitResult)."""
    sat_configs = [
        SatConfig(subjects[0].connectomes[a].atlas, params.d_model, params.n_layers,
                  params.d_ff, params.n_heads, cfg.dropout_rate)
        for a in atlas_indices
    ]

    def build(mode, rng):
        if variant.atlas is None:
            return MetaFormerModel.build(sat_configs, mode, rng)
        return SingleAtlasTransformer.build(sat_configs[0], mode, rng)

    train_labeled = _gather(views, labels, fold.train_indices)
    val_labeled = _gather(views, labels, fold.val_indices)

    if variant.pretrained:
        model = build(PRETRAIN, stream(job_seed, "init"))
        pre_cfg = dc_replace(pretrain_cfg if pretrain_cfg is not None else cfg,
                             phase="pretrain", seed=derive_seed(job_seed, "pretrain"))
        pretrain(model, train_labeled.features(), val_labeled.features(), pre_cfg)
        if variant.atlas is None:
            model = transfer_pretrained(model, stream(job_seed, "transfer"))
        else:
            model = model.transfer_pretrained(stream(job_seed, "transfer"))
        ft_cfg = dc_replace(cfg, phase="finetune", seed=derive_seed(job_seed, "finetune"))
    else:
        model = build(CLASSIFY, stream(job_seed, "init"))
        ft_cfg = dc_replace(cfg, phase="scratch", seed=derive_seed(job_seed, "scratch"))
    result = fit(model, train_labeled, val_labeled, ft_cfg)
    return model, result


def run_fold_variant(subjects: list[Subject], labels: np.ndarray, fold: FoldAssignment,
                     variant: VariantSpec, params: ModelParams, cfg: TrainConfig,
                     seed: int, pretrain_cfg: TrainConfig | None = None,
                     grid=None) -> tuple[MetricSet, list[tuple[str, np.ndarray]]]:
    """Train one variant on one fold and score the held-out test subjects.
    Returns the fold metrics and the final named weights.

    `pretrain_cfg` optionally gives the imputation phase its own budget
    (epochs, patience, learning rate); it defaults to the supervised config.
    `grid` (a GridSpec) enables per-fold hyperparameter tuning: every point is
    trained on this fold's train/val split and the lowest supervised
    validation loss wins (ties to the earliest point). Test subjects are
    scored once, by the winning model only.
    """
    assert_no_leakage(fold)
    atlas_names = [c.atlas.name for c in subjects[0].connectomes]
    if variant.atlas is None:
        atlas_indices = list(range(len(atlas_names)))
    else:
        atlas_indices = [atlas_names.index(variant.atlas)]
    views = _standardized_views(subjects, fold, atlas_indices)
    job_seed = derive_seed(seed, variant.key, fold.fold_id)

    if grid is None:
        model, _ = _train_variant(subjects, views, labels, fold, variant, params, cfg,
                                  pretrain_cfg, job_seed, atlas_indices)
    else:
        model, best_loss = None, float("inf")
        for index, (lr, wd, dr) in enumerate(grid.points()):
            cfg_i = dc_replace(cfg, learning_rate=lr, weight_decay=wd, dropout_rate=dr)
            candidate, outcome = _train_variant(
                subjects, views, labels, fold, variant, params, cfg_i, pretrain_cfg,
                derive_seed(job_seed, "grid", index), atlas_indices)
            if outcome.best_val_loss < best_loss:
                model, best_loss = candidate, outcome.best_val_loss

    preds, scores = _predict(model, views, fold.test_indices)
    metrics = compute_metrics(preds, labels[fold.test_indices], scores)
    named = [(p.name, p.value) for p in model.params()]
    return metrics, named


def run_cv_experiment(subjects: list[Subject], variant_keys: list[str],
                      params: ModelParams, cfg: TrainConfig, k: int = 10,
                      seed: int = 0, threads: int = 1,
                      checkpoint_dir: str | Path | None = None,
                      pretrain_cfg: TrainConfig | None = None,
                      grid=None) -> list[CvReport]:
    """Evaluate all requested variants on one shared fold assignment. With a
    GridSpec in `grid`, hyperparameters are tuned per fold on its own
    train/val split, never on test data."""
    labels = np.array([s.y for s in subjects], dtype=np.int64)
    atlas_names = tuple(c.atlas.name for c in subjects[0].connectomes)
    variants = [parse_variant(key, atlas_names) for key in variant_keys]
    folds = stratified_kfold(labels, k=k, seed=derive_seed(seed, "folds"))
    fingerprint = fold_fingerprint(folds)
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)

    def job(args):
        variant, fold = args
        metrics, named = run_fold_variant(subjects, labels, fold, variant, params, cfg,
                                          seed, pretrain_cfg=pretrain_cfg, grid=grid)
        if checkpoint_dir is not None:
            save_weights(named, Path(checkpoint_dir) / f"{variant.key}.fold{fold.fold_id}.mfw")
        return metrics

    jobs = [(variant, fold) for variant in variants for fold in folds]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(job, jobs))
    else:
        outcomes = [job(j) for j in jobs]

    reports = []
    for vi, variant in enumerate(variants):
        per_fold = outcomes[vi * len(folds):(vi + 1) * len(folds)]
        reports.append(summarize(variant.display, per_fold, fingerprint))
    return reports


# --- report serialization ---

def write_fold_metrics(reports: list[CvReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("variant,fold,accuracy,precision,recall,f1,auc\n")
        for report in reports:
            for fold_id, m in enumerate(report.per_fold):
                d = m.as_dict()
                fh.write(",".join([report.variant, str(fold_id)]
                                  + [repr(d[name]) for name in METRIC_NAMES]) + "\n")


def write_summary(reports: list[CvReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("variant,metric,mean,std\n")
        for report in reports:
            for name in METRIC_NAMES:
                fh.write(f"{report.variant},{name},{report.mean[name]!r},{report.std[name]!r}\n")


def read_summary(path: str | Path) -> dict[str, dict[str, tuple[float, float]]]:
    out: dict[str, dict[str, tuple[float, float]]] = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "variant,metric,mean,std":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            variant, metric, mean, std = line.rstrip("\n").split(",")
            out.setdefault(variant, {})[metric] = (float(mean), float(std))
    return out


def format_table(summary: dict[str, dict[str, tuple[float, float]]]) -> str:
    """Aligned text table: one row per variant, mean +- std per metric."""
    headers = ["Variant", "Acc.", "Prec.", "Rec.", "F1", "AUC"]
    rows = []
    for variant, metrics in summary.items():
        cells = [variant]
        for name in METRIC_NAMES:
            mean, std = metrics[name]
            cells.append(f"{mean:.3f} ±{std:.3f}")
        rows.append(cells)
    widths = [max(len(r[c]) for r in [headers] + rows) for c in range(len(headers))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for cells in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines) + "\n"
