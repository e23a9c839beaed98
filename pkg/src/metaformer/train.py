"""Training: losses, AdamW, epoch loops with early stopping, grid search.

Three phases share one loop. `pretrain` corrupts inputs by masking and
minimizes the multi-atlas masked MSE; `finetune`/`scratch` corrupt by noise
augmentation and minimize two-class cross entropy. Every random draw is
derived from the config seed by component name, epoch and sample index, so a
run is reproducible bit for bit and independent of batch schedule.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import sample_mask
from .errors import (
    BadLabelError,
    EmptySplitError,
    InvalidConfigError,
    LengthMismatchError,
    NoGradientError,
    NonFiniteError,
)
from .model import MetaFormerModel
from .nn import Node, Parameter, Tape
from .rng import derive_seed, stream

PHASES = ("pretrain", "finetune", "scratch")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    dropout_rate: float = 0.1
    max_epochs: int = 750
    batch_size: int = 256
    patience: int = 40
    p_aug: float = 0.3
    noise_sigma: float = 0.01
    mask_ratio: float = 0.1
    seed: int = 0
    phase: str = "finetune"

    def __post_init__(self):
        if self.phase not in PHASES:
            raise InvalidConfigError("phase", f"must be one of {PHASES}, got {self.phase!r}")
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size", "must be >= 1")
        if not self.patience < self.max_epochs:
            raise InvalidConfigError("patience", "must be < max_epochs")
        if self.learning_rate < 0:
            raise InvalidConfigError("learning_rate", "must be >= 0")
        if self.weight_decay < 0:
            raise InvalidConfigError("weight_decay", "must be >= 0")
        if not 0.0 <= self.p_aug <= 1.0:
            raise InvalidConfigError("p_aug", "must be in [0, 1]")
        if self.noise_sigma < 0:
            raise InvalidConfigError("noise_sigma", "must be >= 0")
        if not 0.0 < self.mask_ratio < 1.0:
            raise InvalidConfigError("mask_ratio", "must be in (0, 1)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfigError("dropout_rate", "must be in [0, 1)")

    @staticmethod
    def from_json(path: str | Path, **overrides) -> "TrainConfig":
        with open(path) as fh:
            raw = json.load(fh)
        known = set(TrainConfig.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise InvalidConfigError(sorted(unknown)[0], "unknown field")
        raw.update(overrides)
        return TrainConfig(**raw)


@dataclass(frozen=True)
class GridSpec:
    learning_rates: tuple[float, ...]
    weight_decays: tuple[float, ...]
    dropout_rates: tuple[float, ...]

    def __post_init__(self):
        for name in ("learning_rates", "weight_decays", "dropout_rates"):
            if not getattr(self, name):
                raise InvalidConfigError(name, "must be nonempty")

    def points(self):
        """Cartesian product in deterministic order."""
        return list(itertools.product(self.learning_rates, self.weight_decays,
                                      self.dropout_rates))

    @staticmethod
    def from_json(path: str | Path) -> "GridSpec":
        with open(path) as fh:
            raw = json.load(fh)
        return GridSpec(tuple(raw["learning_rates"]), tuple(raw["weight_decays"]),
                        tuple(raw["dropout_rates"]))


DEFAULT_GRID = GridSpec(
    learning_rates=(1e-3, 1e-4, 1e-5),
    weight_decays=(1e-2, 1e-4, 0.0),
    dropout_rates=(0.1, 0.3, 0.5),
)


# --- data splits ---

@dataclass(frozen=True)
class LabeledSplit:
    """Per-subject feature views (one array per atlas the model consumes)
    plus integer class labels."""

    xs: tuple[tuple[np.ndarray, ...], ...]
    ys: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ys", np.asarray(self.ys, dtype=np.int64))
        if len(self.xs) != len(self.ys):
            raise LengthMismatchError(f"{len(self.xs)} samples vs {len(self.ys)} labels")

    def __len__(self):
        return len(self.xs)

    def features(self) -> "FeatureSplit":
        return FeatureSplit(self.xs)


@dataclass(frozen=True)
class FeatureSplit:
    """Label-free view used by the imputation phase: labels are not merely
    ignored, they are absent."""

    xs: tuple[tuple[np.ndarray, ...], ...]

    def __len__(self):
        return len(self.xs)


def _stack_views(xs, indices) -> list[np.ndarray]:
    n_views = len(xs[0])
    return [np.stack([xs[i][v] for i in indices]) for v in range(n_views)]


def labeled_split(views, labels, indices) -> LabeledSplit:
    """Select per-subject feature views and labels by dataset index."""
    return LabeledSplit(tuple(views[i] for i in indices), np.asarray(labels)[indices])


def feature_split(views, indices) -> FeatureSplit:
    return FeatureSplit(tuple(views[i] for i in indices))


# --- losses ---

def cross_entropy_loss(tape: Tape, logits: Node, labels: np.ndarray) -> Node:
    """Mean two-class cross entropy over the batch, log-sum-exp stabilized.
    Gradient w.r.t. logits is (softmax - onehot) / batch."""
    labels = np.asarray(labels)
    z = logits.value
    if z.ndim != 2 or z.shape[1] != 2:
        raise LengthMismatchError(f"logits must be (batch, 2), got {z.shape}")
    if labels.shape != (z.shape[0],) or z.shape[0] < 1:
        raise LengthMismatchError(f"labels shape {labels.shape} vs batch {z.shape[0]}")
    if not np.isin(labels, (0, 1)).all():
        raise BadLabelError("labels must be in {0, 1}")
    batch = z.shape[0]
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    out = Node(np.asarray((lse - z[np.arange(batch), labels]).mean()))

    def bw():
        if out.grad is None:
            return
        probs = np.exp(z - zmax)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(batch), labels] -= 1.0
        _accum_loss_grad(logits, out.grad * probs / batch)

    tape.record(bw)
    return out


def mamse_loss(tape: Tape, preds: list[Node], originals: list[np.ndarray],
               masks: list[np.ndarray]) -> Node:
    """Multi-atlas masked MSE, averaged over the batch.

    Per sample: (1/3) * sum over atlases of (1/n_i) * sum of squared errors at
    the masked positions (mask bit 0); the inner sum is normalized by the full
    feature length n_i, not the masked count. Gradient is exactly zero at
    unmasked coordinates.
    """
    if not (len(preds) == len(originals) == len(masks)):
        raise LengthMismatchError("preds/originals/masks must align per atlas")
    n_atlas = len(preds)
    total = 0.0
    batch = None
    hit = []  # (pred, factor * (pred - orig) * masked_indicator)
    for pred, orig, mask in zip(preds, originals, masks):
        p, x = pred.value, np.asarray(orig)
        m = np.broadcast_to(np.asarray(mask), p.shape)
        if p.shape != x.shape:
            raise LengthMismatchError(f"pred {p.shape} vs original {x.shape}")
        if batch is None:
            batch = p.shape[0] if p.ndim == 2 else 1
        n_i = p.shape[-1]
        masked = 1.0 - m
        err = (p - x) * masked
        total += (err ** 2).sum() / n_i
        hit.append((pred, err / n_i))
    value = total / (n_atlas * batch)
    out = Node(np.asarray(value))

    def bw():
        if out.grad is None:
            return
        for pred, err_scaled in hit:
            _accum_loss_grad(pred, out.grad * 2.0 * err_scaled / (n_atlas * batch))

    tape.record(bw)
    return out


def _accum_loss_grad(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = np.array(g)
    else:
        node.grad = node.grad + g


# --- optimizer ---

class AdamW:
    """Adam with decoupled weight decay. Decay touches only parameters
    flagged `decay` (weight matrices), never biases or layer-norm terms."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params: list[Parameter], lr: float, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise NoGradientError(p.name)
        self.t += 1
        bc1 = 1.0 - self.BETA1 ** self.t
        bc2 = 1.0 - self.BETA2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            self._m[i] = self.BETA1 * self._m[i] + (1.0 - self.BETA1) * g
            self._v[i] = self.BETA2 * self._v[i] + (1.0 - self.BETA2) * (g * g)
            update = (self._m[i] / bc1) / (np.sqrt(self._v[i] / bc2) + self.EPS)
            if p.decay and self.weight_decay:
                update = update + self.weight_decay * p.value
            p.value = p.value - self.lr * update

    def zero_grads(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.value)


# --- model-shape helpers (ensemble and single-atlas share the loop) ---

def forward_classify_views(model, tape, views, training, rng) -> Node:
    if isinstance(model, MetaFormerModel):
        return model.forward_classify(tape, views, training, rng)
    return model.forward_classify(tape, views[0], training, rng)


def forward_impute_views(model, tape, views, training, rng) -> list[Node]:
    if isinstance(model, MetaFormerModel):
        return model.forward_impute(tape, views, training, rng)
    return [model.forward_impute(tape, views[0], training, rng)]


# --- batches ---

@dataclass
class Batch:
    views: list[np.ndarray]                     # model inputs, corrupted as the phase dictates
    labels: np.ndarray | None = None            # classification target
    originals: list[np.ndarray] | None = None   # imputation target
    masks: list[np.ndarray] | None = None       # keep-masks matching `originals`

    @property
    def size(self) -> int:
        return self.views[0].shape[0]


def _augment_all(xs, p_aug: float, sigma: float, base_seed: int, tag) -> list[tuple]:
    """Per-sample, per-view Bernoulli(p_aug) full-vector Gaussian noise.
    Draws are consumed in sample-index order from one stream per view, so the
    corruption never depends on the batch schedule."""
    n = len(xs)
    n_views = len(xs[0])
    out = [list(sample) for sample in xs]
    for v in range(n_views):
        g = stream(base_seed, *tag, v)
        for i in range(n):
            if g.random() < p_aug:
                out[i][v] = xs[i][v] + g.normal(0.0, sigma, size=xs[i][v].shape)
    return [tuple(sample) for sample in out]


def _mask_all(xs, mask_ratio: float, base_seed: int, tag):
    """Fresh keep-mask per sample per view; returns (masked inputs, masks)."""
    n = len(xs)
    n_views = len(xs[0])
    masked = [list(sample) for sample in xs]
    masks = [[None] * n_views for _ in range(n)]
    for v in range(n_views):
        g = stream(base_seed, *tag, v)
        for i in range(n):
            m = sample_mask(xs[i][v].shape[0], mask_ratio, g, atlas_index=v).mask
            masks[i][v] = m
            masked[i][v] = xs[i][v] * m
    return [tuple(s) for s in masked], [tuple(m) for m in masks]


def _chunk(indices: np.ndarray, batch_size: int):
    for start in range(0, len(indices), batch_size):
        yield indices[start:start + batch_size]


def build_classify_batches(split: LabeledSplit, cfg: TrainConfig, epoch: int,
                           training: bool) -> list[Batch]:
    """Training batches are shuffled and noise-augmented; evaluation batches
    are clean and in index order."""
    n = len(split)
    if training:
        xs = _augment_all(split.xs, cfg.p_aug, cfg.noise_sigma, cfg.seed, ("aug", epoch))
        order = stream(cfg.seed, "shuffle", epoch).permutation(n)
    else:
        xs = split.xs
        order = np.arange(n)
    return [Batch(views=_stack_views(xs, idx), labels=split.ys[idx])
            for idx in _chunk(order, cfg.batch_size)]


def build_impute_batches(split: FeatureSplit, cfg: TrainConfig, epoch: int,
                         training: bool) -> list[Batch]:
    """Masked-input batches. Training masks are resampled each epoch;
    validation masks are fixed (derived from the seed alone) so the metric is
    comparable across epochs."""
    n = len(split)
    tag = ("mask", epoch) if training else ("valmask",)
    masked, masks = _mask_all(split.xs, cfg.mask_ratio, cfg.seed, tag)
    order = stream(cfg.seed, "shuffle", epoch).permutation(n) if training else np.arange(n)
    batches = []
    for idx in _chunk(order, cfg.batch_size):
        batches.append(Batch(
            views=_stack_views(masked, idx),
            originals=_stack_views(split.xs, idx),
            masks=_stack_views(masks, idx),
        ))
    return batches


def classify_loss_fn(tape, model, batch: Batch, training: bool, rng) -> Node:
    logits = forward_classify_views(model, tape, batch.views, training, rng)
    return cross_entropy_loss(tape, logits, batch.labels)


def impute_loss_fn(tape, model, batch: Batch, training: bool, rng) -> Node:
    preds = forward_impute_views(model, tape, batch.views, training, rng)
    return mamse_loss(tape, preds, batch.originals, batch.masks)


# --- epoch loop ---

def train_epoch(model, batches: list[Batch], loss_fn, optimizer: AdamW,
                rng: np.random.Generator) -> float:
    """One optimization step per batch; grads zeroed after each step.
    Returns the mean per-batch loss."""
    losses = []
    for batch in batches:
        tape = Tape()
        loss = loss_fn(tape, model, batch, True, rng)
        if not np.isfinite(loss.value):
            raise NonFiniteError("training loss is not finite")
        tape.backward(loss)
        optimizer.step()
        optimizer.zero_grads()
        losses.append(float(loss.value))
    return float(np.mean(losses))


def evaluate_loss(model, batches: list[Batch], loss_fn) -> float:
    """Sample-weighted mean loss with no corruption noise and no dropout."""
    total, count = 0.0, 0
    for batch in batches:
        tape = Tape()
        loss = loss_fn(tape, model, batch, False, None)
        total += float(loss.value) * batch.size
        count += batch.size
    return total / count


# --- fit / pretrain ---

@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class FitResult:
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stopped_early: bool = False


def _snapshot(params: list[Parameter]) -> list[np.ndarray]:
    return [p.value.copy() for p in params]


def _restore(params: list[Parameter], values: list[np.ndarray]) -> None:
    for p, v in zip(params, values):
        p.value = v.copy()


def fit(model, train_split, val_split, cfg: TrainConfig) -> FitResult:
    """Train with per-epoch validation, early stopping (patience on epochs
    without strict improvement) and best-epoch weight restoration."""
    if len(train_split) == 0 or len(val_split) == 0:
        raise EmptySplitError("train and validation splits must be nonempty")
    if cfg.phase == "pretrain":
        if not isinstance(train_split, FeatureSplit) or not isinstance(val_split, FeatureSplit):
            raise TypeError("pretraining takes label-free FeatureSplit data")
        build, loss_fn = build_impute_batches, impute_loss_fn
    else:
        build, loss_fn = build_classify_batches, classify_loss_fn

    params = model.params()
    optimizer = AdamW(params, cfg.learning_rate, cfg.weight_decay)
    val_batches = build(val_split, cfg, 0, training=False)

    result = FitResult()
    best_values = _snapshot(params)
    bad_epochs = 0
    for epoch in range(1, cfg.max_epochs + 1):
        batches = build(train_split, cfg, epoch, training=True)
        train_loss = train_epoch(model, batches, loss_fn, optimizer,
                                 stream(cfg.seed, "dropout", epoch))
        val_loss = evaluate_loss(model, val_batches, loss_fn)
        if not np.isfinite(val_loss):
            raise NonFiniteError("validation loss is not finite")
        result.history.append(EpochStats(epoch, train_loss, val_loss))
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_values = _snapshot(params)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                result.stopped_early = True
                break
    _restore(params, best_values)
    return result


def pretrain(model, train_features: FeatureSplit, val_features: FeatureSplit,
             cfg: TrainConfig) -> FitResult:
    """Self-supervised imputation phase; labels are structurally absent."""
    if cfg.phase != "pretrain":
        raise InvalidConfigError("phase", f"pretrain() requires phase='pretrain', got {cfg.phase!r}")
    return fit(model, train_features, val_features, cfg)


def write_history(result: FitResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("epoch,train_loss,val_loss,stopped_early,best_epoch\n")
        for row in result.history:
            fh.write(f"{row.epoch},{row.train_loss!r},{row.val_loss!r},"
                     f"{int(result.stopped_early)},{result.best_epoch}\n")


def read_history(path: str | Path) -> FitResult:
    result = FitResult()
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "epoch,train_loss,val_loss,stopped_early,best_epoch":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            epoch, train_loss, val_loss, stopped_early, best_epoch = line.rstrip("\n").split(",")
            result.history.append(EpochStats(int(epoch), float(train_loss), float(val_loss)))
            result.stopped_early = bool(int(stopped_early))
            result.best_epoch = int(best_epoch)
    if result.history:
        result.best_val_loss = min(row.val_loss for row in result.history)
    return result


# --- grid search ---

@dataclass
class GridPointResult:
    index: int
    learning_rate: float
    weight_decay: float
    dropout_rate: float
    best_val_loss: float


def grid_search(grid: GridSpec, model_factory, train_split, val_split,
                base_cfg: TrainConfig) -> tuple[TrainConfig, list[GridPointResult]]:
    """Train one model per grid point; pick the lowest validation loss of the
    phase, ties broken by earliest point. `model_factory(cfg, rng)` must build
    a fresh model for the point's dropout rate."""
    results = []
    best_cfg = None
    best_loss = float("inf")
    for index, (lr, wd, dr) in enumerate(grid.points()):
        cfg = replace(base_cfg, learning_rate=lr, weight_decay=wd, dropout_rate=dr,
                      seed=derive_seed(base_cfg.seed, "grid", index))
        model = model_factory(cfg, stream(cfg.seed, "init"))
        outcome = fit(model, train_split, val_split, cfg)
        results.append(GridPointResult(index, lr, wd, dr, outcome.best_val_loss))
        if outcome.best_val_loss < best_loss:
            best_loss = outcome.best_val_loss
            best_cfg = replace(cfg, seed=base_cfg.seed)
    return best_cfg, results
