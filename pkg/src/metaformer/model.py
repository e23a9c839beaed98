"""Single-atlas transformer (SAT) and the three-atlas ensemble.

Each SAT embeds one flattened connectome with a linear layer into d_model,
scales by sqrt(d_model), treats the result as a single token through a stack
of encoder layers, and reads out through a head: two class logits, or (in
pretraining mode) a reconstruction of the full feature vector. The ensemble
averages the three SATs' class logits before the final softmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import AtlasSpec
from .errors import AtlasOrderError, HeadAbsentError, LengthMismatchError
from .nn import (
    EncoderLayerWeights,
    Node,
    Parameter,
    Tape,
    add,
    dropout,
    encoder_layer,
    he_init,
    linear,
    reshape,
    scale,
    softmax,
    zeros_init,
)

CLASSIFY = "classify"
PRETRAIN = "pretrain"


@dataclass(frozen=True)
class SatConfig:
    atlas: AtlasSpec
    d_model: int = 256
    n_layers: int = 2
    d_ff: int = 128
    n_heads: int = 4
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"n_heads {self.n_heads} must divide d_model {self.d_model}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def n_features(self) -> int:
        return self.atlas.feature_len


def expected_param_count(cfg: SatConfig, mode: str = CLASSIFY) -> int:
    """Closed-form parameter count, asserted against construction in tests."""
    d, f, n_i = cfg.d_model, cfg.d_ff, cfg.n_features
    embed = n_i * d + d
    per_layer = 4 * d * d + 4 * d + (d * f + f) + (f * d + d) + 2 * (2 * d)
    head = d * 2 + 2 if mode == CLASSIFY else d * n_i + n_i
    return embed + cfg.n_layers * per_layer + head


class SingleAtlasTransformer:
    """One transformer over one atlas's connectome vector."""

    def __init__(self, config: SatConfig, mode: str, embed_w: Parameter, embed_b: Parameter,
                 layers: list[EncoderLayerWeights], head_w: Parameter, head_b: Parameter):
        if mode not in (CLASSIFY, PRETRAIN):
            raise ValueError(f"unknown mode {mode!r}")
        self.config = config
        self.mode = mode
        self.embed_w = embed_w
        self.embed_b = embed_b
        self.layers = layers
        self.head_w = head_w
        self.head_b = head_b

    @classmethod
    def build(cls, config: SatConfig, mode: str, rng: np.random.Generator,
              prefix: str = "", dtype=np.float64) -> "SingleAtlasTransformer":
        d, n_i = config.d_model, config.n_features
        embed_w = Parameter(f"{prefix}embed.W", he_init((n_i, d), n_i, rng, dtype), decay=True)
        embed_b = Parameter(f"{prefix}embed.b", zeros_init((d,), dtype), decay=False)
        layers = [
            EncoderLayerWeights.build(f"{prefix}enc{i + 1}", d, config.d_ff, rng, dtype)
            for i in range(config.n_layers)
        ]
        head_name, n_out = ("head", 2) if mode == CLASSIFY else ("impute", n_i)
        head_w = Parameter(f"{prefix}{head_name}.W", he_init((d, n_out), d, rng, dtype), decay=True)
        head_b = Parameter(f"{prefix}{head_name}.b", zeros_init((n_out,), dtype), decay=False)
        return cls(config, mode, embed_w, embed_b, layers, head_w, head_b)

    # -- parameters --

    def trunk_params(self) -> list[Parameter]:
        out = [self.embed_w, self.embed_b]
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def params(self) -> list[Parameter]:
        return self.trunk_params() + [self.head_w, self.head_b]

    def param_count(self) -> int:
        return sum(p.value.size for p in self.params())

    # -- forward --

    def _as_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.embed_w.value.dtype)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.config.n_features:
            raise LengthMismatchError(
                f"atlas {self.config.atlas.name} expects {self.config.n_features} features, "
                f"got shape {x.shape}"
            )
        return x

    def embed(self, tape: Tape, x: np.ndarray) -> Node:
        """Linear embedding scaled by sqrt(d_model)."""
        xb = Node(self._as_batch(x))
        return scale(tape, linear(tape, xb, self.embed_w, self.embed_b),
                     math.sqrt(self.config.d_model))

    def encode(self, tape: Tape, x: np.ndarray, training: bool,
               rng: np.random.Generator | None = None) -> Node:
        """Trunk: embed, run the encoder stack on the single token, apply the
        final dropout. Returns (batch, d_model)."""
        h = self.embed(tape, x)
        batch, d = h.value.shape
        h = reshape(tape, h, (batch, 1, d))
        for layer in self.layers:
            h = encoder_layer(tape, h, layer, self.config.n_heads,
                              self.config.dropout_rate, training, rng)
        h = reshape(tape, h, (batch, d))
        return dropout(tape, h, self.config.dropout_rate, training, rng)

    def forward_classify(self, tape: Tape, x: np.ndarray, training: bool = False,
                         rng: np.random.Generator | None = None) -> Node:
        """Class logits (batch, 2); no softmax."""
        if self.mode != CLASSIFY:
            raise HeadAbsentError("model is in pretraining mode; no classification head")
        h = self.encode(tape, x, training, rng)
        return linear(tape, h, self.head_w, self.head_b)

    def forward_impute(self, tape: Tape, x_masked: np.ndarray, training: bool = False,
                       rng: np.random.Generator | None = None) -> Node:
        """Reconstruction (batch, n_features) of a masked input."""
        if self.mode != PRETRAIN:
            raise HeadAbsentError("model is in classification mode; no imputation head")
        h = self.encode(tape, x_masked, training, rng)
        return linear(tape, h, self.head_w, self.head_b)

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward_classify(Tape(), x, training=False).value

    # -- weight transfer --

    def transfer_pretrained(self, rng: np.random.Generator) -> "SingleAtlasTransformer":
        """Classification-mode copy: trunk weights copied bit-exact, imputation
        head dropped, classification head freshly initialized (zero biases)."""
        if self.mode != PRETRAIN:
            raise HeadAbsentError("transfer expects a pretraining-mode model")
        prefix = self.embed_w.name[: -len("embed.W")]
        dtype = self.embed_w.value.dtype
        d = self.config.d_model
        embed_w = Parameter(self.embed_w.name, self.embed_w.value.copy(), decay=True)
        embed_b = Parameter(self.embed_b.name, self.embed_b.value.copy(), decay=False)
        layers = [_copy_layer(layer) for layer in self.layers]
        head_w = Parameter(f"{prefix}head.W", he_init((d, 2), d, rng, dtype), decay=True)
        head_b = Parameter(f"{prefix}head.b", zeros_init((2,), dtype), decay=False)
        return SingleAtlasTransformer(self.config, CLASSIFY, embed_w, embed_b, layers,
                                      head_w, head_b)


def _copy_layer(layer: EncoderLayerWeights) -> EncoderLayerWeights:
    def cp(p: Parameter) -> Parameter:
        return Parameter(p.name, p.value.copy(), decay=p.decay)

    return EncoderLayerWeights(
        wq=cp(layer.wq), bq=cp(layer.bq), wk=cp(layer.wk), bk=cp(layer.bk),
        wv=cp(layer.wv), bv=cp(layer.bv), wo=cp(layer.wo), bo=cp(layer.bo),
        w1=cp(layer.w1), b1=cp(layer.b1), w2=cp(layer.w2), b2=cp(layer.b2),
        ln1_g=cp(layer.ln1_g), ln1_b=cp(layer.ln1_b),
        ln2_g=cp(layer.ln2_g), ln2_b=cp(layer.ln2_b),
    )


class MetaFormerModel:
    """Ensemble of three SATs in fixed atlas order; class logits averaged."""

    def __init__(self, sats: tuple[SingleAtlasTransformer, ...]):
        if len(sats) != 3:
            raise ValueError(f"expected exactly 3 single-atlas transformers, got {len(sats)}")
        names = [s.config.atlas.name for s in sats]
        if len(set(names)) != 3:
            raise ValueError(f"atlases must be pairwise distinct, got {names}")
        self.sats = tuple(sats)

    @classmethod
    def build(cls, configs: list[SatConfig], mode: str, rng: np.random.Generator,
              dtype=np.float64) -> "MetaFormerModel":
        sats = tuple(
            SingleAtlasTransformer.build(cfg, mode, rng, prefix=f"sat{i}.", dtype=dtype)
            for i, cfg in enumerate(configs)
        )
        return cls(sats)

    @property
    def mode(self) -> str:
        return self.sats[0].mode

    @property
    def atlases(self) -> tuple[AtlasSpec, ...]:
        return tuple(s.config.atlas for s in self.sats)

    def params(self) -> list[Parameter]:
        out = []
        for sat in self.sats:
            out.extend(sat.params())
        return out

    def _check_order(self, xs) -> None:
        if len(xs) != 3:
            raise LengthMismatchError(f"expected 3 inputs, got {len(xs)}")
        lengths = [np.asarray(x).shape[-1] for x in xs]
        expected = [s.config.n_features for s in self.sats]
        if lengths != expected:
            if sorted(lengths) == sorted(expected):
                raise AtlasOrderError(
                    f"inputs of lengths {lengths} appear permuted; expected {expected}"
                )
            raise LengthMismatchError(f"input lengths {lengths}, expected {expected}")

    def forward_classify(self, tape: Tape, xs, training: bool = False,
                         rng: np.random.Generator | None = None) -> Node:
        """Averaged class logits (batch, 2) across the three SATs."""
        self._check_order(xs)
        logits = [sat.forward_classify(tape, x, training, rng)
                  for sat, x in zip(self.sats, xs)]
        total = add_nodes(tape, logits)
        return scale(tape, total, 1.0 / 3.0)

    def forward_impute(self, tape: Tape, xs_masked, training: bool = False,
                       rng: np.random.Generator | None = None) -> list[Node]:
        """Per-atlas reconstructions of the three masked inputs."""
        self._check_order(xs_masked)
        return [sat.forward_impute(tape, x, training, rng)
                for sat, x in zip(self.sats, xs_masked)]

    def predict_proba(self, xs) -> np.ndarray:
        """Ensemble class probabilities (batch, 2); rows sum to 1."""
        tape = Tape()
        mean_logits = self.forward_classify(tape, xs, training=False)
        return softmax(tape, mean_logits).value


def add_nodes(tape: Tape, nodes: list[Node]) -> Node:
    total = nodes[0]
    for node in nodes[1:]:
        total = add(tape, total, node)
    return total


def transfer_pretrained(model: MetaFormerModel, rng: np.random.Generator) -> MetaFormerModel:
    """Pretrain -> classification transfer for the whole ensemble: trunks are
    copied bit-exact, imputation heads dropped, classification heads freshly
    initialized with zero biases. Everything stays trainable."""
    return MetaFormerModel(tuple(sat.transfer_pretrained(rng) for sat in model.sats))
