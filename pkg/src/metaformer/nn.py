"""Dense layers with reverse-mode gradients.

A define-by-run tape: each op computes its forward value on numpy arrays and
records a closure that, replayed in reverse execution order, accumulates
gradients into its inputs (a Wengert list). Attention and the encoder layer
are compositions of the recorded primitives, so their backward passes come
for free once the primitives are right. 64-bit precision is the default;
models can be built in 32-bit for cheaper training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ShapeMismatchError

LAYER_NORM_EPS = 1e-5


class Node:
    """A value in the computation graph with a slot for its gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape


class Parameter(Node):
    """A named trainable tensor. `decay` marks it as subject to weight decay
    (true for weight matrices, false for biases and layer-norm gain/bias)."""

    __slots__ = ("name", "decay")

    def __init__(self, name: str, value, decay: bool):
        super().__init__(value)
        self.name = name
        self.decay = decay


class Tape:
    """Execution-ordered record of backward closures."""

    __slots__ = ("_records",)

    def __init__(self):
        self._records = []

    def record(self, fn):
        self._records.append(fn)

    def backward(self, loss: Node):
        if loss.value.ndim != 0:
            raise ShapeMismatchError("backward starts from a scalar loss")
        loss.grad = np.ones_like(loss.value)
        for fn in reversed(self._records):
            fn()


def _acc(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = np.array(g)
    else:
        node.grad = node.grad + g


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- initialization ---

def he_init(shape: tuple, fan_in: int, rng: np.random.Generator,
            dtype=np.float64) -> np.ndarray:
    """Gaussian fan-in initialization: entries i.i.d. N(0, 2/fan_in)."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return (rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)).astype(dtype)


def zeros_init(shape: tuple, dtype=np.float64) -> np.ndarray:
    return np.zeros(shape, dtype=dtype)


def ones_init(shape: tuple, dtype=np.float64) -> np.ndarray:
    return np.ones(shape, dtype=dtype)


# --- primitives ---

def matmul(tape: Tape, a: Node, b: Node) -> Node:
    if a.value.shape[-1] != b.value.shape[-2 if b.value.ndim > 1 else 0]:
        raise ShapeMismatchError(f"matmul {a.value.shape} @ {b.value.shape}")
    out = Node(a.value @ b.value)

    def bw():
        if out.grad is None:
            return
        _acc(a, _unbroadcast(out.grad @ _swap(b.value), a.value.shape))
        _acc(b, _unbroadcast(_swap(a.value) @ out.grad, b.value.shape))

    tape.record(bw)
    return out


def add(tape: Tape, a: Node, b: Node) -> Node:
    out = Node(a.value + b.value)

    def bw():
        if out.grad is None:
            return
        _acc(a, _unbroadcast(out.grad, a.value.shape))
        _acc(b, _unbroadcast(out.grad, b.value.shape))

    tape.record(bw)
    return out


def scale(tape: Tape, x: Node, s: float) -> Node:
    out = Node(x.value * s)

    def bw():
        if out.grad is None:
            return
        _acc(x, out.grad * s)

    tape.record(bw)
    return out


def reshape(tape: Tape, x: Node, shape: tuple) -> Node:
    out = Node(x.value.reshape(shape))

    def bw():
        if out.grad is None:
            return
        _acc(x, out.grad.reshape(x.value.shape))

    tape.record(bw)
    return out


def transpose(tape: Tape, x: Node, axes: tuple) -> Node:
    out = Node(np.transpose(x.value, axes))
    inverse = np.argsort(axes)

    def bw():
        if out.grad is None:
            return
        _acc(x, np.transpose(out.grad, inverse))

    tape.record(bw)
    return out


def linear(tape: Tape, x: Node, w: Node, b: Node) -> Node:
    """Affine map y = x @ w + b over the last axis."""
    return add(tape, matmul(tape, x, w), b)


def gelu(tape: Tape, x: Node) -> Node:
    """Exact-erf Gaussian error linear unit: y = x * Phi(x)."""
    v = x.value
    cdf = 0.5 * (1.0 + erf(v / math.sqrt(2.0)))
    out = Node(v * cdf)

    def bw():
        if out.grad is None:
            return
        pdf = np.exp(-0.5 * v * v) / math.sqrt(2.0 * math.pi)
        _acc(x, out.grad * (cdf + v * pdf))

    tape.record(bw)
    return out


def softmax(tape: Tape, x: Node) -> Node:
    """Row-stochastic softmax over the last axis, max-subtracted for stability."""
    v = x.value
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Node(y)

    def bw():
        if out.grad is None:
            return
        dot = (out.grad * y).sum(axis=-1, keepdims=True)
        _acc(x, y * (out.grad - dot))

    tape.record(bw)
    return out


def layer_norm(tape: Tape, x: Node, gain: Node, bias: Node,
               eps: float = LAYER_NORM_EPS) -> Node:
    """Per-row normalization over the last axis followed by affine gain/bias."""
    v = x.value
    mu = v.mean(axis=-1, keepdims=True)
    var = ((v - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (v - mu) * inv
    out = Node(gain.value * xhat + bias.value)

    def bw():
        if out.grad is None:
            return
        dxhat = out.grad * gain.value
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _acc(x, (dxhat - m1 - xhat * m2) * inv)
        _acc(gain, _unbroadcast(out.grad * xhat, gain.value.shape))
        _acc(bias, _unbroadcast(out.grad, bias.value.shape))

    tape.record(bw)
    return out


def dropout(tape: Tape, x: Node, rate: float, training: bool,
            rng: np.random.Generator | None = None) -> Node:
    """Inverted dropout. Evaluation mode (and rate 0) is the exact identity:
    the input node is returned untouched."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = ((rng.random(x.value.shape) >= rate) / (1.0 - rate)).astype(
        x.value.dtype, copy=False)
    out = Node(x.value * keep)

    def bw():
        if out.grad is None:
            return
        _acc(x, out.grad * keep)

    tape.record(bw)
    return out


def weighted_sum(tape: Tape, x: Node, weights: np.ndarray) -> Node:
    """Scalar projection sum(x * weights); reduces any op output to a scalar
    so its gradient can be finite-difference checked."""
    weights = np.asarray(weights)
    out = Node(np.asarray((x.value * weights).sum()))

    def bw():
        if out.grad is None:
            return
        _acc(x, out.grad * weights)

    tape.record(bw)
    return out


# --- attention and the encoder layer ---

@dataclass
class EncoderLayerWeights:
    """All parameters of one encoder layer: fused QKV/output projections,
    the two-layer feed-forward, and two layer norms."""

    wq: Parameter
    bq: Parameter
    wk: Parameter
    bk: Parameter
    wv: Parameter
    bv: Parameter
    wo: Parameter
    bo: Parameter
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter
    ln1_g: Parameter
    ln1_b: Parameter
    ln2_g: Parameter
    ln2_b: Parameter

    @staticmethod
    def build(prefix: str, d_model: int, d_ff: int, rng: np.random.Generator,
              dtype=np.float64) -> "EncoderLayerWeights":
        def w(name, shape, fan_in):
            return Parameter(f"{prefix}.{name}", he_init(shape, fan_in, rng, dtype), decay=True)

        def b(name, shape):
            return Parameter(f"{prefix}.{name}", zeros_init(shape, dtype), decay=False)

        def g(name, shape):
            return Parameter(f"{prefix}.{name}", ones_init(shape, dtype), decay=False)

        return EncoderLayerWeights(
            wq=w("attn.Wq", (d_model, d_model), d_model), bq=b("attn.bq", (d_model,)),
            wk=w("attn.Wk", (d_model, d_model), d_model), bk=b("attn.bk", (d_model,)),
            wv=w("attn.Wv", (d_model, d_model), d_model), bv=b("attn.bv", (d_model,)),
            wo=w("attn.Wo", (d_model, d_model), d_model), bo=b("attn.bo", (d_model,)),
            w1=w("ffn.W1", (d_model, d_ff), d_model), b1=b("ffn.b1", (d_ff,)),
            w2=w("ffn.W2", (d_ff, d_model), d_ff), b2=b("ffn.b2", (d_model,)),
            ln1_g=g("ln1.g", (d_model,)), ln1_b=b("ln1.b", (d_model,)),
            ln2_g=g("ln2.g", (d_model,)), ln2_b=b("ln2.b", (d_model,)),
        )

    def params(self) -> list[Parameter]:
        return [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
                self.w1, self.b1, self.w2, self.b2,
                self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b]


def multi_head_attention(tape: Tape, x: Node, w: EncoderLayerWeights, n_heads: int,
                         return_weights: bool = False):
    """Scaled dot-product self-attention over (batch, length, d_model) input,
    scores scaled by 1/sqrt(head_dim)."""
    batch, length, d_model = x.value.shape
    if d_model % n_heads != 0:
        raise ShapeMismatchError(f"n_heads {n_heads} must divide d_model {d_model}")
    head_dim = d_model // n_heads

    def split_heads(t: Node) -> Node:
        t = reshape(tape, t, (batch, length, n_heads, head_dim))
        return transpose(tape, t, (0, 2, 1, 3))

    q = split_heads(linear(tape, x, w.wq, w.bq))
    k = split_heads(linear(tape, x, w.wk, w.bk))
    v = split_heads(linear(tape, x, w.wv, w.bv))

    scores = scale(tape, matmul(tape, q, transpose(tape, k, (0, 1, 3, 2))),
                   1.0 / math.sqrt(head_dim))
    attn = softmax(tape, scores)
    ctx = matmul(tape, attn, v)
    ctx = reshape(tape, transpose(tape, ctx, (0, 2, 1, 3)), (batch, length, d_model))
    out = linear(tape, ctx, w.wo, w.bo)
    if return_weights:
        return out, attn
    return out


def encoder_layer(tape: Tape, x: Node, w: EncoderLayerWeights, n_heads: int,
                  dropout_rate: float, training: bool,
                  rng: np.random.Generator | None = None) -> Node:
    """Post-norm residual wiring:
    x1 = LN(x + Drop(MHA(x))); y = LN(x1 + Drop(W2 gelu(W1 x1)))."""
    a = multi_head_attention(tape, x, w, n_heads)
    x1 = layer_norm(tape, add(tape, x, dropout(tape, a, dropout_rate, training, rng)),
                    w.ln1_g, w.ln1_b)
    f = linear(tape, gelu(tape, linear(tape, x1, w.w1, w.b1)), w.w2, w.b2)
    return layer_norm(tape, add(tape, x1, dropout(tape, f, dropout_rate, training, rng)),
                      w.ln2_g, w.ln2_b)


# --- finite-difference oracle ---

def grad_check(f, inputs: list[np.ndarray], eps: float = 1e-5,
               zero_atol: float = 0.0) -> float:
    """Compare analytic gradients against central finite differences.

    `f` maps a list of arrays to (scalar_value, [gradient per input]); only
    the value is used for the difference quotients. Returns the max over all
    coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).

    Coordinates where both sides agree the gradient is zero (|analytic| and
    |numeric| below `zero_atol`) are skipped: at an exactly-zero gradient
    (e.g. the key bias, a shift-invariant direction of softmax attention) the
    difference quotient is pure cancellation noise around 1e-11 and the
    relative-error formula would report that noise, not a defect.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    _, grads = f(inputs)
    worst = 0.0
    for i, x in enumerate(inputs):
        flat = x.reshape(-1)
        gflat = np.asarray(grads[i]).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp, _ = f(inputs)
            flat[j] = orig - eps
            fm, _ = f(inputs)
            flat[j] = orig
            numeric = (fp - fm) / (2.0 * eps)
            analytic = gflat[j]
            if abs(analytic) < zero_atol and abs(numeric) < zero_atol:
                continue
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
