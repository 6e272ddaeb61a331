"""Neural-net building blocks on top of the autodiff tensors.

layer_norm / softmax / gelu carry hand-derived backward rules; attention and
the dilated causal convolution are composed from primitive ops so their
gradients come from the tape.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.special import erf

from .autodiff import (Tensor, _record, add, concat, matmul, scale, slice_axis,
                       transpose)
from .errors import ConfigError, ShapeError

SQRT2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last dimension, then apply elementwise gain and bias."""
    d = x.shape[-1]
    if d < 2:
        raise ShapeError(f"layer_norm: last dimension must be >= 2, got {d}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},)")
    mu = x.values.mean(axis=-1, keepdims=True)
    xc = x.values - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    values = xh * gain.values + bias.values

    def backward(g: np.ndarray):
        gx = None
        if x.requires_grad:
            dxh = g * gain.values
            a = dxh.mean(axis=-1, keepdims=True)
            b = (dxh * xh).mean(axis=-1, keepdims=True)
            gx = inv * (dxh - a - xh * b)
        gg = (g * xh).reshape(-1, d).sum(axis=0) if gain.requires_grad else None
        gb = g.reshape(-1, d).sum(axis=0) if bias.requires_grad else None
        return gx, gg, gb

    return _record("layer_norm", values, (x, gain, bias), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    values = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        inner = (g * values).sum(axis=axis, keepdims=True)
        return (values * (g - inner),)

    return _record("softmax", values, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact-erf GELU: x * Phi(x)."""
    phi_cdf = 0.5 * (1.0 + erf(x.values / SQRT2))
    values = x.values * phi_cdf

    def backward(g: np.ndarray):
        pdf = np.exp(-0.5 * x.values * x.values) * INV_SQRT_2PI
        return (g * (phi_cdf + x.values * pdf),)

    return _record("gelu", values, (x,), backward)


# ---------------------------------------------------------------------------
# Parameter containers and initialization
# ---------------------------------------------------------------------------

def uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...],
                 dtype=np.float64) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def linear_params(rng: np.random.Generator, d_in: int, d_out: int,
                  dtype=np.float64) -> tuple[Tensor, Tensor]:
    w = Tensor(uniform_init(rng, d_in, (d_in, d_out), dtype), requires_grad=True)
    b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)
    return w, b


def apply_linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    @staticmethod
    def init(rng: np.random.Generator, dim: int, dtype=np.float64) -> "AttentionParams":
        wq, bq = linear_params(rng, dim, dim, dtype)
        wk, bk = linear_params(rng, dim, dim, dtype)
        wv, bv = linear_params(rng, dim, dim, dtype)
        wo, bo = linear_params(rng, dim, dim, dtype)
        return AttentionParams(wq, bq, wk, bk, wv, bv, wo, bo)

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for key in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
            yield f"{prefix}.{key}", getattr(self, key)


def mhsa(x: Tensor, params: AttentionParams, heads: int) -> Tensor:
    """Multi-head self-attention over x of shape (tokens, dim)."""
    if x.values.ndim != 2:
        raise ShapeError(f"mhsa: expected (tokens, dim), got {x.shape}")
    n, d = x.shape
    if heads < 1 or d % heads != 0:
        raise ConfigError(f"mhsa: dim {d} not divisible by heads {heads}")
    dh = d // heads
    q = apply_linear(x, params.wq, params.bq)
    k = apply_linear(x, params.wk, params.bk)
    v = apply_linear(x, params.wv, params.bv)
    outs = []
    inv_sqrt_dh = 1.0 / np.sqrt(dh)
    for h in range(heads):
        qh = slice_axis(q, 1, h * dh, (h + 1) * dh)
        kh = slice_axis(k, 1, h * dh, (h + 1) * dh)
        vh = slice_axis(v, 1, h * dh, (h + 1) * dh)
        scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh)
        attn = softmax(scores, axis=-1)
        outs.append(matmul(attn, vh))
    merged = outs[0] if heads == 1 else concat(outs, axis=1)
    return apply_linear(merged, params.wo, params.bo)


@dataclass
class MLPParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @staticmethod
    def init(rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int,
             dtype=np.float64) -> "MLPParams":
        w1, b1 = linear_params(rng, d_in, d_hidden, dtype)
        w2, b2 = linear_params(rng, d_hidden, d_out, dtype)
        return MLPParams(w1, b1, w2, b2)

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for key in ("w1", "b1", "w2", "b2"):
            yield f"{prefix}.{key}", getattr(self, key)


def apply_mlp(x: Tensor, p: MLPParams) -> Tensor:
    return apply_linear(gelu(apply_linear(x, p.w1, p.b1)), p.w2, p.b2)


@dataclass
class Conv1dParams:
    """Dilated causal conv taps flattened to an im2col weight.

    weight rows are ordered tap-major: [tap 0 channels | tap 1 channels | ...]
    where tap k-1 aligns with the current time step.
    """

    weight: Tensor  # (kernel * c_in, c_out)
    bias: Tensor    # (c_out,)
    kernel: int
    c_in: int
    c_out: int

    @staticmethod
    def init(rng: np.random.Generator, kernel: int, c_in: int, c_out: int,
             dtype=np.float64) -> "Conv1dParams":
        if kernel < 1:
            raise ConfigError(f"conv1d: kernel must be >= 1, got {kernel}")
        w = Tensor(uniform_init(rng, kernel * c_in, (kernel * c_in, c_out), dtype),
                   requires_grad=True)
        b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        return Conv1dParams(w, b, kernel, c_in, c_out)

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


def dilated_conv1d(x: Tensor, params: Conv1dParams, dilation: int) -> Tensor:
    """Causal dilated 1-d convolution over x of shape (time, channels).

    Left-pads with (kernel-1)*dilation zeros so output has the same length
    and never looks ahead.
    """
    if x.values.ndim != 2:
        raise ShapeError(f"conv1d: expected (time, channels), got {x.shape}")
    t, c = x.shape
    if c != params.c_in:
        raise ShapeError(f"conv1d: input channels {c} != weight channels {params.c_in}")
    if dilation < 1:
        raise ConfigError(f"conv1d: dilation must be >= 1, got {dilation}")
    k = params.kernel
    pad = (k - 1) * dilation
    span = pad + 1
    if span > t + pad:  # only possible for empty input
        raise ConfigError(f"conv1d: kernel span {span} exceeds padded length {t + pad}")
    if t < 1:
        raise ConfigError("conv1d: input must have at least one time step")
    if k == 1:
        cols = x
    else:
        zeros = Tensor(np.zeros((pad, c), dtype=x.values.dtype))
        padded = concat([zeros, x], axis=0)
        taps = [slice_axis(padded, 0, i * dilation, i * dilation + t) for i in range(k)]
        cols = concat(taps, axis=1)
    return apply_linear(cols, params.weight, params.bias)


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    @staticmethod
    def init(dim: int, dtype=np.float64) -> "LayerNormParams":
        return LayerNormParams(Tensor(np.ones(dim, dtype=dtype), requires_grad=True),
                               Tensor(np.zeros(dim, dtype=dtype), requires_grad=True))

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.gain", self.gain
        yield f"{prefix}.bias", self.bias


@dataclass
class TransformerBlockParams:
    """Pre-LN block: x += MHSA(LN(x)); x += MLP(LN(x))."""

    ln1: LayerNormParams
    attn: AttentionParams
    ln2: LayerNormParams
    mlp: MLPParams

    @staticmethod
    def init(rng: np.random.Generator, dim: int, mlp_ratio: int,
             dtype=np.float64) -> "TransformerBlockParams":
        return TransformerBlockParams(
            LayerNormParams.init(dim, dtype),
            AttentionParams.init(rng, dim, dtype),
            LayerNormParams.init(dim, dtype),
            MLPParams.init(rng, dim, dim * mlp_ratio, dim, dtype),
        )

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.ln1.named(f"{prefix}.ln1")
        yield from self.attn.named(f"{prefix}.attn")
        yield from self.ln2.named(f"{prefix}.ln2")
        yield from self.mlp.named(f"{prefix}.mlp")


def apply_transformer_block(x: Tensor, p: TransformerBlockParams, heads: int) -> Tensor:
    x = add(x, mhsa(layer_norm(x, p.ln1.gain, p.ln1.bias), p.attn, heads))
    x = add(x, apply_mlp(layer_norm(x, p.ln2.gain, p.ln2.bias), p.mlp))
    return x
