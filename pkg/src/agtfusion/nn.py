"""Transformer building blocks: multi-head self-attention, the context-based
transformer (CBT) block and adaptive multimodal fusion (AMF) gating.

All blocks accept an optional leading batch axis: ``x`` may be
``[seq, d_model]`` or ``[batch, seq, d_model]``.  No positional encoding is
applied anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError

__all__ = [
    "AttentionParams",
    "CbtBlockParams",
    "AmfParams",
    "multi_head_self_attention",
    "cbt_forward",
    "amf_gate",
    "cosine_similarity_matrix",
    "init_attention",
    "init_cbt_block",
]


@dataclass(frozen=True)
class AttentionParams:
    """Projection matrices for ``n_heads`` heads stored side by side.

    Head ``h`` uses columns ``h*d_head:(h+1)*d_head`` of ``w_q``, ``w_k``
    and ``w_v``; ``w_o`` maps the concatenated heads back to ``d_model``.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    n_heads: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            if getattr(self, name).shape != (d, d):
                raise DimensionError(f"AttentionParams.{name} must be ({d}, {d}), got {getattr(self, name).shape}")
        if self.n_heads < 1 or d % self.n_heads:
            raise ConfigError(f"d_model={d} is not divisible by n_heads={self.n_heads}")

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def from_mapping(cls, p: Mapping[str, Tensor], prefix: str, n_heads: int) -> AttentionParams:
        return cls(p[prefix + "w_q"], p[prefix + "w_k"], p[prefix + "w_v"], p[prefix + "w_o"], n_heads)


@dataclass(frozen=True)
class CbtBlockParams:
    attn: AttentionParams
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor

    def __post_init__(self):
        d = self.attn.d_model
        d_ff = self.ff_w1.shape[-1]
        if d_ff < d:
            raise ConfigError(f"d_ff={d_ff} must be >= d_model={d}")
        expected = {
            "ln1_gamma": (d,), "ln1_beta": (d,), "ln2_gamma": (d,), "ln2_beta": (d,),
            "ff_w1": (d, d_ff), "ff_b1": (d_ff,), "ff_w2": (d_ff, d), "ff_b2": (d,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"CbtBlockParams.{name}: expected {shape}, got {getattr(self, name).shape}")

    @classmethod
    def from_mapping(cls, p: Mapping[str, Tensor], prefix: str, n_heads: int) -> CbtBlockParams:
        return cls(
            AttentionParams.from_mapping(p, prefix + "attn.", n_heads),
            *(p[prefix + k] for k in (
                "ln1.gamma", "ln1.beta", "ln2.gamma", "ln2.beta", "ff.w1", "ff.b1", "ff.w2", "ff.b2",
            )),
        )


@dataclass(frozen=True)
class AmfParams:
    """Gating threshold and optional per-stream projections to a shared width."""

    threshold: float = 0.2
    projections: tuple[Tensor, ...] | None = None

    def __post_init__(self):
        if not -1.0 <= self.threshold <= 1.0:
            raise ConfigError(f"AMF similarity threshold must lie in [-1, 1], got {self.threshold}")


def init_attention(rng: np.random.Generator, d_model: int, prefix: str = "") -> dict[str, np.ndarray]:
    std = math.sqrt(1.0 / d_model)
    return {prefix + k: rng.normal(0.0, std, (d_model, d_model)) for k in ("w_q", "w_k", "w_v", "w_o")}


def init_cbt_block(rng: np.random.Generator, d_model: int, d_ff: int, prefix: str = "") -> dict[str, np.ndarray]:
    p = init_attention(rng, d_model, prefix + "attn.")
    p[prefix + "ln1.gamma"] = np.ones(d_model)
    p[prefix + "ln1.beta"] = np.zeros(d_model)
    p[prefix + "ln2.gamma"] = np.ones(d_model)
    p[prefix + "ln2.beta"] = np.zeros(d_model)
    p[prefix + "ff.w1"] = rng.normal(0.0, math.sqrt(2.0 / (d_model + d_ff)), (d_model, d_ff))
    p[prefix + "ff.b1"] = np.zeros(d_ff)
    p[prefix + "ff.w2"] = rng.normal(0.0, math.sqrt(2.0 / (d_model + d_ff)), (d_ff, d_model))
    p[prefix + "ff.b2"] = np.zeros(d_model)
    return p


def multi_head_self_attention(x: Tensor, p: AttentionParams) -> Tensor:
    """Scaled dot-product self-attention with ``p.n_heads`` heads."""
    x = ad.as_tensor(x)
    if x.ndim not in (2, 3) or x.shape[-1] != p.d_model:
        raise DimensionError(f"attention input must be [..., seq, {p.d_model}], got {x.shape}")
    if x.shape[-2] < 1:
        raise DimensionError("attention needs seq >= 1")
    lead = x.shape[:-2]
    seq, d = x.shape[-2:]
    h = p.n_heads
    dh = d // h

    def heads(t: Tensor) -> Tensor:
        # [..., seq, d] -> [..., h, seq, dh]
        return ad.swapaxes(t.reshape(lead + (seq, h, dh)), -3, -2)

    q, k, v = heads(x @ p.w_q), heads(x @ p.w_k), heads(x @ p.w_v)
    scores = (q @ k.T) * (1.0 / math.sqrt(dh))
    weights = ad.softmax(scores, axis=-1)
    ctx = ad.swapaxes(weights @ v, -3, -2).reshape(lead + (seq, d))
    return ctx @ p.w_o


def cbt_forward(x: Tensor, p: CbtBlockParams, eps: float = 1e-5) -> Tensor:
    """Pre-norm residual block: ``h = x + MHSA(LN(x))``, ``out = h + FFN(LN(h))``."""
    x = ad.as_tensor(x)
    h = x + multi_head_self_attention(ad.layer_norm(x, p.ln1_gamma, p.ln1_beta, eps), p.attn)
    z = ad.layer_norm(h, p.ln2_gamma, p.ln2_beta, eps)
    ff = ad.gelu(z @ p.ff_w1 + p.ff_b1) @ p.ff_w2 + p.ff_b2
    return h + ff


def cosine_similarity_matrix(vectors: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity over the second-to-last axis.

    ``vectors`` is ``[..., n, d]``; zero-norm vectors get similarity 0 with
    everything.
    """
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    unit = np.where(norms > 0, vectors / safe, 0.0)
    return unit @ np.swapaxes(unit, -1, -2)


def amf_gate(streams: Sequence[Tensor], p: AmfParams | None = None) -> tuple[Tensor, np.ndarray]:
    """Zero out streams that disagree with every other stream, then sum.

    Stream ``i`` is kept when its best cosine similarity to any other stream
    reaches ``p.threshold``.  If that would drop every stream, all are kept.
    Streams are ``[d]`` or ``[batch, d]``; the returned mask has shape
    ``[n_streams]`` or ``[n_streams, batch]`` and is not differentiated
    through.
    """
    p = p or AmfParams()
    streams = [ad.as_tensor(s) for s in streams]
    if len(streams) < 2:
        raise DimensionError("amf_gate needs at least two streams")
    if p.projections is not None:
        if len(p.projections) != len(streams):
            raise DimensionError(f"{len(p.projections)} projections for {len(streams)} streams")
        streams = [s @ w for s, w in zip(streams, p.projections)]
    if len({s.shape for s in streams}) != 1 or streams[0].ndim not in (1, 2):
        raise DimensionError(f"amf_gate streams must share a [d] or [batch, d] shape: {[s.shape for s in streams]}")

    single = streams[0].ndim == 1
    stacked = np.stack([s.data for s in streams], axis=-2)  # [..., n, d]
    sims = cosine_similarity_matrix(stacked)
    n = len(streams)
    off_diag = np.where(np.eye(n, dtype=bool), -np.inf, sims)
    best = off_diag.max(axis=-1)  # [..., n]
    mask = (best >= p.threshold).astype(np.int64)
    none_kept = mask.sum(axis=-1, keepdims=True) == 0
    mask = np.where(none_kept, 1, mask)
    mask = mask if single else mask.T  # -> [n] or [n, batch]

    fused = None
    for i, s in enumerate(streams):
        m = float(mask[i]) if single else mask[i].astype(np.float64)[:, None]
        term = s * m
        fused = term if fused is None else fused + term
    return fused, mask
