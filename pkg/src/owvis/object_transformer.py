"""Pixel encoder, masked-attention query decoder and per-query prediction heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import MLP, LayerNorm, Linear, Module, Parameter, ShapeError, Tensor
from .rng import SplitMix64

OPEN, CLOSED = "open", "closed"


def sinusoidal_positions(T: int, Hf: int, Wf: int, C: int) -> np.ndarray:
    """Fixed (T, Hf, Wf, C) encoding; channels split across y, x and t."""
    cs = max(2, (C // 3) // 2 * 2)
    ct = C - 2 * cs

    def bands(coord, n):
        k = n // 2
        freqs = np.pi * 2.0 ** np.arange(k)
        ang = coord[..., None] * freqs
        enc = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
        return enc if enc.shape[-1] == n else np.concatenate([enc, np.zeros(coord.shape + (n - enc.shape[-1],))], axis=-1)

    t, y, x = np.meshgrid(
        np.arange(T) / max(T, 1), (np.arange(Hf) + 0.5) / Hf, (np.arange(Wf) + 0.5) / Wf, indexing="ij"
    )
    return np.concatenate([bands(y, cs), bands(x, cs), bands(t * 2.0 - 0.5, ct)], axis=-1)


@dataclass
class FeatureMap:
    feat: Tensor  # (T, Hf, Wf, C)
    pos: np.ndarray  # (T, Hf, Wf, C)
    stride: int

    @property
    def grid(self) -> tuple[int, int, int]:
        T, Hf, Wf, _ = self.feat.shape
        return T, Hf, Wf

    def memory(self) -> Tensor:
        """Flattened (T*Hf*Wf, C) keys/values, time-major then row-major."""
        T, Hf, Wf, C = self.feat.shape
        return nx.reshape(self.feat + Tensor(self.pos), (T * Hf * Wf, C))


@dataclass
class QuerySet:
    q_obj: Tensor  # (N_ow + N_cw, C), open rows first
    n_ow: int
    n_cw: int
    layer_index: int = 0

    @property
    def origin(self) -> list[str]:
        return [OPEN] * self.n_ow + [CLOSED] * self.n_cw


@dataclass
class PredictionSet:
    n_ow: int
    n_cw: int
    obj_logits: Tensor | None  # (N_ow,) objectness for open rows
    class_logits: Tensor | None  # (N_cw, K+1) for closed rows, last column is no-object
    mask_logits: Tensor  # (N, T*Hf*Wf)
    boxes: Tensor  # (N, 4) in [0, 1]
    grid: tuple  # (T, Hf, Wf)

    @property
    def origin(self) -> list[str]:
        return [OPEN] * self.n_ow + [CLOSED] * self.n_cw

    def binary_masks(self) -> np.ndarray:
        """(N, T, Hf, Wf) bool, sigmoid(logit) > 0.5."""
        return (self.mask_logits.data > 0).reshape((-1,) + tuple(self.grid))

    def mask_probs(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.mask_logits.data.astype(np.float64)))

    def class_probs(self) -> np.ndarray | None:
        if self.class_logits is None:
            return None
        z = self.class_logits.data.astype(np.float64)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def objectness(self) -> np.ndarray | None:
        if self.obj_logits is None:
            return None
        return 1.0 / (1.0 + np.exp(-self.obj_logits.data.astype(np.float64)))

    def confidences(self) -> np.ndarray:
        """Sigmoid objectness for open rows, max non-background class prob for closed rows."""
        out = []
        if self.n_ow:
            out.append(self.objectness())
        if self.n_cw:
            out.append(self.class_probs()[:, :-1].max(axis=1))
        return np.concatenate(out) if out else np.zeros(0)

    def labels(self) -> np.ndarray:
        """Closed rows: argmax non-background class; open rows: -1 (unknown)."""
        lab = np.full(self.n_ow + self.n_cw, -1, dtype=np.int64)
        if self.n_cw:
            lab[self.n_ow:] = self.class_probs()[:, :-1].argmax(axis=1)
        return lab


class Conv(Module):
    """k x k convolution over NHWC tensors with replicate padding."""

    def __init__(self, rng: SplitMix64, c_in: int, c_out: int, k: int = 3, stride: int = 1):
        self.k, self.stride = k, stride
        self.lin = Linear(rng, k * k * c_in, c_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin(nx.im2col(nx.pad_edge(x, self.k // 2), self.k, self.stride))


class PixelEncoder(Module):
    """Two stride-2 conv blocks and one stride-1 block: stride 4 overall."""

    stride = 4

    def __init__(self, rng: SplitMix64, dim: int):
        half = max(dim // 2, 4)
        self.c1 = Conv(rng, 3, half, 3, 2)
        self.c2 = Conv(rng, half, dim, 3, 2)
        self.c3 = Conv(rng, dim, dim, 3, 1)
        self.norm = LayerNorm(dim)

    def __call__(self, frames) -> FeatureMap:
        x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames))
        T, H, W, _ = x.shape
        if H % self.stride or W % self.stride:
            raise ShapeError(f"frame size {H}x{W} not divisible by stride {self.stride}")
        h = nx.gelu(self.c1(x - 0.5))
        h = nx.gelu(self.c2(h))
        h = self.norm(h + nx.gelu(self.c3(h)))
        C = h.shape[-1]
        return FeatureMap(h, sinusoidal_positions(T, H // self.stride, W // self.stride, C), self.stride)


def pixel_encoder(encoder: PixelEncoder, frames) -> FeatureMap:
    return encoder(frames)


class Attention(Module):
    """Single-head attention block with output projection; scale folded into Q."""

    def __init__(self, rng: SplitMix64, dim: int):
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.o = Linear(rng, dim, dim)
        self.scale = 1.0 / math.sqrt(dim)

    def __call__(self, x: Tensor, mem: Tensor, add_mask=None) -> Tensor:
        return self.o(nx.attention(self.q(x) * self.scale, self.k(mem), self.v(mem), add_mask))


class DecoderLayer(Module):
    """Masked cross-attention, self-attention over all queries, feed-forward (post-norm)."""

    def __init__(self, rng: SplitMix64, dim: int):
        self.cross = Attention(rng, dim)
        self.ln1 = LayerNorm(dim)
        self.self_attn = Attention(rng, dim)
        self.ln2 = LayerNorm(dim)
        self.ffn = MLP(rng, [dim, 2 * dim, dim])
        self.ln3 = LayerNorm(dim)

    def __call__(self, q: Tensor, mem: Tensor, add_mask=None) -> Tensor:
        q = self.ln1(q + self.cross(q, mem, add_mask))
        q = self.ln2(q + self.self_attn(q, q))
        return self.ln3(q + self.ffn(q))


def decoder_layer(layer: DecoderLayer, qs: QuerySet, fm: FeatureMap, attn_mask=None) -> QuerySet:
    q = layer(qs.q_obj, fm.memory(), attn_mask)
    return QuerySet(q, qs.n_ow, qs.n_cw, qs.layer_index + 1)


class Heads(Module):
    def __init__(self, rng: SplitMix64, dim: int, num_classes: int):
        self.norm = LayerNorm(dim)
        self.cls_cw = Linear(rng, dim, num_classes + 1)
        self.cls_ow = Linear(rng, dim, 1)
        self.mask_embed = MLP(rng, [dim, dim, dim])
        self.box = MLP(rng, [dim, dim, 4])


def predict_heads(heads: Heads, qs: QuerySet, fm: FeatureMap, mem: Tensor | None = None) -> PredictionSet:
    mem = fm.memory() if mem is None else mem
    qn = heads.norm(qs.q_obj)
    obj = cls = None
    if qs.n_ow:
        obj = nx.reshape(heads.cls_ow(qn[: qs.n_ow]), (qs.n_ow,))
    if qs.n_cw:
        cls = heads.cls_cw(qn[qs.n_ow:])
    emb = heads.mask_embed(qn) * (1.0 / math.sqrt(mem.shape[-1]))
    mask_logits = emb @ nx.transpose(mem)
    boxes = nx.sigmoid(heads.box(qn))
    return PredictionSet(qs.n_ow, qs.n_cw, obj, cls, mask_logits, boxes, fm.grid)


def attention_mask_from(preds: PredictionSet) -> np.ndarray:
    """Additive (N, M) mask: 0 inside the predicted mask, -inf outside; empty rows attend everywhere."""
    inside = preds.mask_logits.data > 0
    mask = np.where(inside, 0.0, -np.inf)
    mask[~inside.any(axis=1)] = 0.0
    return mask
