"""Object-centric captioning: masked object-to-text transformer plus a small decoder.

Each object query is stacked on top of the shared learnt text embeddings and
refined against the clip features. The cross-attention of every layer is
restricted to the object's predicted mask:

    X_l = softmax(mask + Q_l K_l^T) V_l + X_{l-1}

followed by self-attention over the stacked rows and a feed-forward block.
The refined rows are the prefix the caption decoder attends to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import MLP, LayerNorm, Linear, Module, Parameter, Tensor
from .object_transformer import Attention
from .rng import SplitMix64
from .synthworld import COLORS, DIRECTIONS, SHAPES

SPECIAL = ("<bos>", "<eos>", "<pad>", "<unk>")
BOS, EOS, PAD, UNK = 0, 1, 2, 3
_FILLER = ("a", "moving", "the", "object", "small", "large", "shape", "and", "is")


class Vocabulary:
    def __init__(self, tokens=None):
        if tokens is None:
            tokens = list(SPECIAL) + list(_FILLER) + list(COLORS) + list(SHAPES) + list(DIRECTIONS)
        tokens = list(tokens)
        if tokens[:3] != list(SPECIAL[:3]):
            raise ValueError("vocabulary must start with <bos>, <eos>, <pad>")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate vocabulary tokens")
        self.tokens = tokens
        self._ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    def token_id(self, word: str) -> int:
        return self._ids.get(word, UNK)

    def encode(self, words, add_eos: bool = True) -> list[int]:
        ids = [self.token_id(w) for w in words]
        return ids + [EOS] if add_eos else ids

    def decode(self, ids) -> list[str]:
        """Token ids to words, dropping specials and stopping at EOS."""
        out = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (BOS, PAD):
                continue
            out.append(self.tokens[i])
        return out


def build_attention_mask(mask_bin: np.ndarray) -> np.ndarray:
    """(T, Hf, Wf) binary mask -> (1, T*Hf*Wf) additive mask of 0 / -inf.

    An all-zero mask gives an all-zero additive mask (attend everywhere).
    """
    m = np.asarray(mask_bin, dtype=bool).reshape(1, -1)
    if not m.any():
        return np.zeros(m.shape)
    return np.where(m, 0.0, -np.inf)


class ObjectToTextLayer(Module):
    def __init__(self, rng: SplitMix64, dim: int):
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, dim, dim)
        self.wv = Linear(rng, dim, dim)
        self.scale = 1.0 / math.sqrt(dim)
        self.ln_sa = LayerNorm(dim)
        self.self_attn = Attention(rng, dim)
        self.ln_ff = LayerNorm(dim)
        self.ffn = MLP(rng, [dim, 2 * dim, dim])

    def cross_term(self, X: Tensor, mem: Tensor, add_mask) -> Tensor:
        """softmax(mask + Q K^T) V for (B, R, C) rows against (M, C) features."""
        return nx.attention(self.wq(X) * self.scale, self.wk(mem), self.wv(mem), add_mask)

    def __call__(self, X: Tensor, mem: Tensor, add_mask) -> Tensor:
        X = X + self.cross_term(X, mem, add_mask)
        h = self.ln_sa(X)
        X = X + self.self_attn(h, h)
        return X + self.ffn(self.ln_ff(X))


class CaptionHead(Module):
    def __init__(self, rng: SplitMix64, dim: int, n_text: int, layers: int):
        self.e_text = Parameter(rng.normal((n_text, dim)) * 0.5)
        self.layers = [ObjectToTextLayer(rng, dim) for _ in range(layers)]

    @property
    def n_text(self) -> int:
        return self.e_text.shape[0]

    def initial_state(self, q_obj: Tensor) -> Tensor:
        """(B, C) object queries -> (B, N_text+1, C) with row 0 the query."""
        B, C = q_obj.shape
        text = nx.stack([self.e_text] * B, axis=0)
        return nx.concat([nx.reshape(q_obj, (B, 1, C)), text], axis=1)


def object_to_text_forward(head: CaptionHead, q_obj: Tensor, mem: Tensor, add_masks) -> Tensor:
    """Refine [q_obj_i, e_text] for a batch of objects.

    q_obj: (B, C); mem: (M, C) flattened clip features; add_masks: (B, M)
    additive masks (or None for unmasked attention), shared by all rows of
    an object. Returns (B, N_text+1, C).
    """
    X = head.initial_state(q_obj)
    mask = None if add_masks is None else np.asarray(add_masks)[:, None, :]
    for layer in head.layers:
        X = layer(X, mem, mask)
    return X


class CaptionDecoder(Module):
    """One causal self-attention block that cross-attends to the text-query prefix."""

    def __init__(self, rng: SplitMix64, dim: int, vocab_size: int, max_len: int, mode: str = "trainable"):
        if mode not in ("trainable", "frozen-random"):
            raise ValueError(f"decoder mode must be 'trainable' or 'frozen-random', got {mode!r}")
        self.mode = mode
        self.tok = Parameter(rng.normal((vocab_size, dim)) * 0.5)
        self.pos = Parameter(rng.normal((max_len + 1, dim)) * 0.1)
        self.ln1 = LayerNorm(dim)
        self.self_attn = Attention(rng, dim)
        self.ln2 = LayerNorm(dim)
        self.cross = Attention(rng, dim)
        self.ln3 = LayerNorm(dim)
        self.ffn = MLP(rng, [dim, 2 * dim, dim])
        self.ln_out = LayerNorm(dim)
        self.out = Linear(rng, dim, vocab_size)
        self.max_len = max_len
        if mode == "frozen-random":
            self.freeze()

    def __call__(self, q_text: Tensor, input_ids: np.ndarray) -> Tensor:
        """(B, R, C) prefix and (B, L) input ids -> (B, L, V) logits."""
        ids = np.asarray(input_ids, dtype=np.int64)
        B, L = ids.shape
        if L > self.pos.shape[0]:
            raise ValueError(f"sequence length {L} exceeds decoder maximum {self.pos.shape[0]}")
        x = self.tok[ids] + self.pos[np.arange(L)]
        causal = np.triu(np.full((L, L), -np.inf), k=1)
        h = self.ln1(x)
        x = x + self.self_attn(h, h, causal)
        x = x + self.cross(self.ln2(x), q_text)
        x = x + self.ffn(self.ln3(x))
        return self.out(self.ln_out(x))


def caption_logits(q_text: Tensor, decoder: CaptionDecoder, gt_tokens) -> list[Tensor]:
    """Teacher-forced logits, one (len(tokens), V) tensor per object.

    ``gt_tokens[b]`` is the target id sequence (EOS included); the decoder
    input is BOS followed by all targets but the last, so logits at position
    t depend only on targets before t.
    """
    V = decoder.out.W.shape[0]
    seqs = [np.asarray(t, dtype=np.int64) for t in gt_tokens]
    for s in seqs:
        if s.size and (s.min() < 0 or s.max() >= V):
            raise ValueError("unknown token id in caption")
    L = max(len(s) for s in seqs)
    inp = np.full((len(seqs), L), PAD, dtype=np.int64)
    for b, s in enumerate(seqs):
        inp[b, 0] = BOS
        inp[b, 1:len(s)] = s[:-1]
    logits = decoder(q_text, inp)
    return [logits[b, : len(s)] for b, s in enumerate(seqs)]


def decode_caption(q_text: Tensor, decoder: CaptionDecoder, max_len: int) -> list[list[int]]:
    """Greedy decoding from BOS for a batch of (R, C) prefixes; EOS is not returned."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    B = q_text.shape[0]
    seq = np.full((B, 1), BOS, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    out: list[list[int]] = [[] for _ in range(B)]
    with nx.no_grad():
        for _ in range(min(max_len, decoder.max_len)):
            logits = decoder(q_text, seq).data[:, -1]
            nxt = logits.argmax(axis=1)
            for b in range(B):
                if done[b]:
                    continue
                if nxt[b] == EOS:
                    done[b] = True
                else:
                    out[b].append(int(nxt[b]))
            if done.all():
                break
            seq = np.concatenate([seq, nxt[:, None]], axis=1)
    return out
