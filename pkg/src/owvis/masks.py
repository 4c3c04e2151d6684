"""Binary mask helpers: run-length encoding, IoU, tight boxes."""

from __future__ import annotations

import numpy as np


def rle_encode(mask: np.ndarray) -> dict:
    """Row-major RLE; counts alternate zero-run/one-run and start with zeros."""
    mask = np.asarray(mask, dtype=bool)
    flat = mask.reshape(-1)
    if flat.size == 0:
        return {"size": list(mask.shape), "counts": []}
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(edges).tolist()
    if flat[0]:
        runs = [0] + runs
    return {"size": list(mask.shape), "counts": [int(r) for r in runs]}


def rle_decode(rle: dict) -> np.ndarray:
    shape = tuple(rle["size"])
    counts = rle["counts"]
    n = int(np.prod(shape))
    if sum(counts) != n:
        raise ValueError(f"RLE counts sum to {sum(counts)}, expected {n}")
    vals = np.arange(len(counts)) % 2 == 1
    return np.repeat(vals, counts).reshape(shape)


def tight_box(mask: np.ndarray) -> list[float] | None:
    """(cx, cy, w, h) normalized to [0, 1]; None for an empty mask."""
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    y0, y1 = rows[0], rows[-1] + 1
    x0, x1 = cols[0], cols[-1] + 1
    return [(x0 + x1) / 2 / W, (y0 + y1) / 2 / H, (x1 - x0) / W, (y1 - y0) / H]


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU between two stacks of masks, (n, ...) x (m, ...) -> (n, m)."""
    a = np.asarray(a, dtype=bool).reshape(len(a), -1).astype(np.float64)
    b = np.asarray(b, dtype=bool).reshape(len(b), -1).astype(np.float64)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    inter = a @ b.T
    union = a.sum(1)[:, None] + b.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    return iou


def downsample_soft(mask: np.ndarray, stride: int) -> np.ndarray:
    """Area fraction of each stride x stride block, (..., H, W) -> (..., H/s, W/s)."""
    m = np.asarray(mask, dtype=np.float64)
    *lead, H, W = m.shape
    return m.reshape(*lead, H // stride, stride, W // stride, stride).mean(axis=(-3, -1))


def upsample_logits(logits: np.ndarray, stride: int) -> np.ndarray:
    """Bilinear upsampling (half-pixel centers) of (..., h, w) logits by ``stride``."""
    *lead, h, w = logits.shape

    def axis_weights(n):
        pos = (np.arange(n * stride) + 0.5) / stride - 0.5
        pos = np.clip(pos, 0, n - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n - 1)
        frac = pos - lo
        M = np.zeros((n * stride, n))
        M[np.arange(n * stride), lo] += 1 - frac
        M[np.arange(n * stride), hi] += frac
        return M

    Mh, Mw = axis_weights(h), axis_weights(w)
    return np.einsum("ih,...hw,jw->...ij", Mh, logits, Mw)
