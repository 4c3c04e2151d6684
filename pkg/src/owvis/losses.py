"""Training losses: open-world, closed-world, inter-query contrastive, caption, total."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .matching import Matching
from .numerics import Tensor


@dataclass
class LossWeights:
    ow: float = 1.0
    cw: float = 1.0
    cont: float = 0.1
    cap: float = 1.0
    # matching cost
    cost_cls: float = 2.0
    cost_bce: float = 5.0
    cost_dice: float = 5.0
    # detection loss terms
    det_bce: float = 1.0
    det_dice: float = 1.0
    noobj: float = 1.0
    cont_scope: str = "foreground"
    cont_normalize: bool = True
    det_mode: str = "mask"

    def __post_init__(self):
        for k in ("ow", "cw", "cont", "cap", "cost_cls", "cost_bce", "cost_dice", "det_bce", "det_dice", "noobj"):
            if getattr(self, k) < 0:
                raise ValueError(f"loss weight {k} must be nonnegative")
        if self.cont_scope not in ("foreground", "all"):
            raise ValueError(f"cont_scope must be 'foreground' or 'all', got {self.cont_scope!r}")
        if self.det_mode not in ("mask", "box"):
            raise ValueError(f"det_mode must be 'mask' or 'box', got {self.det_mode!r}")


def _zero() -> Tensor:
    return Tensor(np.zeros(()))


def dice_loss(mask_logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row soft Dice, 1 - (2 sum(p t) + 1) / (sum p + sum t + 1)."""
    p = nx.sigmoid(mask_logits)
    t = Tensor(targets)
    num = (p * t).sum(axis=-1) * 2.0 + 1.0
    den = p.sum(axis=-1) + Tensor(targets.sum(axis=-1) + 1.0)
    return 1.0 - num / den


def detection_loss(mask_logits: Tensor, gt_masks: np.ndarray, w: LossWeights, boxes: Tensor | None = None, gt_boxes=None) -> Tensor:
    """Summed over rows: mask BCE (mean over cells) and Dice, or box L1 in box mode."""
    if w.det_mode == "box":
        diff = nx.tabs(boxes - Tensor(np.asarray(gt_boxes)))
        return diff.sum() * w.det_bce
    bce = nx.bce_with_logits(mask_logits, gt_masks).mean(axis=-1)
    return bce.sum() * w.det_bce + dice_loss(mask_logits, gt_masks).sum() * w.det_dice


def loss_open_world(obj_logits: Tensor, mask_logits: Tensor, gt_masks: np.ndarray, sigma: Matching, w: LossWeights,
                    boxes: Tensor | None = None, gt_boxes=None) -> Tensor:
    """Matched predictions only: objectness BCE toward foreground plus detection loss.

    Unmatched open-world predictions never enter the computation, so they are
    free to fire on objects missing from the annotation.
    """
    if not sigma.sigma:
        return _zero()
    g_idx, p_idx = sigma.gt_indices(), sigma.pred_indices()
    obj = obj_logits[p_idx]
    cls = nx.bce_with_logits(obj, np.ones(len(p_idx))).sum()
    det = detection_loss(
        mask_logits[p_idx], np.asarray(gt_masks)[g_idx], w,
        None if boxes is None else boxes[p_idx], None if gt_boxes is None else np.asarray(gt_boxes)[g_idx],
    )
    return cls + det


def loss_closed_world(class_logits: Tensor, mask_logits: Tensor, gt_classes, gt_masks: np.ndarray, sigma: Matching,
                      w: LossWeights, boxes: Tensor | None = None, gt_boxes=None) -> Tensor:
    """(K+1)-way cross-entropy for every prediction (unmatched ones toward the
    no-object class K) plus detection loss on the matched ones."""
    P, K1 = class_logits.shape
    targets = np.full(P, K1 - 1, dtype=np.int64)
    weights = np.full(P, w.noobj)
    if sigma.sigma:
        g_idx, p_idx = sigma.gt_indices(), sigma.pred_indices()
        targets[p_idx] = np.asarray(gt_classes, dtype=np.int64)[g_idx]
        weights[p_idx] = 1.0
    ce = (nx.cross_entropy(class_logits, targets) * Tensor(weights)).sum()
    if not sigma.sigma:
        return ce
    det = detection_loss(
        mask_logits[p_idx], np.asarray(gt_masks)[g_idx], w,
        None if boxes is None else boxes[p_idx], None if gt_boxes is None else np.asarray(gt_boxes)[g_idx],
    )
    return ce + det


def loss_contrastive(q_obj: Tensor, foreground_indices, normalize: bool = True) -> Tensor:
    """Negative mean L1 distance over unordered pairs of the selected queries."""
    idx = np.asarray(foreground_indices, dtype=np.int64)
    if len(idx) < 2:
        return _zero()
    x = q_obj[idx]
    if normalize:
        x = nx.l2_normalize_rows(x)
    ii, jj = np.triu_indices(len(idx), k=1)
    dist = nx.tabs(x[ii] - x[jj]).sum(axis=1)
    return -dist.mean()


def loss_caption(logit_sets, gt_captions, caption_present, pad_id: int = 2) -> Tensor:
    """Mean token cross-entropy (teacher forcing) over objects that have captions.

    Each ``gt_captions[k]`` is the id sequence the logits were produced for
    (EOS included); PAD positions are excluded from the mean.
    """
    if not (len(logit_sets) == len(gt_captions) == len(caption_present)):
        raise ValueError("caption loss: length mismatch between logits, captions and flags")
    total, count = None, 0
    for logits, toks, present in zip(logit_sets, gt_captions, caption_present):
        if not present:
            continue
        toks = np.asarray(toks, dtype=np.int64)
        if logits.shape[0] != len(toks):
            raise ValueError(f"caption loss: {logits.shape[0]} logit rows for {len(toks)} tokens")
        keep = np.flatnonzero(toks != pad_id)
        if len(keep) == 0:
            continue
        ce = nx.cross_entropy(logits[keep], toks[keep]).sum()
        total = ce if total is None else total + ce
        count += len(keep)
    if total is None:
        return _zero()
    return total * (1.0 / count)


def loss_total(components: dict, w: LossWeights) -> Tensor:
    """w_ow L_ow + w_cont L_cont + w_cap L_cap + w_cw L_cw."""
    out = _zero()
    for key, weight in (("ow", w.ow), ("cont", w.cont), ("cap", w.cap), ("cw", w.cw)):
        term = components.get(key)
        if term is not None and weight != 0:
            out = out + term * weight
    return out
