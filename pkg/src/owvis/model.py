"""The assembled video model: queries, decoder, heads, captioning, and per-clip losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .caption_head import (
    CaptionDecoder,
    CaptionHead,
    Vocabulary,
    build_attention_mask,
    caption_logits,
    decode_caption,
    object_to_text_forward,
)
from .config import Config
from .losses import loss_caption, loss_closed_world, loss_contrastive, loss_open_world
from .masks import downsample_soft, upsample_logits
from .matching import Matching, hungarian, match_cost
from .numerics import Module, Parameter, Tensor
from .object_transformer import (
    DecoderLayer,
    FeatureMap,
    Heads,
    PixelEncoder,
    PredictionSet,
    QuerySet,
    attention_mask_from,
    predict_heads,
)
from .prompt_encoder import PromptEncoder, make_point_grid
from .rng import SplitMix64


@dataclass
class ClipOutput:
    queries: QuerySet
    layers: list  # PredictionSet after every decoder layer
    fm: FeatureMap
    mem: Tensor

    @property
    def final(self) -> PredictionSet:
        return self.layers[-1]


@dataclass
class ClipGT:
    """Ground truth of one clip at feature resolution."""

    masks: np.ndarray  # (G, T*Hf*Wf) area fractions
    classes: np.ndarray  # (G,) class ids, -1 for unknown
    boxes: np.ndarray  # (G, 4)
    captions: list  # token id sequences, EOS included
    caption_present: np.ndarray  # (G,) bool
    track_ids: list

    def __len__(self) -> int:
        return len(self.track_ids)


@dataclass
class ClipDetections:
    """Model-agnostic per-clip detections consumed by the tracker."""

    masks: np.ndarray  # (N, T, H, W) bool at pixel resolution
    confidences: np.ndarray  # (N,)
    labels: np.ndarray  # (N,) class id, -1 for open-world rows
    origin: list
    queries: np.ndarray  # (N, C)
    boxes: np.ndarray  # (N, 4)
    handle: object = None  # opaque state for captioning


def clip_ground_truth(gt_frames, vocab: Vocabulary, stride: int, H: int, W: int) -> ClipGT:
    """Collect objects visible anywhere in the clip frames ``gt_frames``."""
    T = len(gt_frames)
    order, info = [], {}
    for fr in gt_frames:
        for o in fr:
            if o.track_id not in info:
                order.append(o.track_id)
                info[o.track_id] = o
    full = np.zeros((len(order), T, H, W), dtype=bool)
    boxes = np.zeros((len(order), 4))
    seen_box = set()
    for t, fr in enumerate(gt_frames):
        for o in fr:
            g = order.index(o.track_id)
            full[g, t] = o.mask
            if g not in seen_box:
                boxes[g] = o.box
                seen_box.add(g)
    soft = downsample_soft(full, stride).reshape(len(order), -1) if order else np.zeros((0, T * (H // stride) * (W // stride)))
    return ClipGT(
        masks=soft,
        classes=np.array([info[k].class_id for k in order], dtype=np.int64),
        boxes=boxes,
        captions=[vocab.encode(info[k].caption) for k in order],
        caption_present=np.array([info[k].caption_present for k in order], dtype=bool),
        track_ids=order,
    )


class OWVisModel(Module):
    def __init__(self, cfg: Config, num_classes: int | None = None, vocab: Vocabulary | None = None):
        self.cfg = cfg
        self.vocab = vocab or Vocabulary()
        self.num_classes = len(cfg.train_classes()) if num_classes is None else num_classes
        C = cfg.model_dim
        root = SplitMix64(cfg.seed)
        streams = [root.spawn(k) for k in range(8)]
        self.pixel = PixelEncoder(streams[0], C)
        self.prompt = PromptEncoder(streams[1], C, cfg.ow_fourier_scale)
        self.e_cw = Parameter(streams[2].normal((cfg.n_cw_queries, C)))
        self.layers = [DecoderLayer(streams[3].spawn(i), C) for i in range(cfg.decoder_layers)]
        self.heads = Heads(streams[4], C, self.num_classes)
        self.caption = CaptionHead(streams[5], C, cfg.n_text, cfg.o2t_layers)
        self.decoder = CaptionDecoder(streams[6], C, len(self.vocab), cfg.max_caption_len + 1, cfg.decoder_mode)
        self.grid = make_point_grid(cfg.ow_grid)
        self.open_queries = cfg.open_queries
        self.caption_mask = cfg.caption_mask
        self.assign_names()

    @property
    def n_ow(self) -> int:
        return len(self.grid) if self.open_queries else 0

    def initial_queries(self) -> QuerySet:
        parts = []
        if self.open_queries:
            parts.append(self.prompt(self.grid))
        parts.append(self.e_cw)
        return QuerySet(nx.concat(parts, axis=0), self.n_ow, self.e_cw.shape[0], 0)

    def forward_clip(self, frames) -> ClipOutput:
        fm = self.pixel(frames)
        mem = fm.memory()
        qs = self.initial_queries()
        add_mask = None  # the first layer attends everywhere
        preds = []
        for layer in self.layers:
            qs = QuerySet(layer(qs.q_obj, mem, add_mask), qs.n_ow, qs.n_cw, qs.layer_index + 1)
            p = predict_heads(self.heads, qs, fm, mem)
            preds.append(p)
            add_mask = attention_mask_from(p)
        return ClipOutput(qs, preds, fm, mem)

    def text_queries(self, out: ClipOutput, idx, use_mask: bool | None = None) -> Tensor:
        idx = np.asarray(idx, dtype=np.int64)
        use_mask = self.caption_mask if use_mask is None else use_mask
        masks = None
        if use_mask:
            bins = out.final.binary_masks()[idx]
            masks = np.concatenate([build_attention_mask(b) for b in bins], axis=0)
        return object_to_text_forward(self.caption, out.queries.q_obj[idx], out.mem, masks)

    # training ------------------------------------------------------------

    def match(self, out: ClipOutput, gt: ClipGT) -> tuple[Matching, Matching]:
        p = out.final
        w = self.cfg
        m_ow = m_cw = Matching({}, 0.0)
        if len(gt) == 0:
            return Matching({}, 0.0, "open"), Matching({}, 0.0, "closed")
        probs = p.mask_probs()
        if p.n_ow:
            cost = match_cost(p.objectness(), probs[: p.n_ow], gt.masks, w.cost_cls, w.cost_bce, w.cost_dice)
            m_ow = hungarian(cost, "open")
        known = np.flatnonzero(gt.classes >= 0)
        if p.n_cw and len(known):
            cp = p.class_probs()  # (N_cw, K+1)
            cost = match_cost(cp[:, gt.classes[known]].T, probs[p.n_ow:], gt.masks[known], w.cost_cls, w.cost_bce, w.cost_dice)
            sub = hungarian(cost, "closed")
            m_cw = Matching({int(known[g]): c for g, c in sub.sigma.items()}, sub.total, "closed")
        return m_ow, m_cw

    def clip_losses(self, frames, gt: ClipGT) -> dict:
        """Loss components for one clip; the GT is matched once per query set."""
        w = self.cfg.loss_weights()
        out = self.forward_clip(frames)
        p = out.final
        m_ow, m_cw = self.match(out, gt)
        comps = {}
        if p.n_ow:
            comps["ow"] = loss_open_world(
                p.obj_logits, p.mask_logits[: p.n_ow], gt.masks, m_ow, w,
                p.boxes[: p.n_ow], gt.boxes,
            )
        else:
            comps["ow"] = Tensor(np.zeros(()))
        if p.n_cw:
            comps["cw"] = loss_closed_world(
                p.class_logits, p.mask_logits[p.n_ow:], gt.classes, gt.masks, m_cw, w,
                p.boxes[p.n_ow:], gt.boxes,
            )
        matched = [(g, c) for g, c in m_ow.pairs()] + [(g, p.n_ow + c) for g, c in m_cw.pairs()]
        if w.cont_scope == "all":
            fg = np.arange(p.n_ow + p.n_cw)
        else:
            fg = np.array(sorted({q for _, q in matched}), dtype=np.int64)
        comps["cont"] = loss_contrastive(out.queries.q_obj, fg, w.cont_normalize)
        comps["cap"] = Tensor(np.zeros(()))
        if w.cap > 0 and matched:
            keep = [(g, q) for g, q in matched if gt.caption_present[g]]
            if keep:
                q_text = self.text_queries(out, [q for _, q in keep])
                toks = [gt.captions[g] for g, _ in keep]
                logits = caption_logits(q_text, self.decoder, toks)
                comps["cap"] = loss_caption(logits, toks, [True] * len(keep))
        comps["_out"] = out
        comps["_matching"] = (m_ow, m_cw)
        return comps

    # inference -----------------------------------------------------------

    def run_clip(self, frames) -> ClipDetections:
        with nx.no_grad():
            out = self.forward_clip(frames)
        p = out.final
        T, Hf, Wf = p.grid
        stride = out.fm.stride
        logits = p.mask_logits.data.astype(np.float64).reshape(-1, T, Hf, Wf)
        masks = upsample_logits(logits, stride) > 0
        return ClipDetections(
            masks=masks,
            confidences=p.confidences(),
            labels=p.labels(),
            origin=p.origin,
            queries=out.queries.q_obj.data.astype(np.float64),
            boxes=p.boxes.data.astype(np.float64),
            handle=out,
        )

    def caption_clip(self, det: ClipDetections, indices) -> list[list[str]]:
        if len(indices) == 0:
            return []
        with nx.no_grad():
            q_text = self.text_queries(det.handle, indices)
            ids = decode_caption(q_text, self.decoder, self.cfg.max_caption_len)
        return [self.vocab.decode(s) for s in ids]
