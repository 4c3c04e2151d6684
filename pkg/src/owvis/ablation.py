"""Paired-arm ablation runs and the clip-level diagnostics they compare."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .config import Config
from .evalkit import evaluate, gt_tracks, pred_tracks
from .masks import pairwise_iou
from .model import OWVisModel, clip_ground_truth
from .synthworld import generate_dataset
from .tracker import TrackerParams, process_video
from .train import train

log = logging.getLogger(__name__)

# arm name -> config overrides relative to the baseline
ARMS = {
    "baseline": {},
    "no_open_queries": {"open_queries": False},
    "no_contrastive": {"lambda_cont": 0.0},
    "no_caption_mask": {"caption_mask": False},
}


def eval_clips(video, clip_len: int):
    """Non-overlapping clips of an eval video, the last one padded with its final frame."""
    n = len(video.frames)
    for s in range(0, n, clip_len):
        frames = video.frames[s:s + clip_len]
        gt = list(video.gt[s:s + clip_len])
        if len(frames) < clip_len:
            pad = clip_len - len(frames)
            frames = np.concatenate([frames, np.repeat(frames[-1:], pad, axis=0)])
            gt += [gt[-1]] * pad
        yield frames, gt


def duplicate_rate(model: OWVisModel, videos, iou: float = 0.8) -> float:
    """Mean number of prediction pairs per clip whose masks overlap above ``iou``.

    Counted on the raw query outputs, before any confidence filtering; empty
    masks are ignored.
    """
    counts = []
    for v in videos:
        for frames, _ in eval_clips(v, model.cfg.clip_len):
            det = model.run_clip(frames)
            m = det.masks.reshape(len(det.masks), -1)
            m = m[m.any(axis=1)]
            if len(m) < 2:
                counts.append(0)
                continue
            ov = pairwise_iou(m, m)
            counts.append(int(np.triu(ov > iou, k=1).sum()))
    return float(np.mean(counts)) if counts else 0.0


def token_accuracy(pred, gt) -> float:
    """Position-wise agreement, normalized by the longer sequence."""
    n = max(len(pred), len(gt))
    if n == 0:
        return 1.0
    return sum(a == b for a, b in zip(pred, gt)) / n


def caption_accuracy(model: OWVisModel, videos) -> float:
    """Per-object caption token accuracy on matched queries of eval clips.

    Each GT object with a caption is paired with its matched query (the
    open-world match when present, else the closed-world one); the query's
    greedy caption is scored against the GT caption.
    """
    scores = []
    stride = model.pixel.stride
    for v in videos:
        H, W = v.frames.shape[1:3]
        for frames, gt_frames in eval_clips(v, model.cfg.clip_len):
            gt = clip_ground_truth(gt_frames, model.vocab, stride, H, W)
            if len(gt) == 0:
                continue
            det = model.run_clip(frames)
            m_ow, m_cw = model.match(det.handle, gt)
            query = {g: model.n_ow + c for g, c in m_cw.sigma.items()}
            query.update(m_ow.sigma)
            keep = [g for g in sorted(query) if gt.caption_present[g]]
            if not keep:
                continue
            words = model.caption_clip(det, [query[g] for g in keep])
            for g, w in zip(keep, words):
                ref = model.vocab.decode(gt.captions[g])
                scores.append(token_accuracy(w, ref))
    return float(np.mean(scores)) if scores else 0.0


def tracking_report(model: OWVisModel, videos, meta):
    params = TrackerParams.from_config(model.cfg)
    preds = [pred_tracks(process_video(v.frames, model, params), len(v.frames)) for v in videos]
    return evaluate([gt_tracks(v) for v in videos], preds, meta["common"], meta["uncommon"])


@dataclass
class ArmResult:
    arm: str
    seed: int
    uncommon_owta: float = float("nan")
    duplicate_rate: float = float("nan")
    caption_accuracy: float = float("nan")
    train_seconds: float = 0.0
    final_loss: dict = field(default_factory=dict)


def run_arm(base: Config, arm: str, seed: int, metrics=("owta", "dup", "cap")) -> ArmResult:
    """Train one arm from scratch and measure the requested diagnostics on eval videos."""
    cfg = base.replace(seed=seed, **ARMS[arm])
    with nx.precision(cfg.precision):
        return _run_arm(cfg, arm, seed, metrics)


def _run_arm(cfg: Config, arm: str, seed: int, metrics) -> ArmResult:
    videos, meta = generate_dataset(cfg.dataset_spec())
    model = OWVisModel(cfg)
    t0 = time.perf_counter()
    hist = train(model, videos)
    res = ArmResult(arm, seed, train_seconds=time.perf_counter() - t0, final_loss=hist[-1] if hist else {})
    ev = [v for v in videos if v.split == "eval"]
    if "owta" in metrics:
        res.uncommon_owta = tracking_report(model, ev, meta).splits["uncommon"]["OWTA"]
    if "dup" in metrics:
        res.duplicate_rate = duplicate_rate(model, ev)
    if "cap" in metrics:
        res.caption_accuracy = caption_accuracy(model, ev)
    log.info("%s seed %d: %s", arm, seed, res)
    return res
