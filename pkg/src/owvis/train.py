"""AdamW training over shuffled clips."""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import numpy as np

from . import numerics as nx
from .losses import loss_total
from .matching import NonFiniteCost
from .model import OWVisModel, clip_ground_truth
from .rng import SplitMix64

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("L_ow", "L_cw", "L_cont", "L_cap", "L_total")


class TrainingDiverged(RuntimeError):
    pass


class AdamW:
    """Adam with decoupled weight decay; frozen parameters are skipped."""

    def __init__(self, params, lr=1e-4, weight_decay=0.05, betas=(0.9, 0.999), eps=1e-8):
        self.params = [p for p in params if not p.frozen]
        self.lr, self.wd, self.b1, self.b2, self.eps = lr, weight_decay, betas[0], betas[1], eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data *= 1.0 - self.lr * self.wd
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def build_clips(videos, model: OWVisModel) -> list[tuple]:
    """Every (video, start) window of ``clip_len`` frames with its ground truth."""
    T = model.cfg.clip_len
    stride = model.pixel.stride
    clips = []
    for v in videos:
        n, H, W = v.frames.shape[:3]
        for s in range(0, max(1, n - T + 1)):
            frames = v.frames[s:s + T]
            gt = v.gt[s:s + T]
            if len(frames) < T:
                pad = T - len(frames)
                frames = np.concatenate([frames, np.repeat(frames[-1:], pad, axis=0)])
                gt = list(gt) + [gt[-1]] * pad
            clips.append((frames, clip_ground_truth(gt, model.vocab, stride, H, W)))
    return clips


def train(model: OWVisModel, videos, steps: int | None = None, log_path=None, seed: int | None = None) -> list[dict]:
    """Run ``steps`` AdamW steps; returns one row of loss values per step."""
    cfg = model.cfg
    steps = cfg.train_steps if steps is None else steps
    train_videos = [v for v in videos if v.split == "train"] or list(videos)
    clips = build_clips(train_videos, model)
    if not clips:
        raise ValueError("no training clips")
    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    weights = cfg.loss_weights()
    rng = SplitMix64(cfg.seed if seed is None else seed).spawn(99)
    order, cursor = rng.permutation(len(clips)), 0
    history = []
    for step in range(1, steps + 1):
        model.zero_grad()
        batch = []
        for _ in range(cfg.batch_size):
            if cursor == len(order):
                order, cursor = rng.permutation(len(clips)), 0
            batch.append(clips[order[cursor]])
            cursor += 1
        total = None
        sums = dict.fromkeys(LOSS_COLUMNS, 0.0)
        for frames, gt in batch:
            try:
                comps = model.clip_losses(frames, gt)
            except NonFiniteCost as exc:
                raise TrainingDiverged(f"non-finite predictions at step {step}: {exc}") from exc
            lt = loss_total(comps, weights)
            total = lt if total is None else total + lt
            for key, col in (("ow", "L_ow"), ("cw", "L_cw"), ("cont", "L_cont"), ("cap", "L_cap")):
                if key in comps:
                    sums[col] += float(comps[key].data)
            sums["L_total"] += float(lt.data)
        row = {"step": step, **{k: v / len(batch) for k, v in sums.items()}}
        if not math.isfinite(row["L_total"]):
            raise TrainingDiverged(f"non-finite loss at step {step}: {row}")
        if total.requires_grad:
            nx.backward(total * (1.0 / len(batch)))
            opt.step()
        history.append(row)
        if step % 50 == 0 or step == 1:
            log.info("step %d  L_total %.4f", step, row["L_total"])
    if log_path is not None:
        write_loss_log(log_path, history)
    return history


def write_loss_log(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("step",) + LOSS_COLUMNS)
        for row in history:
            w.writerow([row["step"]] + [f"{row[c]:.8g}" for c in LOSS_COLUMNS])


def read_loss_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
