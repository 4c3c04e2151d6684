"""Open-world tracking and captioning metrics: OWTA, CHOTA and track AP.

Detection matching is class-agnostic. Within a frame, GT and predicted masks
are paired by a maximum-IoU assignment and pairs below the threshold alpha
are discarded. Association accuracy follows the HOTA recipe: for a true
positive pair (g, p), TPA counts frames where g and p are matched, FNA the
remaining detections of g and FPA the remaining detections of p.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .masks import pairwise_iou
from .matching import hungarian

ALPHAS = tuple(round(0.05 * k, 2) for k in range(1, 20))
SPLITS = ("all", "common", "uncommon")


@dataclass
class Det:
    track_id: int
    mask: np.ndarray
    caption: list | None = None  # None: not scored


@dataclass
class VideoTracks:
    """Per-frame detections of one video plus track-level attributes."""

    frames: list  # list over frames of list[Det]
    category: dict = field(default_factory=dict)  # track id -> class name
    confidence: dict = field(default_factory=dict)  # track id -> score

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    def track_ids(self) -> list[int]:
        return sorted({d.track_id for fr in self.frames for d in fr})


def gt_tracks(video) -> VideoTracks:
    frames, cat = [], {}
    for fr in video.gt:
        dets = []
        for o in fr:
            dets.append(Det(o.track_id, np.asarray(o.mask, bool), list(o.caption) if o.caption_present else None))
            cat[o.track_id] = o.shape
        frames.append(dets)
    return VideoTracks(frames, cat, {k: 1.0 for k in cat})


def pred_tracks(ts, num_frames: int) -> VideoTracks:
    """Tracker output as per-frame detections; captions come from the covering segment."""
    frames = [[] for _ in range(num_frames)]
    conf = {}
    for tr in ts.tracks:
        conf[tr.track_id] = tr.confidence
        for f, m in zip(tr.frames, tr.masks):
            if 0 <= f < num_frames:
                frames[f].append(Det(tr.track_id, np.asarray(m, bool), tr.caption_at(f)))
    return VideoTracks(frames, {}, conf)


# --------------------------------------------------------------------------
# per-frame matching
# --------------------------------------------------------------------------


def _max_iou_pairs(iou: np.ndarray) -> list[tuple[int, int]]:
    if iou.size == 0:
        return []
    if iou.shape[0] <= iou.shape[1]:
        return hungarian(-iou).pairs()
    return [(g, p) for p, g in hungarian(-iou.T).pairs()]


def match_frame(gt_masks, pred_masks, alpha: float):
    """Returns (TP pairs as (gt index, pred index), FP count, FN count)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    gm = np.asarray(gt_masks, bool)
    pm = np.asarray(pred_masks, bool)
    ng, npred = len(gm), len(pm)
    iou = pairwise_iou(gm, pm) if ng and npred else np.zeros((ng, npred))
    pairs = [(g, p) for g, p in _max_iou_pairs(iou) if iou[g, p] >= alpha]
    return pairs, npred - len(pairs), ng - len(pairs)


def _canonical(dets) -> list:
    """Detections sorted by mask content, so that tie-breaks in the
    assignment do not depend on list order or on track ids."""
    return sorted(dets, key=lambda d: (np.packbits(d.mask).tobytes(), d.track_id))


class _FrameCache:
    """IoU-maximizing pairs per frame; alpha only decides which survive."""

    def __init__(self, gt: VideoTracks, pred: VideoTracks):
        if gt.num_frames != pred.num_frames:
            raise ValueError("GT and prediction cover different frame counts")
        self.gt = VideoTracks([_canonical(fr) for fr in gt.frames], gt.category, gt.confidence)
        self.pred = VideoTracks([_canonical(fr) for fr in pred.frames], pred.category, pred.confidence)
        self.frames = []
        for g, p in zip(self.gt.frames, self.pred.frames):
            if g and p:
                iou = pairwise_iou(np.stack([d.mask for d in g]), np.stack([d.mask for d in p]))
            else:
                iou = np.zeros((len(g), len(p)))
            self.frames.append((iou, _max_iou_pairs(iou)))

    def tp_pairs(self, alpha: float):
        """Yield (frame, gt det, pred det) for pairs with IoU >= alpha."""
        for f, (iou, pairs) in enumerate(self.frames):
            for g, p in pairs:
                if iou[g, p] >= alpha:
                    yield f, self.gt.frames[f][g], self.pred.frames[f][p]


@dataclass
class _Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    ass_sum: float = 0.0  # sum over TPs of TPA / (TPA + FPA + FNA)

    def add(self, other: "_Counts") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.ass_sum += other.ass_sum


def _counts(cache: _FrameCache, alpha: float) -> _Counts:
    gt_n = Counter(d.track_id for fr in cache.gt.frames for d in fr)
    pr_n = Counter(d.track_id for fr in cache.pred.frames for d in fr)
    pairs = [(g.track_id, p.track_id) for _, g, p in cache.tp_pairs(alpha)]
    tpa = Counter(pairs)
    ass = 0.0
    for pair in pairs:
        a = tpa[pair]
        ass += a / (gt_n[pair[0]] + pr_n[pair[1]] - a)
    tp = len(pairs)
    return _Counts(tp, sum(pr_n.values()) - tp, sum(gt_n.values()) - tp, ass)


def _ratio(num: float, den: float, empty: float) -> float:
    return num / den if den > 0 else empty


def select_split(gt: VideoTracks, pred: VideoTracks, categories, distractor_iou: float = 0.5):
    """Restrict GT to ``categories``; drop predicted detections that cover excluded GT.

    A predicted detection with IoU >= ``distractor_iou`` against an excluded
    GT object in the same frame is neither a true nor a false positive for
    this split, so it is removed.
    """
    keep = set(categories)
    g_frames, p_frames = [], []
    for g, p in zip(gt.frames, pred.frames):
        kept = [d for d in g if gt.category.get(d.track_id) in keep]
        excl = [d for d in g if gt.category.get(d.track_id) not in keep]
        if excl and p:
            iou = pairwise_iou(np.stack([d.mask for d in p]), np.stack([d.mask for d in excl]))
            p = [d for d, row in zip(p, iou) if row.max() < distractor_iou]
        g_frames.append(kept)
        p_frames.append(list(p))
    cat = {k: v for k, v in gt.category.items() if v in keep}
    return VideoTracks(g_frames, cat, gt.confidence), VideoTracks(p_frames, pred.category, pred.confidence)


def compute_owta(gts, preds, alphas=ALPHAS) -> dict:
    """Dataset-level OWTA; ``gts``/``preds`` are parallel lists of VideoTracks.

    Counts are pooled over videos before the ratios are taken. With no GT
    and no predictions at all the split is vacuously perfect.
    """
    caches = [_FrameCache(g, p) for g, p in zip(gts, preds)]
    rows = []
    for a in alphas:
        tot = _Counts()
        for c in caches:
            tot.add(_counts(c, a))
        vacuous = 1.0 if tot.tp + tot.fn + tot.fp == 0 else 0.0
        det_re = _ratio(tot.tp, tot.tp + tot.fn, vacuous)
        det_a = _ratio(tot.tp, tot.tp + tot.fn + tot.fp, vacuous)
        ass_a = _ratio(tot.ass_sum, tot.tp, vacuous)
        rows.append({"alpha": a, "OWTA": float(np.sqrt(det_re * ass_a)), "DetRe": det_re,
                     "DetA": det_a, "AssA": ass_a, "TP": tot.tp, "FP": tot.fp, "FN": tot.fn})
    out = {k: float(np.mean([r[k] for r in rows])) for k in ("OWTA", "DetRe", "DetA", "AssA")}
    at50 = [r for r in rows if abs(r["alpha"] - 0.5) < 1e-9]
    out["OWTA@0.5"] = at50[0]["OWTA"] if at50 else float("nan")
    out["per_alpha"] = rows
    return out


def caption_token_f1(pred, gt) -> float:
    """Multiset token F1 between two token sequences."""
    pred, gt = list(pred), list(gt)
    if not pred and not gt:
        return 1.0
    if not pred or not gt:
        return 0.0
    common = sum((Counter(pred) & Counter(gt)).values())
    if common == 0:
        return 0.0
    p, r = common / len(pred), common / len(gt)
    return 2 * p * r / (p + r)


def compute_chota(gts, preds, scorer=caption_token_f1, alpha: float = 0.5) -> dict:
    """CHOTA = (DetA * AssA * CapA) ** (1/3) at a single alpha.

    CapA averages ``scorer`` over true positives whose GT caption is present,
    using the predicted caption segment that covers the TP's frame; with no
    such TP it is 1.
    """
    res = compute_owta(gts, preds, (alpha,))
    scores = []
    for g, p in zip(gts, preds):
        for _, gd, pd in _FrameCache(g, p).tp_pairs(alpha):
            if gd.caption is not None:
                scores.append(scorer(pd.caption or [], gd.caption))
    # no TP carries a GT caption: nothing to score, so captioning is not penalized
    cap_a = float(np.mean(scores)) if scores else 1.0
    det_a, ass_a = res["DetA"], res["AssA"]
    return {"CHOTA": float(np.cbrt(det_a * ass_a * cap_a)), "DetA": det_a, "AssA": ass_a, "CapA": cap_a,
            "captions_scored": len(scores)}


# --------------------------------------------------------------------------
# track AP
# --------------------------------------------------------------------------


def _volumes(vt: VideoTracks) -> dict:
    """track id -> {frame: mask}."""
    out: dict = {}
    for f, fr in enumerate(vt.frames):
        for d in fr:
            out.setdefault(d.track_id, {})[f] = d.mask
    return out


def volume_iou(a: dict, b: dict) -> float:
    inter = union = 0
    for f in set(a) | set(b):
        ma, mb = a.get(f), b.get(f)
        if ma is None:
            union += int(mb.sum())
        elif mb is None:
            union += int(ma.sum())
        else:
            inter += int(np.logical_and(ma, mb).sum())
            union += int(np.logical_or(ma, mb).sum())
    return inter / union if union else 0.0


def average_precision(tp_flags, num_gt: int) -> float:
    """All-points interpolated area under the precision-recall curve."""
    if num_gt == 0 or len(tp_flags) == 0:
        return 0.0
    tp = np.cumsum(tp_flags, dtype=np.float64)
    fp = np.cumsum(1 - np.asarray(tp_flags), dtype=np.float64)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def compute_ap(gts, preds, thresholds=(0.5, 0.75)) -> dict:
    """Class-agnostic track AP at each volume-IoU threshold."""
    gvols = [_volumes(g) for g in gts]
    cands = []
    ious = []
    for v, (g, p) in enumerate(zip(gts, preds)):
        pv = _volumes(p)
        gids = sorted(gvols[v])
        for pid in sorted(pv):
            cands.append((-p.confidence.get(pid, 0.0), v, pid))
        ious.append({pid: np.array([volume_iou(pv[pid], gvols[v][gid]) for gid in gids]) for pid in pv})
    cands.sort()
    num_gt = sum(len(g) for g in gvols)
    out = {}
    for thr in thresholds:
        used = [np.zeros(len(g), bool) for g in gvols]
        flags = []
        for _, v, pid in cands:
            row = np.where(used[v], -1.0, ious[v][pid])
            j = int(np.argmax(row)) if row.size else -1
            hit = j >= 0 and row[j] >= thr
            if hit:
                used[v][j] = True
            flags.append(1 if hit else 0)
        out[thr] = average_precision(flags, num_gt)
    return out


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    splits: dict  # split -> {OWTA, OWTA@0.5, DetRe, DetA, AssA, TP, FP, FN}
    CapA: float
    CHOTA: float
    DetA: float
    AssA: float
    AP50: float
    AP75: float
    AP: float
    alphas: list
    num_videos: int
    per_alpha: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, json_path, csv_path=None) -> None:
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
        if csv_path is not None:
            write_csv(self, csv_path)


def write_csv(report: EvalReport, path) -> None:
    """Flat table: one row per (split, alpha) plus summary rows with alpha = 'mean'."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("split", "alpha", "OWTA", "DetRe", "DetA", "AssA", "TP", "FP", "FN"))
        for split, rows in report.per_alpha.items():
            for r in rows:
                w.writerow((split, f"{r['alpha']:.2f}", f"{r['OWTA']:.6f}", f"{r['DetRe']:.6f}",
                            f"{r['DetA']:.6f}", f"{r['AssA']:.6f}", r["TP"], r["FP"], r["FN"]))
            s = report.splits[split]
            w.writerow((split, "mean", f"{s['OWTA']:.6f}", f"{s['DetRe']:.6f}", f"{s['DetA']:.6f}",
                        f"{s['AssA']:.6f}", "", "", ""))


def validate_report(d: dict) -> None:
    """Raise ValueError if ``d`` does not look like a serialized EvalReport."""
    for key in ("splits", "CapA", "CHOTA", "DetA", "AssA", "AP50", "AP75", "AP", "alphas", "num_videos"):
        if key not in d:
            raise ValueError(f"report lacks {key!r}")
    for split in SPLITS:
        if split not in d["splits"]:
            raise ValueError(f"report lacks split {split!r}")
        for k in ("OWTA", "DetRe", "DetA", "AssA"):
            v = d["splits"][split][k]
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{split}.{k} = {v} outside [0, 1]")
    for k in ("CapA", "CHOTA", "DetA", "AssA", "AP50", "AP75", "AP"):
        if not 0.0 <= d[k] <= 1.0:
            raise ValueError(f"{k} = {d[k]} outside [0, 1]")


def evaluate(gts, preds, common, uncommon, alphas=ALPHAS, scorer=caption_token_f1) -> EvalReport:
    """Full report over parallel lists of GT and predicted VideoTracks."""
    gts, preds = list(gts), list(preds)
    if len(gts) != len(preds):
        raise ValueError("need one prediction per GT video")
    splits, per_alpha = {}, {}
    for name, cats in (("all", None), ("common", common), ("uncommon", uncommon)):
        if cats is None:
            g, p = gts, preds
        else:
            pairs = [select_split(a, b, cats) for a, b in zip(gts, preds)]
            g, p = [x for x, _ in pairs], [y for _, y in pairs]
        res = compute_owta(g, p, alphas)
        mid = [r for r in res["per_alpha"] if abs(r["alpha"] - 0.5) < 1e-9]
        counts = {k: (mid[0][k] if mid else 0) for k in ("TP", "FP", "FN")}
        splits[name] = {k: res[k] for k in ("OWTA", "OWTA@0.5", "DetRe", "DetA", "AssA")} | counts
        per_alpha[name] = res["per_alpha"]
    ch = compute_chota(gts, preds, scorer)
    thr = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
    ap = compute_ap(gts, preds, thr)
    return EvalReport(
        splits=splits, CapA=ch["CapA"], CHOTA=ch["CHOTA"], DetA=ch["DetA"], AssA=ch["AssA"],
        AP50=ap[0.5], AP75=ap[0.75], AP=float(np.mean(list(ap.values()))),
        alphas=list(alphas), num_videos=len(gts), per_alpha=per_alpha,
    )
