"""Online clip-by-clip tracking with query-similarity association.

A video is cut into consecutive clips of T frames. For each clip the model
produces detections; confident ones survive ``filter_predictions``, are
linked to existing tracks by Hungarian matching on query cosine distance, and
get one caption per (track, clip) segment. Nothing about clip k depends on
frames after clip k.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .masks import pairwise_iou, rle_decode, rle_encode, tight_box
from .matching import hungarian
from .object_transformer import CLOSED, OPEN


@dataclass
class TrackerParams:
    clip_len: int = 2
    tau_cw: float = 0.5
    tau_ow: float = 0.5
    cw_precedence_iou: float = 0.7
    ow_nms_iou: float = 1.0  # 1.0 disables open-open suppression
    gate: float = 0.5
    max_age: int = 4

    @classmethod
    def from_config(cls, cfg) -> "TrackerParams":
        return cls(cfg.clip_len, cfg.tau_cw, cfg.tau_ow, 0.7, cfg.ow_nms_iou, cfg.assoc_gate, cfg.effective_max_age)


@dataclass
class Track:
    track_id: int
    origin: str
    label: int
    frames: list = field(default_factory=list)  # frame indices, strictly increasing
    masks: list = field(default_factory=list)
    boxes: list = field(default_factory=list)
    confidences: list = field(default_factory=list)
    captions: list = field(default_factory=list)  # (first frame, last frame, tokens)
    last_query: np.ndarray | None = None
    age_since_seen: int = 0
    retired: bool = False

    @property
    def confidence(self) -> float:
        return float(np.mean(self.confidences)) if self.confidences else 0.0

    def caption_at(self, frame: int) -> list | None:
        for a, b, toks in self.captions:
            if a <= frame <= b:
                return toks
        return None


@dataclass
class TrackSet:
    tracks: list = field(default_factory=list)
    next_id: int = 0

    def active(self) -> list[Track]:
        return [t for t in self.tracks if not t.retired]

    def new_track(self, origin: str, label: int) -> Track:
        tr = Track(self.next_id, origin, label)
        self.next_id += 1
        self.tracks.append(tr)
        return tr


def filter_predictions(masks, confidences, origin, params: TrackerParams) -> list[int]:
    """Indices of predictions to keep.

    Closed-world predictions need confidence >= tau_cw. Open-world ones need
    objectness >= tau_ow and must overlap every kept closed-world prediction
    with IoU below the precedence threshold. When ``ow_nms_iou`` < 1, an
    open-world prediction is also dropped if it overlaps a stronger kept one
    at IoU >= ``ow_nms_iou``. Empty masks are dropped.
    """
    masks = np.asarray(masks, dtype=bool)
    conf = np.asarray(confidences, dtype=np.float64)
    n = len(conf)
    nonempty = masks.reshape(n, -1).any(axis=1) if n else np.zeros(0, bool)
    origin = list(origin)
    cw = [i for i in range(n) if origin[i] == CLOSED and nonempty[i] and conf[i] >= params.tau_cw]
    ow = [i for i in range(n) if origin[i] == OPEN and nonempty[i] and conf[i] >= params.tau_ow]
    ow.sort(key=lambda i: (-conf[i], i))
    kept_ow: list[int] = []
    if ow:
        iou_cw = pairwise_iou(masks[ow], masks[cw]) if cw else np.zeros((len(ow), 0))
        iou_ow = pairwise_iou(masks[ow], masks[ow])
        for a, i in enumerate(ow):
            if iou_cw.shape[1] and iou_cw[a].max() >= params.cw_precedence_iou:
                continue
            if params.ow_nms_iou < 1.0 and any(iou_ow[a, ow.index(j)] >= params.ow_nms_iou for j in kept_ow):
                continue
            kept_ow.append(i)
    return sorted(cw + kept_ow)


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    an = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    bn = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    return an @ bn.T


def associate(tracks: TrackSet, queries: np.ndarray, gate: float = 0.5) -> dict[int, int]:
    """Map row index of ``queries`` to an active track id, or -1 for a new track.

    Cost is 1 - cosine(track.last_query, query); pairs above ``gate`` are
    rejected after the optimal assignment.
    """
    active = tracks.active()
    queries = np.asarray(queries, dtype=np.float64)
    result = {i: -1 for i in range(len(queries))}
    if not active or len(queries) == 0:
        return result
    prev = np.stack([t.last_query for t in active])
    cost = 1.0 - _cosine(prev, queries)  # (tracks, preds)
    if cost.shape[0] <= cost.shape[1]:
        pairs = hungarian(cost).pairs()
    else:
        pairs = [(r, c) for c, r in hungarian(cost.T).pairs()]
    for r, c in pairs:
        if cost[r, c] <= gate:
            result[c] = active[r].track_id
    return result


def process_video(frames, model, params: TrackerParams) -> TrackSet:
    """Track and caption a whole video online.

    ``model`` must provide ``run_clip(frames) -> ClipDetections`` and
    ``caption_clip(detections, indices) -> list of token lists``.
    """
    frames = np.asarray(frames)
    n = len(frames)
    if n == 0:
        raise ValueError("empty video")
    T = params.clip_len
    if T < 1:
        raise ValueError("clip length must be >= 1")
    ts = TrackSet()
    by_id = {}
    for start in range(0, n, T):
        clip = frames[start:start + T]
        real = len(clip)
        if real < T:
            clip = np.concatenate([clip, np.repeat(clip[-1:], T - real, axis=0)])
        det = model.run_clip(clip)
        kept = filter_predictions(det.masks[:, :real], det.confidences, det.origin, params)
        assign = associate(ts, det.queries[kept], params.gate)
        captions = model.caption_clip(det, kept)
        touched = set()
        for a, i in enumerate(kept):
            tid = assign[a]
            if tid < 0:
                tr = ts.new_track(det.origin[i], int(det.labels[i]))
                by_id[tr.track_id] = tr
            else:
                tr = by_id[tid]
            touched.add(tr.track_id)
            for t in range(real):
                m = det.masks[i, t]
                if not m.any():
                    continue
                tr.frames.append(start + t)
                tr.masks.append(m)
                tr.boxes.append(tight_box(m))
                tr.confidences.append(float(det.confidences[i]))
            tr.captions.append((start, start + real - 1, list(captions[a])))
            tr.last_query = det.queries[i]
            tr.age_since_seen = 0
        for tr in ts.active():
            if tr.track_id not in touched:
                tr.age_since_seen += real
                if tr.age_since_seen > params.max_age:
                    tr.retired = True
    ts.tracks = [t for t in ts.tracks if t.frames]
    return ts


def tracks_to_json(ts: TrackSet, class_names=None) -> dict:
    out = []
    for tr in ts.tracks:
        cls = "unknown" if tr.label < 0 or class_names is None else class_names[tr.label]
        out.append({
            "id": tr.track_id,
            "origin": tr.origin,
            "class": cls,
            "label": tr.label,
            "confidence": tr.confidence,
            "frames": [
                {"frame": f, "rle": rle_encode(m), "box": b, "confidence": c}
                for f, m, b, c in zip(tr.frames, tr.masks, tr.boxes, tr.confidences)
            ],
            "captions": [{"start": a, "end": b, "tokens": toks} for a, b, toks in tr.captions],
        })
    return {"format": "owvis-tracks", "version": 1, "tracks": out}


def tracks_from_json(d: dict) -> TrackSet:
    if d.get("format") != "owvis-tracks":
        raise ValueError("not an owvis track file")
    ts = TrackSet()
    for t in d["tracks"]:
        tr = Track(int(t["id"]), t["origin"], int(t.get("label", -1)))
        for fr in t["frames"]:
            tr.frames.append(int(fr["frame"]))
            tr.masks.append(rle_decode(fr["rle"]))
            tr.boxes.append(fr["box"])
            tr.confidences.append(float(fr["confidence"]))
        tr.captions = [(int(c["start"]), int(c["end"]), list(c["tokens"])) for c in t["captions"]]
        ts.tracks.append(tr)
        ts.next_id = max(ts.next_id, tr.track_id + 1)
    return ts
