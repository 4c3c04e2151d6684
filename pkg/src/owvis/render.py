"""Mask overlays written as binary PPM frames, with a captions JSON sidecar."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .rng import SplitMix64


def track_color(track_id: int) -> np.ndarray:
    """A fixed, reasonably saturated RGB color per track id."""
    r = SplitMix64(0x5EED + int(track_id))
    c = r.uniform((3,))
    c = 0.25 + 0.75 * (c - c.min()) / max(c.max() - c.min(), 1e-9)
    return np.round(c * 255).astype(np.uint8)


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(frame, np.float64) * 255.0), 0, 255).astype(np.uint8)


def overlay(frame: np.ndarray, masks, ids, alpha: float = 0.5) -> np.ndarray:
    img = to_uint8(frame).astype(np.float64)
    for m, tid in zip(masks, ids):
        img[m] = (1 - alpha) * img[m] + alpha * track_color(tid)
    return np.round(img).astype(np.uint8)


def write_ppm(path, img: np.ndarray) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    H, W = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6 {W} {H} 255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    header, _, body = data.partition(b"\n")
    magic, W, H, maxval = header.split()
    if magic != b"P6" or maxval != b"255":
        raise ValueError("not an 8-bit binary PPM")
    return np.frombuffer(body, dtype=np.uint8).reshape(int(H), int(W), 3)


def render_video(frames, ts, out_dir) -> list[Path]:
    """One PPM per input frame plus ``captions.json``; returns the frame paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_frame = [[] for _ in range(len(frames))]
    for tr in ts.tracks:
        for f, m in zip(tr.frames, tr.masks):
            per_frame[f].append((tr.track_id, m))
    paths = []
    for f, frame in enumerate(frames):
        items = sorted(per_frame[f], key=lambda x: x[0])
        img = overlay(frame, [m for _, m in items], [t for t, _ in items])
        p = out / f"frame_{f:04d}.ppm"
        write_ppm(p, img)
        paths.append(p)
    side = {
        "frames": [
            {"frame": f, "objects": [{"track_id": t, "caption": " ".join(ts_caption(ts, t, f) or [])} for t, _ in
                                     sorted(per_frame[f], key=lambda x: x[0])]}
            for f in range(len(frames))
        ],
        "tracks": [
            {"track_id": tr.track_id, "origin": tr.origin, "color": track_color(tr.track_id).tolist(),
             "segments": [{"start": a, "end": b, "caption": " ".join(c)} for a, b, c in tr.captions]}
            for tr in ts.tracks
        ],
    }
    (out / "captions.json").write_text(json.dumps(side, indent=2))
    return paths


def ts_caption(ts, track_id: int, frame: int):
    for tr in ts.tracks:
        if tr.track_id == track_id:
            return tr.caption_at(frame)
    return None
