import json

import numpy as np
import pytest

from owvis.matching import brute_force_assignment
from owvis.model import ClipDetections
from owvis.object_transformer import CLOSED, OPEN
from owvis.synthworld import COLORS, ObjectSpec, WorldSpec, generate_video
from owvis.tracker import (
    TrackerParams,
    TrackSet,
    associate,
    filter_predictions,
    process_video,
    tracks_from_json,
    tracks_to_json,
)

PALETTE = list(COLORS)


class ColorOracle:
    """Segments every palette colour present in the clip; the query is the colour's one-hot."""

    def __init__(self):
        self.calls = []

    def run_clip(self, frames):
        self.calls.append(np.array(frames))
        masks, queries = [], []
        for k, name in enumerate(PALETTE):
            m = np.all(np.isclose(frames, COLORS[name]), axis=-1)
            if m.any():
                masks.append(m)
                q = np.zeros(len(PALETTE))
                q[k] = 1.0
                queries.append(q)
        n = len(masks)
        T, H, W = frames.shape[:3]
        return ClipDetections(
            masks=np.array(masks, bool).reshape(n, T, H, W),
            confidences=np.ones(n),
            labels=np.full(n, -1),
            origin=[OPEN] * n,
            queries=np.array(queries).reshape(n, len(PALETTE)),
            boxes=np.zeros((n, 4)),
        )

    def caption_clip(self, det, indices):
        return [[PALETTE[int(np.argmax(det.queries[i]))]] for i in indices]


def _scene(objects, n=8, H=24, W=24):
    return generate_video(WorldSpec(H=H, W=W, num_frames=n, objects=objects))


def test_filter_hand_case():
    shape = (4, 1, 10, 10)
    masks = np.zeros(shape, bool)
    masks[0, 0, :5, :5] = True  # cw1, area 25
    masks[1, 0, 5:, 5:] = True  # cw2
    masks[2, 0, :5, 4:10] = True  # ow, IoU with cw1 = 5/50
    conf = [0.9, 0.2, 0.8, 0.0]
    origin = [CLOSED, CLOSED, OPEN, OPEN]
    assert filter_predictions(masks, conf, origin, TrackerParams()) == [0, 2]


def test_filter_closed_world_precedence_and_zero_confidence():
    masks = np.zeros((2, 1, 4, 4), bool)
    masks[:, 0, :2] = True
    assert filter_predictions(masks, [0.9, 0.9], [CLOSED, OPEN], TrackerParams()) == [0]
    assert filter_predictions(masks, [0.0, 0.0], [CLOSED, OPEN], TrackerParams()) == []


def test_filter_drops_empty_masks():
    masks = np.zeros((1, 1, 4, 4), bool)
    assert filter_predictions(masks, [1.0], [CLOSED], TrackerParams()) == []


def test_filter_optional_open_open_suppression():
    masks = np.zeros((2, 1, 4, 4), bool)
    masks[:, 0, :2] = True
    assert filter_predictions(masks, [0.9, 0.8], [OPEN, OPEN], TrackerParams()) == [0, 1]
    assert filter_predictions(masks, [0.8, 0.9], [OPEN, OPEN], TrackerParams(ow_nms_iou=0.5)) == [1]


def _tracks(*queries):
    ts = TrackSet()
    for q in queries:
        ts.new_track(OPEN, -1).last_query = np.asarray(q, float)
    return ts


def test_associate_identity_and_orthogonal():
    ts = _tracks([1, 0, 0])
    assert associate(ts, np.array([[2.0, 0, 0]])) == {0: 0}
    assert associate(ts, np.array([[0, 1.0, 0]])) == {0: -1}
    assert associate(TrackSet(), np.array([[1.0, 0]])) == {0: -1}


def test_associate_crossed_matches_brute_force():
    prev = np.array([[1.0, 0.2], [0.3, 1.0]])
    cur = np.array([[0.2, 1.0], [1.0, 0.1]])
    ts = _tracks(*prev)
    got = associate(ts, cur, gate=1.0)
    pn = prev / np.linalg.norm(prev, axis=1, keepdims=True)
    cn = cur / np.linalg.norm(cur, axis=1, keepdims=True)
    best = brute_force_assignment(1 - pn @ cn.T).sigma
    assert got == {c: r for r, c in best.items()} == {0: 1, 1: 0}


def test_associate_more_tracks_than_predictions():
    ts = _tracks([1, 0, 0], [0, 1, 0], [0, 0, 1])
    assert associate(ts, np.array([[0, 0, 1.0]])) == {0: 2}


def test_single_object_gives_one_track_over_all_frames():
    frames, _ = _scene([ObjectSpec("square", "red", 6, 8, 8, vx=1)], n=7)
    ts = process_video(frames, ColorOracle(), TrackerParams(clip_len=2))
    assert len(ts.tracks) == 1
    tr = ts.tracks[0]
    assert tr.frames == list(range(7))
    # last clip is padded: the caption segment stops at the final real frame
    assert [(a, b) for a, b, _ in tr.captions] == [(0, 1), (2, 3), (4, 5), (6, 6)]


def test_eight_frames_make_four_clips():
    frames, _ = _scene([ObjectSpec("square", "red", 6, 8, 8)], n=8)
    oracle = ColorOracle()
    process_video(frames, oracle, TrackerParams(clip_len=2))
    assert len(oracle.calls) == 4
    oracle = ColorOracle()
    process_video(frames, oracle, TrackerParams(clip_len=1))
    assert len(oracle.calls) == 8


def test_reappearance_keeps_track_id():
    objs = [
        ObjectSpec("square", "red", 6, 6, 6, hidden=(3, 5)),
        ObjectSpec("circle", "blue", 6, 16, 16, vx=0),
    ]
    frames, gt = _scene(objs, n=8)
    assert not any(o.track_id == 0 for o in gt[3] + gt[4])
    ts = process_video(frames, ColorOracle(), TrackerParams(clip_len=1, max_age=2))
    assert len(ts.tracks) == 2
    red = next(t for t in ts.tracks if t.captions[0][2] == ["red"])
    assert red.frames == [0, 1, 2, 5, 6, 7]


def test_retired_track_is_not_revived():
    frames, _ = _scene([ObjectSpec("square", "red", 6, 6, 6, hidden=(2, 6))], n=8)
    ts = process_video(frames, ColorOracle(), TrackerParams(clip_len=1, max_age=2))
    assert [t.frames for t in ts.tracks] == [[0, 1], [6, 7]]


def _summary(ts):
    return [(t.track_id, t.frames, [m.tobytes() for m in t.masks], t.captions) for t in ts.tracks]


@pytest.mark.parametrize("T", [1, 2, 3])
def test_causality_prefix_truncation(T):
    objs = [
        ObjectSpec("square", "red", 6, 4, 6, vx=2, exit=6),
        ObjectSpec("circle", "green", 5, 18, 12, vy=1, enter=2),
        ObjectSpec("bar", "blue", 6, 12, 4, hidden=(3, 5)),
    ]
    frames, _ = _scene(objs, n=9)
    full = process_video(frames, ColorOracle(), TrackerParams(clip_len=T, max_age=2 * T))
    for k in range(1, 9 // T + 1):
        part = process_video(frames[: k * T], ColorOracle(), TrackerParams(clip_len=T, max_age=2 * T))
        cut = k * T
        expect = []
        for t in full.tracks:
            fr = [f for f in t.frames if f < cut]
            if fr:
                expect.append((t.track_id, fr, [m.tobytes() for f, m in zip(t.frames, t.masks) if f < cut],
                               [c for c in t.captions if c[0] < cut]))
        assert _summary(part) == expect


def test_invariants_unique_ids_increasing_frames():
    objs = [ObjectSpec("square", c, 5, 4 + 6 * i, 10, vx=1, hidden=(2 + i, 4 + i)) for i, c in enumerate(PALETTE[:3])]
    frames, _ = _scene(objs, n=10)
    ts = process_video(frames, ColorOracle(), TrackerParams(clip_len=2))
    ids = [t.track_id for t in ts.tracks]
    assert len(ids) == len(set(ids))
    for t in ts.tracks:
        assert all(a < b for a, b in zip(t.frames, t.frames[1:]))
        segs = sorted((a, b) for a, b, _ in t.captions)
        assert all(b1 < a2 for (_, b1), (a2, _) in zip(segs, segs[1:]))


def test_errors():
    with pytest.raises(ValueError):
        process_video(np.zeros((0, 4, 4, 3)), ColorOracle(), TrackerParams())
    with pytest.raises(ValueError):
        process_video(np.zeros((2, 4, 4, 3)), ColorOracle(), TrackerParams(clip_len=0))


def test_json_round_trip():
    frames, _ = _scene([ObjectSpec("square", "red", 6, 8, 8, vx=1), ObjectSpec("ring", "blue", 8, 16, 14)], n=5)
    ts = process_video(frames, ColorOracle(), TrackerParams(clip_len=2))
    d = json.loads(json.dumps(tracks_to_json(ts, ["square"])))
    assert d["format"] == "owvis-tracks"
    assert all(t["class"] == "unknown" for t in d["tracks"])
    back = tracks_from_json(d)
    assert _summary(back) == _summary(ts)
    assert back.next_id == ts.next_id
    with pytest.raises(ValueError):
        tracks_from_json({"tracks": []})
