"""Synthetic videos of moving 2-D shapes with exact ground truth.

Every object is a parameterized shape evaluated at pixel centers, so masks
are exact and boxes are the tight boxes of the visible masks. Objects are
drawn back to front in creation order; each object's mask is its visible
region after later objects have been painted over it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .masks import rle_decode, rle_encode, tight_box
from .rng import SplitMix64

SHAPES = ("square", "circle", "triangle", "cross", "ring", "bar")
COLORS = {
    "red": (0.95, 0.15, 0.15),
    "green": (0.15, 0.85, 0.2),
    "blue": (0.2, 0.3, 0.95),
    "yellow": (0.95, 0.9, 0.15),
    "cyan": (0.15, 0.9, 0.9),
    "magenta": (0.9, 0.2, 0.85),
    "orange": (0.95, 0.55, 0.1),
    "white": (0.95, 0.95, 0.95),
}
DIRECTIONS = ("left", "right", "up", "down", "still")
_DIR_VEC = {"left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1), "still": (0, 0)}
BACKGROUND = (0.08, 0.08, 0.08)
UNKNOWN = -1

OWT_MAGIC = b"OWVT"
OWT_VERSION = 1


class DatasetError(ValueError):
    """Malformed dataset on disk; the message starts with a short error code."""


@dataclass
class ObjectSpec:
    shape: str
    color: str
    size: int
    x: float
    y: float
    vx: int = 0
    vy: int = 0
    enter: int = 0
    exit: int | None = None
    hidden: tuple[int, int] | None = None  # absent on frames [a, b)
    caption_present: bool = True

    def visible_at(self, t: int) -> bool:
        if t < self.enter or (self.exit is not None and t >= self.exit):
            return False
        if self.hidden is not None and self.hidden[0] <= t < self.hidden[1]:
            return False
        return True


@dataclass
class WorldSpec:
    H: int = 64
    W: int = 64
    num_frames: int = 8
    shape_classes: tuple = SHAPES
    colors: tuple = tuple(COLORS)
    max_objects: int = 4
    min_objects: int = 1
    size_range: tuple = (10, 16)
    max_speed: int = 2
    occlusion_prob: float = 0.1
    reappear_prob: float = 0.15
    caption_drop_prob: float = 0.1
    seed: int = 0
    objects: list | None = None  # explicit scene; bypasses random sampling

    def validate(self) -> None:
        if len(self.shape_classes) == 0:
            raise ValueError("world spec has zero shape classes")
        if not 1 <= self.max_objects <= 8:
            raise ValueError("max_objects must lie in [1, 8]")
        if self.min_objects < 0 or self.min_objects > self.max_objects:
            raise ValueError("min_objects out of range")
        unknown = set(self.shape_classes) - set(SHAPES)
        if unknown:
            raise ValueError(f"unknown shape classes {sorted(unknown)}")
        if self.H < 1 or self.W < 1 or self.num_frames < 1:
            raise ValueError("frame extents must be positive")


@dataclass
class ObjectRecord:
    track_id: int
    class_id: int
    shape: str
    color: str
    mask: np.ndarray
    box: list
    caption: list
    caption_present: bool


@dataclass
class Video:
    name: str
    frames: np.ndarray  # (T, H, W, 3) float32
    gt: list  # per frame: list[ObjectRecord]
    split: str = "train"

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def track_ids(self) -> list[int]:
        return sorted({o.track_id for fr in self.gt for o in fr})


def direction_of(vx: int, vy: int) -> str:
    if vx == 0 and vy == 0:
        return "still"
    if abs(vx) >= abs(vy):
        return "right" if vx > 0 else "left"
    return "down" if vy > 0 else "up"


def caption_tokens(color: str, shape: str, vx: int, vy: int) -> list[str]:
    return ["a", color, shape, "moving", direction_of(vx, vy)]


def shape_mask(shape: str, cx: float, cy: float, size: int, H: int, W: int) -> np.ndarray:
    ys = np.arange(H)[:, None] + 0.5
    xs = np.arange(W)[None, :] + 0.5
    dx, dy = xs - cx, ys - cy
    r = size / 2.0
    if shape == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if shape == "circle":
        return dx * dx + dy * dy <= r * r
    if shape == "triangle":
        return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2.0)
    if shape == "cross":
        arm = size / 6.0
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= r))
    if shape == "ring":
        d2 = dx * dx + dy * dy
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    if shape == "bar":
        return (np.abs(dx) <= r) & (np.abs(dy) <= size / 5.0)
    raise ValueError(f"unknown shape {shape!r}")


def _sample_objects(spec: WorldSpec, rng: SplitMix64) -> list[ObjectSpec]:
    n = rng.integers(spec.min_objects, spec.max_objects + 1)
    objs: list[ObjectSpec] = []
    T = spec.num_frames
    for _ in range(n):
        shape = rng.choice(list(spec.shape_classes))
        color = rng.choice(list(spec.colors))
        size = rng.integers(spec.size_range[0], spec.size_range[1] + 1)
        direction = rng.choice(list(DIRECTIONS))
        speed = rng.integers(1, spec.max_speed + 1)
        ux, uy = _DIR_VEC[direction]
        vx, vy = ux * speed, uy * speed
        # keep the object fully inside the frame for the whole video
        margin = size / 2 + 1
        span_x = (min(0, vx * (T - 1)), max(0, vx * (T - 1)))
        span_y = (min(0, vy * (T - 1)), max(0, vy * (T - 1)))
        lo_x, hi_x = margin - span_x[0], spec.W - margin - span_x[1]
        lo_y, hi_y = margin - span_y[0], spec.H - margin - span_y[1]
        if hi_x <= lo_x or hi_y <= lo_y:
            vx = vy = 0
            lo_x, hi_x, lo_y, hi_y = margin, spec.W - margin, margin, spec.H - margin
        if objs and rng.uniform() < spec.occlusion_prob:
            anchor = objs[rng.integers(0, len(objs))]
            x = float(np.clip(anchor.x + (rng.uniform() - 0.5) * size, lo_x, hi_x))
            y = float(np.clip(anchor.y + (rng.uniform() - 0.5) * size, lo_y, hi_y))
        else:
            x = float(np.floor(lo_x + rng.uniform() * (hi_x - lo_x)))
            y = float(np.floor(lo_y + rng.uniform() * (hi_y - lo_y)))
        hidden = None
        if T >= 4 and rng.uniform() < spec.reappear_prob:
            a = rng.integers(1, T - 2)
            hidden = (a, a + rng.integers(1, 3))
        present = rng.uniform() >= spec.caption_drop_prob
        objs.append(ObjectSpec(shape, color, size, x, y, vx, vy, hidden=hidden, caption_present=bool(present)))
    return objs


def generate_video(spec: WorldSpec, name: str = "video", class_ids: dict | None = None):
    """Render one video; returns ``(frames, gt)``.

    ``class_ids`` maps shape name to class id (default: index in
    ``spec.shape_classes``); shapes missing from it get ``UNKNOWN``.
    """
    spec.validate()
    rng = SplitMix64(spec.seed)
    objs = list(spec.objects) if spec.objects is not None else _sample_objects(spec, rng)
    if class_ids is None:
        class_ids = {s: i for i, s in enumerate(spec.shape_classes)}
    T, H, W = spec.num_frames, spec.H, spec.W
    frames = np.empty((T, H, W, 3), dtype=np.float32)
    gt = []
    for t in range(T):
        img = np.empty((H, W, 3), dtype=np.float32)
        img[:] = BACKGROUND
        raw = []
        for o in objs:
            m = shape_mask(o.shape, o.x + o.vx * t, o.y + o.vy * t, o.size, H, W) if o.visible_at(t) else np.zeros((H, W), bool)
            raw.append(m)
            img[m] = COLORS[o.color]
        frames[t] = img
        records = []
        covered = np.zeros((H, W), dtype=bool)
        for k in range(len(objs) - 1, -1, -1):
            vis = raw[k] & ~covered
            covered |= raw[k]
            if not vis.any():
                continue
            o = objs[k]
            records.append(
                ObjectRecord(
                    track_id=k,
                    class_id=class_ids.get(o.shape, UNKNOWN),
                    shape=o.shape,
                    color=o.color,
                    mask=vis,
                    box=tight_box(vis),
                    caption=caption_tokens(o.color, o.shape, o.vx, o.vy),
                    caption_present=o.caption_present,
                )
            )
        records.sort(key=lambda r: r.track_id)
        gt.append(records)
    return frames, gt


def split_open_world(classes, heldout) -> tuple[list, list, list]:
    """(train classes, eval-common classes, eval-uncommon classes)."""
    classes = list(classes)
    heldout = set(heldout)
    if not heldout:
        raise ValueError("held-out class set must be nonempty")
    if not heldout <= set(classes):
        raise ValueError(f"held-out classes {sorted(heldout - set(classes))} not in class list")
    if heldout == set(classes):
        raise ValueError("held-out classes cover the full class set")
    train = [c for c in classes if c not in heldout]
    return train, list(train), [c for c in classes if c in heldout]


@dataclass
class DatasetSpec:
    world: WorldSpec = field(default_factory=WorldSpec)
    heldout: tuple = ("cross", "ring")
    num_train: int = 48
    num_eval: int = 16
    seed: int = 0


def generate_dataset(ds: DatasetSpec) -> tuple[list[Video], dict]:
    """Train videos draw only non-held-out classes; eval videos draw all classes."""
    train_cls, common, uncommon = split_open_world(ds.world.shape_classes, ds.heldout)
    ids = {c: i for i, c in enumerate(train_cls)}
    root = SplitMix64(ds.seed)
    videos = []
    for split, n, classes in (("train", ds.num_train, train_cls), ("eval", ds.num_eval, list(ds.world.shape_classes))):
        for i in range(n):
            spec = replace(ds.world, shape_classes=tuple(classes), seed=root.next_u64(), objects=None)
            frames, gt = generate_video(spec, class_ids=ids)
            videos.append(Video(f"{split}_{i:04d}", frames, gt, split))
    meta = {
        "classes": list(ds.world.shape_classes),
        "train_classes": train_cls,
        "common": common,
        "uncommon": uncommon,
        "heldout": sorted(ds.heldout),
    }
    return videos, meta


# --------------------------------------------------------------------------
# on-disk format
# --------------------------------------------------------------------------


def write_frames(path: Path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    T, H, W, C = frames.shape
    with open(path, "wb") as fh:
        fh.write(OWT_MAGIC)
        fh.write(struct.pack("<IIIII", OWT_VERSION, T, H, W, C))
        fh.write(frames.tobytes())


def read_frames(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise DatasetError(f"truncated: {path} header is {len(raw)} bytes")
    if raw[:4] != OWT_MAGIC:
        raise DatasetError(f"bad-magic: {path} starts with {raw[:4]!r}")
    version, T, H, W, C = struct.unpack("<IIIII", raw[4:24])
    if version != OWT_VERSION:
        raise DatasetError(f"bad-version: {path} has version {version}")
    n = T * H * W * C * 4
    if len(raw) - 24 != n:
        raise DatasetError(f"truncated: {path} has {len(raw) - 24} data bytes, expected {n}")
    return np.frombuffer(raw, dtype="<f4", offset=24).reshape(T, H, W, C).astype(np.float32)


def _annos_to_json(video: Video) -> dict:
    objects = {}
    frames = []
    for fr in video.gt:
        recs = []
        for o in fr:
            objects.setdefault(
                str(o.track_id),
                {"shape": o.shape, "color": o.color, "class_id": o.class_id, "caption": o.caption, "caption_present": o.caption_present},
            )
            recs.append({"track_id": o.track_id, "rle": rle_encode(o.mask), "box": o.box})
        frames.append(recs)
    T, H, W, _ = video.frames.shape
    return {"video": video.name, "split": video.split, "num_frames": T, "height": H, "width": W, "objects": objects, "frames": frames}


def _annos_from_json(d: dict) -> list:
    objects = d["objects"]
    gt = []
    for recs in d["frames"]:
        fr = []
        for r in recs:
            info = objects[str(r["track_id"])]
            fr.append(
                ObjectRecord(
                    track_id=int(r["track_id"]),
                    class_id=int(info["class_id"]),
                    shape=info["shape"],
                    color=info["color"],
                    mask=rle_decode(r["rle"]),
                    box=list(r["box"]),
                    caption=list(info["caption"]),
                    caption_present=bool(info["caption_present"]),
                )
            )
        gt.append(fr)
    return gt


def write_dataset(out_dir, videos: list[Video], meta: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"format": "owvis-dataset", "version": 1, **(meta or {}), "videos": []}
    for v in videos:
        vdir = out / v.name
        vdir.mkdir(exist_ok=True)
        write_frames(vdir / "frames.owt", v.frames)
        (vdir / "annos.json").write_text(json.dumps(_annos_to_json(v)))
        manifest["videos"].append({"name": v.name, "split": v.split})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise DatasetError(f"missing-manifest: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"bad-manifest: {exc}") from exc
    if manifest.get("format") != "owvis-dataset" or manifest.get("version") != 1:
        raise DatasetError("bad-version: unsupported manifest format")
    return manifest


def read_dataset(data_dir, split: str | None = None) -> tuple[list[Video], dict]:
    root = Path(data_dir)
    manifest = read_manifest(root)
    videos = []
    for entry in manifest["videos"]:
        if split is not None and entry["split"] != split:
            continue
        vdir = root / entry["name"]
        frames = read_frames(vdir / "frames.owt")
        try:
            annos = json.loads((vdir / "annos.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"bad-annotations: {vdir}: {exc}") from exc
        videos.append(Video(entry["name"], frames, _annos_from_json(annos), entry["split"]))
    return videos, manifest


def world_to_dict(world: WorldSpec) -> dict:
    d = asdict(world)
    d.pop("objects")
    return d
