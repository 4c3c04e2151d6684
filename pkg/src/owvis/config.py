"""Plain-text ``key = value`` configuration with typed defaults."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .losses import LossWeights
from .synthworld import SHAPES, DatasetSpec, WorldSpec


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    seed: int = 0
    precision: str = "float32"
    # optimizer
    lr: float = 1e-4
    weight_decay: float = 0.05
    batch_size: int = 8
    train_steps: int = 300
    # synthetic world
    height: int = 64
    width: int = 64
    video_frames: int = 8
    max_objects: int = 4
    min_objects: int = 1
    heldout: str = "cross,ring"
    num_train_videos: int = 48
    num_eval_videos: int = 16
    occlusion_prob: float = 0.1
    reappear_prob: float = 0.15
    caption_drop_prob: float = 0.1
    # prompt encoder
    ow_grid: int = 7
    ow_fourier_scale: float = 1.0
    # object transformer
    n_cw_queries: int = 10
    decoder_layers: int = 3
    model_dim: int = 32
    clip_len: int = 2
    # captioning
    n_text: int = 8
    o2t_layers: int = 2
    decoder_mode: str = "trainable"
    max_caption_len: int = 8
    # losses
    lambda_ow: float = 1.0
    lambda_cw: float = 1.0
    lambda_cont: float = 0.1
    lambda_cap: float = 1.0
    cost_cls: float = 2.0
    cost_bce: float = 5.0
    cost_dice: float = 5.0
    det_bce: float = 1.0
    det_dice: float = 1.0
    noobj_weight: float = 1.0
    cont_scope: str = "foreground"
    cont_normalize: bool = True
    det_mode: str = "mask"
    # ablation switches
    open_queries: bool = True
    caption_mask: bool = True
    # tracker
    tau_cw: float = 0.5
    tau_ow: float = 0.5
    ow_nms_iou: float = 1.0  # 1.0 disables open-open suppression
    assoc_gate: float = 0.5
    max_age: int = 0  # 0 means 2 * clip_len

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.decoder_mode not in ("trainable", "frozen-random"):
            raise ConfigError(f"decoder_mode must be trainable or frozen-random, got {self.decoder_mode!r}")
        for key in ("batch_size", "decoder_layers", "model_dim", "clip_len", "ow_grid", "n_text", "max_caption_len"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.model_dim % 2:
            raise ConfigError("model_dim must be even")
        if self.train_steps < 0:
            raise ConfigError("train_steps must be >= 0")
        if self.height % 4 or self.width % 4:
            raise ConfigError("frame extents must be divisible by 4")
        unknown = set(self.heldout_classes()) - set(SHAPES)
        if unknown:
            raise ConfigError(f"unknown held-out classes {sorted(unknown)}")
        try:
            self.loss_weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # derived views -------------------------------------------------------

    def heldout_classes(self) -> list[str]:
        return [c.strip() for c in self.heldout.split(",") if c.strip()]

    def train_classes(self) -> list[str]:
        held = set(self.heldout_classes())
        return [c for c in SHAPES if c not in held]

    @property
    def effective_max_age(self) -> int:
        return self.max_age if self.max_age > 0 else 2 * self.clip_len

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            ow=self.lambda_ow if self.open_queries else 0.0,
            cw=self.lambda_cw,
            cont=self.lambda_cont,
            cap=self.lambda_cap,
            cost_cls=self.cost_cls,
            cost_bce=self.cost_bce,
            cost_dice=self.cost_dice,
            det_bce=self.det_bce,
            det_dice=self.det_dice,
            noobj=self.noobj_weight,
            cont_scope=self.cont_scope,
            cont_normalize=self.cont_normalize,
            det_mode=self.det_mode,
        )

    def world(self) -> WorldSpec:
        return WorldSpec(
            H=self.height,
            W=self.width,
            num_frames=self.video_frames,
            max_objects=self.max_objects,
            min_objects=self.min_objects,
            occlusion_prob=self.occlusion_prob,
            reappear_prob=self.reappear_prob,
            caption_drop_prob=self.caption_drop_prob,
            seed=self.seed,
        )

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            world=self.world(),
            heldout=tuple(self.heldout_classes()),
            num_train=self.num_train_videos,
            num_eval=self.num_eval_videos,
            seed=self.seed,
        )

    def replace(self, **changes) -> "Config":
        d = asdict(self)
        for k in changes:
            if k not in d:
                raise ConfigError(f"unknown config key {k!r}")
        d.update(changes)
        return Config(**d)

    # text form -----------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Config":
        types = {f.name: type(f.default) for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            values[key] = _parse(val, types[key], key)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "Config":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def _parse(val: str, typ, key: str):
    try:
        if typ is bool:
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
        if typ is int:
            return int(val)
        if typ is float:
            return float(val)
        return val
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {val!r}") from exc
