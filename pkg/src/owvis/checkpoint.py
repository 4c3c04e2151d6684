"""Binary checkpoint format.

Layout (little-endian):

    b"OWCK"  u32 version  u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 rank, u32 dims..., float32 data
    u32 length + UTF-8 config text
    u32 length + UTF-8 vocabulary (one token per line)
"""

from __future__ import annotations

import struct

import numpy as np

from .caption_head import Vocabulary
from .config import Config

MAGIC = b"OWCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model) -> None:
    params = list(model.named_parameters())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params)))
        for name, p in params:
            raw = name.encode("utf-8")
            data = np.ascontiguousarray(p.data, dtype="<f4")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())
        for block in (model.cfg.to_text(), "\n".join(model.vocab.tokens)):
            raw = block.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> tuple[dict, Config, Vocabulary]:
    """Returns (name -> float32 array, config, vocabulary)."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic: not an OWCK checkpoint")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).copy()
    blocks = []
    for _ in range(2):
        (n,) = r.unpack("<I")
        blocks.append(r.take(n).decode("utf-8"))
    cfg = Config.from_text(blocks[0])
    vocab = Vocabulary(blocks[1].split("\n"))
    return tensors, cfg, vocab


def load_into(model, tensors: dict) -> None:
    params = dict(model.named_parameters())
    if set(params) != set(tensors):
        missing = sorted(set(params) - set(tensors))
        extra = sorted(set(tensors) - set(params))
        raise CheckpointError(f"parameter names differ from the architecture (missing {missing[:3]}, extra {extra[:3]})")
    for name, p in params.items():
        if p.data.shape != tensors[name].shape:
            raise CheckpointError(f"shape mismatch for {name}: {tensors[name].shape} vs {p.data.shape}")
        p.data = tensors[name].astype(p.data.dtype)


def load_checkpoint(path):
    """Rebuild the model described by the checkpoint's config and fill in its weights."""
    from . import numerics as nx
    from .model import OWVisModel

    tensors, cfg, vocab = read_checkpoint(path)
    with nx.precision(cfg.precision):
        model = OWVisModel(cfg, vocab=vocab)
    load_into(model, tensors)
    return model
