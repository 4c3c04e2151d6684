"""Grid-of-points prompts turned into open-world query embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import MLP, Module, Parameter, Tensor
from .rng import SplitMix64


@dataclass(frozen=True)
class PointGrid:
    g: int
    points: np.ndarray  # (g*g, 2) as (x, y) in normalized frame coordinates

    def __len__(self) -> int:
        return len(self.points)


def make_point_grid(g: int) -> PointGrid:
    """g x g equally spaced points; point (i, j) sits at ((i+0.5)/g, (j+0.5)/g)."""
    if g < 1:
        raise ValueError(f"grid side must be >= 1, got {g}")
    c = (np.arange(g) + 0.5) / g
    xs, ys = np.meshgrid(c, c, indexing="ij")
    return PointGrid(g, np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1))


class PromptEncoder(Module):
    """Random Fourier features of point coordinates followed by a trainable MLP.

    The frequency matrix is drawn once and frozen; only the projection learns.
    """

    def __init__(self, rng: SplitMix64, dim: int, fourier_scale: float = 1.0):
        if dim % 2:
            raise ValueError("prompt encoder width must be even")
        self.freq = Parameter(rng.normal((2, dim // 2)) * fourier_scale, frozen=True)
        self.proj = MLP(rng, [dim, dim, dim])

    def fourier_features(self, grid: PointGrid) -> np.ndarray:
        ang = 2.0 * np.pi * grid.points @ self.freq.data
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    def __call__(self, grid: PointGrid) -> Tensor:
        return self.proj(Tensor(self.fourier_features(grid)))


def encode_points(encoder: PromptEncoder, grid: PointGrid) -> Tensor:
    return encoder(grid)
