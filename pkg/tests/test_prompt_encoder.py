import numpy as np
import pytest

from owvis import numerics as nx
from owvis.numerics import Tensor
from owvis.prompt_encoder import PromptEncoder, encode_points, make_point_grid
from owvis.rng import SplitMix64


def test_grid_sizes():
    assert len(make_point_grid(7)) == 49
    assert np.array_equal(make_point_grid(1).points, [[0.5, 0.5]])
    pts = {tuple(p) for p in make_point_grid(2).points}
    assert pts == {(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)}
    with pytest.raises(ValueError):
        make_point_grid(0)


@pytest.mark.parametrize("g", range(1, 11))
def test_grid_contract(g):
    grid = make_point_grid(g)
    p = grid.points
    assert p.shape == (g * g, 2)
    assert len({tuple(x) for x in p}) == g * g
    for axis in range(2):
        assert p[:, axis].min() == pytest.approx(1 - p[:, axis].max())
    enc = PromptEncoder(SplitMix64(g), 8)
    assert encode_points(enc, grid).shape == (g * g, 8)


def test_full_width_shape_and_determinism():
    enc = PromptEncoder(SplitMix64(0), 256)
    grid = make_point_grid(7)
    a, b = enc(grid).data, enc(grid).data
    assert a.shape == (49, 256)
    assert a.tobytes() == b.tobytes()


def test_distinct_points_give_distinct_rows():
    e = PromptEncoder(SplitMix64(1), 32)(make_point_grid(7)).data
    d = np.linalg.norm(e[:, None] - e[None], axis=-1)
    assert d[~np.eye(49, dtype=bool)].min() > 0


def test_frequencies_frozen_projection_trainable():
    enc = PromptEncoder(SplitMix64(2), 8)
    enc.assign_names()
    before = enc.freq.data.copy()
    w = SplitMix64(5).normal((4, 8))
    grads = nx.backward((enc(make_point_grid(2)) * Tensor(w)).sum())
    assert np.array_equal(enc.freq.grad, np.zeros_like(before))
    assert np.abs(grads["proj.layers.0.W"]).sum() > 0
    trainable = [p for p in enc.parameters() if not p.frozen]
    err = nx.finite_diff_check(lambda: (nx.tanh(enc(make_point_grid(3))) * 0.7).sum(), trainable)
    assert err < 1e-4
