import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from owvis import numerics as nx
from owvis.losses import (
    LossWeights,
    dice_loss,
    detection_loss,
    loss_caption,
    loss_closed_world,
    loss_contrastive,
    loss_open_world,
    loss_total,
)
from owvis.matching import Matching
from owvis.numerics import Parameter, Tensor
from owvis.rng import SplitMix64

from .conftest import assert_bitwise

W = LossWeights()


def test_open_world_no_gt_is_zero():
    r = SplitMix64(0)
    out = loss_open_world(Tensor(r.normal(4)), Tensor(r.normal((4, 5))), np.zeros((0, 5)), Matching({}), W)
    assert float(out.data) == 0.0


def test_open_world_perfect_mask_objectness_zero():
    gt = np.array([[1.0, 1.0, 0.0, 0.0]])
    logits = Tensor([[50.0, 50.0, -50.0, -50.0], [0.3, 0.1, 0.0, 2.0]])
    out = loss_open_world(Tensor([0.0, 4.0]), logits, gt, Matching({0: 0}), W)
    assert float(out.data) == pytest.approx(math.log(2), abs=1e-12)


def test_closed_world_uniform_unmatched():
    out = loss_closed_world(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 4))), [], np.zeros((0, 4)), Matching({}), W)
    assert float(out.data) == pytest.approx(math.log(3), abs=1e-14)


def test_closed_world_all_matched_perfect_only_ce():
    gt = np.array([[1.0, 0.0], [0.0, 1.0]])
    logits = Tensor([[50.0, -50.0], [-50.0, 50.0]])
    cls = Tensor([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    out = loss_closed_world(cls, logits, [0, 1], gt, Matching({0: 0, 1: 1}), W)
    want = nx.cross_entropy(cls, np.array([0, 1])).data.sum()
    assert float(out.data) == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_unmatched_perturbation_contract(seed):
    r = SplitMix64(seed)
    P, M = 5, 8
    gt = r.uniform((2, M))
    sig = Matching({0: 3, 1: 0})
    obj, masks, cls = r.normal(P), r.normal((P, M)), r.normal((P, 4))
    o2, m2, c2 = obj.copy(), masks.copy(), cls.copy()
    for i in (1, 2, 4):
        o2[i] += 5.0
        m2[i] -= 3.0
        c2[i] += r.normal(4)
    assert_bitwise(loss_open_world(Tensor(obj), Tensor(masks), gt, sig, W).data,
                   loss_open_world(Tensor(o2), Tensor(m2), gt, sig, W).data)
    a = loss_closed_world(Tensor(cls), Tensor(masks), [0, 2], gt, sig, W).data
    b = loss_closed_world(Tensor(c2), Tensor(m2), [0, 2], gt, sig, W).data
    assert a != b


def test_contrastive_examples():
    assert float(loss_contrastive(Tensor([[1.0, 2.0]]), [0]).data) == 0.0
    assert float(loss_contrastive(Tensor([[1.0, 2.0], [1.0, 2.0]]), [0, 1]).data) == 0.0
    assert float(loss_contrastive(Tensor([[1.0, 0.0], [0.0, 1.0]]), [0, 1]).data) == pytest.approx(-2.0, abs=1e-9)
    assert float(loss_contrastive(Tensor([[1.0, 0.0], [0.0, 1.0]]), [0, 1], normalize=False).data) == -2.0


def test_contrastive_mean_over_unordered_pairs():
    q = Tensor([[0.0], [1.0], [3.0]])
    # pair distances 1, 3, 2 -> mean 2
    assert float(loss_contrastive(q, [0, 1, 2], normalize=False).data) == -2.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 6), st.booleans())
def test_contrastive_nonpositive(seed, n, norm):
    r = SplitMix64(seed)
    q = r.normal((n, 4))
    v = float(loss_contrastive(Tensor(q), range(n), norm).data)
    assert v <= 0
    same = np.repeat(q[:1], n, axis=0)
    assert float(loss_contrastive(Tensor(same), range(n), norm).data) == 0.0
    if n >= 2:
        assert v < 0


def test_caption_examples():
    logits = [Tensor(np.zeros((3, 32)))]
    assert float(loss_caption(logits, [[4, 5, 1]], [False]).data) == 0.0
    assert float(loss_caption(logits, [[4, 5, 1]], [True]).data) == pytest.approx(math.log(32), abs=1e-14)
    r = SplitMix64(1)
    z = r.normal((3, 32))
    base = float(loss_caption([Tensor(z)], [[4, 5, 1]], [True]).data)
    padded = float(loss_caption([Tensor(np.concatenate([z, r.normal((2, 32))]))], [[4, 5, 1, 2, 2]], [True]).data)
    assert padded == pytest.approx(base, abs=1e-14)
    with pytest.raises(ValueError):
        loss_caption(logits, [[4, 1]], [True])
    with pytest.raises(ValueError):
        loss_caption(logits, [[4, 5, 1]], [True, False])


def test_total_is_weighted_sum():
    comps = {"ow": Tensor(1.0), "cw": Tensor(2.0), "cont": Tensor(-3.0), "cap": Tensor(4.0)}
    ones = LossWeights(ow=1, cw=1, cont=1, cap=1)
    assert float(loss_total(comps, ones).data) == 4.0
    assert float(loss_total(comps, LossWeights(cont=0.0)).data) == 7.0
    assert float(loss_total({"ow": Tensor(1.0)}, ones).data) == 1.0


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(cont=-1)
    with pytest.raises(ValueError):
        LossWeights(cont_scope="some")
    with pytest.raises(ValueError):
        LossWeights(det_mode="poly")


def test_dice_and_box_mode():
    t = np.array([[1.0, 0.0]])
    assert float(dice_loss(Tensor([[60.0, -60.0]]), t).data[0]) == pytest.approx(0.0, abs=1e-12)
    w = LossWeights(det_mode="box")
    boxes = Tensor([[0.5, 0.5, 0.2, 0.2]])
    out = detection_loss(Tensor([[0.0, 0.0]]), t, w, boxes, [[0.4, 0.5, 0.2, 0.5]])
    assert float(out.data) == pytest.approx(0.4, abs=1e-12)


def test_loss_gradients_pass_finite_differences():
    r = SplitMix64(3)
    obj, masks, cls, q = (Parameter(r.normal(s)) for s in [(4,), (4, 6), (4, 3), (4, 5)])
    gt = r.uniform((2, 6))
    sig = Matching({0: 2, 1: 0})
    cap = [Parameter(r.normal((3, 32)))]
    checks = [
        (lambda: loss_open_world(obj, masks, gt, sig, W), [obj, masks]),
        (lambda: loss_closed_world(cls, masks, [1, 0], gt, sig, W), [cls, masks]),
        (lambda: loss_contrastive(q, [0, 1, 3]), [q]),
        (lambda: loss_caption(cap, [[4, 5, 1]], [True]), cap),
    ]
    for f, params in checks:
        assert nx.finite_diff_check(f, params) < 1e-6
