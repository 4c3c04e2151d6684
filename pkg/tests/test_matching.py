import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from owvis.matching import brute_force_assignment, hungarian, match_cost
from owvis.rng import SplitMix64


def test_two_by_two_hand_case():
    m = hungarian([[4, 1], [2, 8]])
    assert m.sigma == {0: 1, 1: 0} and m.total == 3
    assert m.pairs() == [(0, 1), (1, 0)]
    assert list(m.pred_indices()) == [1, 0] and list(m.gt_indices()) == [0, 1]


def test_diagonal_zero_gives_identity():
    c = np.ones((4, 4)) - np.eye(4)
    assert hungarian(c).sigma == {0: 0, 1: 1, 2: 2, 3: 3}


def test_all_equal_costs_pick_lexicographic_smallest():
    assert hungarian(np.ones((3, 3))).sigma == {0: 0, 1: 1, 2: 2}
    assert hungarian(np.full((2, 5), 7.0)).sigma == {0: 0, 1: 1}


def test_brute_force_small_cases():
    assert brute_force_assignment([[3.0]]).sigma == {0: 0}
    assert brute_force_assignment([[1, 9, 9], [9, 1, 9]]).sigma == {0: 0, 1: 1}
    with pytest.raises(ValueError):
        brute_force_assignment(np.zeros((8, 8)))


def test_errors():
    with pytest.raises(ValueError):
        hungarian(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        hungarian([[0.0, np.inf]])
    assert hungarian(np.zeros((0, 3))).sigma == {}


def _random_cost(seed):
    r = SplitMix64(seed)
    n = r.integers(1, 8)
    m = r.integers(n, 9)
    if seed % 2:
        return r.integers(0, 3, (n, m)).astype(float)
    return r.normal((n, m))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**40))
def test_matches_brute_force(seed):
    c = _random_cost(seed)
    h, b = hungarian(c), brute_force_assignment(c)
    assert h.total == b.total
    assert h.sigma == b.sigma
    assert len(set(h.sigma.values())) == len(h.sigma) == c.shape[0]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**40), st.sampled_from([0.5, 3.0, 1024.0]))
def test_positive_scaling_keeps_assignment(seed, k):
    c = _random_cost(seed)
    assert hungarian(c).sigma == hungarian(c * k).sigma


def test_tie_break_against_enumeration():
    c = np.array([[1, 1, 2], [1, 1, 2]], float)
    best = min(itertools.permutations(range(3), 2), key=lambda p: (c[0, p[0]] + c[1, p[1]], p))
    assert tuple(hungarian(c).sigma.values()) == best == (0, 1)


def test_match_cost_perfect_is_zero():
    gt = np.array([[1.0, 1.0, 0.0, 0.0]])
    assert match_cost([1.0], gt, gt)[0, 0] == pytest.approx(0.0, abs=1e-9)


def test_match_cost_identical_predictions_identical_columns():
    r = SplitMix64(0)
    probs = r.uniform((1, 6))
    c = match_cost([0.7, 0.7], np.concatenate([probs, probs]), r.uniform((3, 6)))
    assert np.array_equal(c[:, 0], c[:, 1])


def test_match_cost_hand_case():
    gt = np.array([[1.0, 1.0, 0.0, 0.0]])
    pred = np.array([[0.2, 0.2, 0.8, 0.8]])
    want = -np.log(0.5) + (-np.log(0.2)) + (1 - (2 * 0.4 + 1) / (2 + 2 + 1))
    assert match_cost([0.5], pred, gt, 1, 1, 1)[0, 0] == pytest.approx(want, abs=1e-12)


def test_match_cost_per_gt_probabilities():
    gt = np.eye(2)
    c = match_cost(np.array([[0.5, 1.0], [1.0, 0.5]]), np.full((2, 2), 0.5), gt, 1, 0, 0)
    assert np.allclose(c, [[np.log(2), 0], [0, np.log(2)]])
