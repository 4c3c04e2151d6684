"""Minimum-cost bipartite assignment between ground truth and predictions."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

_EPS = 1e-12


class NonFiniteCost(ValueError):
    """The cost matrix contains NaN or infinite entries."""


@dataclass
class Matching:
    """Injective map from GT row index to prediction column index."""

    sigma: dict = field(default_factory=dict)
    total: float = 0.0
    side: str = ""

    def pairs(self) -> list[tuple[int, int]]:
        return sorted(self.sigma.items())

    def pred_indices(self) -> np.ndarray:
        return np.array([self.sigma[g] for g in sorted(self.sigma)], dtype=np.int64)

    def gt_indices(self) -> np.ndarray:
        return np.array(sorted(self.sigma), dtype=np.int64)


def _total(cost: np.ndarray, assign) -> float:
    s = 0.0
    for r, c in enumerate(assign):
        s += float(cost[r, c])
    return s


def _solve(cost: np.ndarray):
    """Shortest-augmenting-path Hungarian method for n <= m.

    Returns (row -> col assignment, row potentials u, col potentials v) such
    that cost[i, j] - u[i] - v[j] >= 0 with equality on assigned edges and
    v[j] == 0 on unassigned columns.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assign = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            assign[p[j] - 1] = j - 1
    return assign, u[1:], v[1:]


def _optimal_value(cost: np.ndarray) -> float:
    if cost.shape[0] == 0:
        return 0.0
    assign, _, _ = _solve(cost)
    return _total(cost, assign)


def _tolerance(cost: np.ndarray) -> float:
    scale = float(np.max(np.abs(cost))) if cost.size else 0.0
    return 1e-9 * (1.0 + scale) * max(1, cost.shape[0])


def hungarian(cost, side: str = "") -> Matching:
    """Exact minimum-cost assignment of every row to a distinct column.

    Among optimal assignments the lexicographically smallest
    (sigma(0), sigma(1), ...) is returned. Only edges with zero reduced cost
    under the optimal potentials can appear in any optimal assignment, so the
    tie-break search only probes those.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    n, m = cost.shape
    if n > m:
        raise ValueError(f"more rows ({n}) than columns ({m})")
    if not np.all(np.isfinite(cost)):
        raise NonFiniteCost("cost matrix has non-finite entries")
    if n == 0:
        return Matching({}, 0.0, side)
    assign, u, v = _solve(cost)
    best = _total(cost, assign)
    tol = _tolerance(cost)
    reduced = cost - u[:, None] - v[None, :]
    fixed: list[int] = []
    spent = 0.0
    current = list(assign)
    for r in range(n):
        used = set(fixed)
        for j in range(current[r]):
            if j in used or reduced[r, j] > tol:
                continue
            rest_cols = [c for c in range(m) if c not in used and c != j]
            sub = cost[r + 1:][:, rest_cols]
            if sub.shape[0]:
                sub_assign, _, _ = _solve(sub)
                rest = _total(sub, sub_assign)
            else:
                sub_assign, rest = [], 0.0
            if spent + cost[r, j] + rest <= best + tol:
                current = fixed + [j] + [rest_cols[c] for c in sub_assign]
                break
        fixed.append(current[r])
        spent += float(cost[r, current[r]])
    sigma = {r: int(c) for r, c in enumerate(current)}
    return Matching(sigma, _total(cost, current), side)


@lru_cache(maxsize=64)
def _injections(n: int, m: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(m), n)), dtype=np.int64).reshape(-1, n)


def brute_force_assignment(cost, side: str = "") -> Matching:
    """Exhaustive search over all injections; same tie-break as ``hungarian``."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n > 7:
        raise ValueError(f"brute force limited to 7 rows, got {n}")
    if n > m:
        raise ValueError(f"more rows ({n}) than columns ({m})")
    if n == 0:
        return Matching({}, 0.0, side)
    perms = _injections(n, m)
    totals = cost[np.arange(n)[None, :], perms].sum(axis=1)
    ok = np.flatnonzero(totals <= totals.min() + _tolerance(cost))
    best = perms[ok[0]]  # permutations are generated in lexicographic order
    return Matching({r: int(c) for r, c in enumerate(best)}, _total(cost, best), side)


def match_cost(p_fg, mask_prob, gt_masks, w_cls: float = 2.0, w_bce: float = 5.0, w_dice: float = 5.0) -> np.ndarray:
    """(G, P) cost = w_cls * -log p_fg + w_bce * BCE + w_dice * Dice.

    p_fg: (P,) foreground probability per prediction, or (G, P) when the
    probability depends on the GT (closed world: probability of its class).
    mask_prob: (P, N) predicted mask probabilities; gt_masks: (G, N) targets
    in [0, 1], both at feature resolution.
    """
    mask_prob = np.asarray(mask_prob, dtype=np.float64)
    gt = np.asarray(gt_masks, dtype=np.float64)
    G, P = gt.shape[0], mask_prob.shape[0]
    p_fg = np.broadcast_to(np.asarray(p_fg, dtype=np.float64), (G, P))
    cls = -np.log(np.clip(p_fg, _EPS, 1.0))
    pc = np.clip(mask_prob, _EPS, 1.0 - _EPS)
    N = gt.shape[1]
    bce = -(gt @ np.log(pc).T + (1.0 - gt) @ np.log(1.0 - pc).T) / N
    inter = gt @ mask_prob.T
    dice = 1.0 - (2.0 * inter + 1.0) / (gt.sum(1)[:, None] + mask_prob.sum(1)[None, :] + 1.0)
    return w_cls * cls + w_bce * bce + w_dice * dice
