"""Self-contained oracle suite: gradients, assignment, masked attention, loss contracts, metrics.

Every check returns ``CheckResult`` rows; ``run_suite`` collects them and the
``verify`` command exits non-zero when any row fails.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .caption_head import EOS, CaptionHead, build_attention_mask, object_to_text_forward
from .config import Config
from .evalkit import Det, VideoTracks, caption_token_f1, compute_ap, compute_chota, compute_owta
from .losses import LossWeights, loss_caption, loss_closed_world, loss_contrastive, loss_open_world, loss_total
from .matching import Matching, brute_force_assignment, hungarian
from .model import ClipGT, OWVisModel
from .numerics import Parameter, Tensor
from .rng import SplitMix64

GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float = float("nan")
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  value={self.value:.3g}  {self.detail}".rstrip()


# --------------------------------------------------------------------------
# gradients
# --------------------------------------------------------------------------


def micro_config(seed: int) -> Config:
    """8x8 frames, one-frame clips, 4 open + 4 closed queries."""
    return Config(
        seed=seed, precision="float64", height=8, width=8, clip_len=1, ow_grid=2, n_cw_queries=4,
        model_dim=8, decoder_layers=2, n_text=2, o2t_layers=1, max_caption_len=6,
    )


def micro_scene(rng: SplitMix64, cells: int, num_classes: int, vocab_size: int, num_gt: int = 2) -> ClipGT:
    masks = rng.uniform((num_gt, cells))
    masks = np.where(masks > 0.5, masks, 0.0)
    classes = np.array([rng.integers(-1, num_classes) for _ in range(num_gt)], dtype=np.int64)
    if (classes < 0).all():
        classes[0] = 0
    caps = []
    for _ in range(num_gt):
        n = rng.integers(2, 6)
        caps.append([int(t) for t in rng.integers(3, vocab_size, (n,))] + [EOS])
    return ClipGT(masks, classes, rng.uniform((num_gt, 4)), caps, np.ones(num_gt, bool), list(range(num_gt)))


def _loss_inputs(rng: SplitMix64):
    P, G, M, K = 5, 2, 6, 3
    obj = Parameter(rng.normal((P,)))
    masks = Parameter(rng.normal((P, M)))
    cls = Parameter(rng.normal((P, K + 1)))
    q = Parameter(rng.normal((P, 8)))
    gt = rng.uniform((G, M))
    sigma = Matching({0: int(rng.integers(0, 2)), 1: int(rng.integers(2, P))}, 0.0)
    return obj, masks, cls, q, gt, sigma, np.array([rng.integers(0, K), rng.integers(0, K)])


def gradient_checks(seeds=range(20), coords_per_param: int = 2, eps: float = 1e-5) -> list[CheckResult]:
    """Finite differences on each loss term and on the full micro-model."""
    out = []
    w = LossWeights()
    with nx.precision("float64"):
        for seed in seeds:
            rng = SplitMix64(seed)
            obj, masks, cls, q, gt, sigma, gcls = _loss_inputs(rng)
            logits = [Parameter(rng.normal((4, 7))), Parameter(rng.normal((3, 7)))]
            toks = [[4, 5, 6, EOS], [2, 5, EOS]]
            terms = {
                "L_ow": (lambda: loss_open_world(obj, masks, gt, sigma, w), [obj, masks]),
                "L_cw": (lambda: loss_closed_world(cls, masks, gcls, gt, sigma, w), [cls, masks]),
                "L_cont": (lambda: loss_contrastive(q, [0, 2, 3], True), [q]),
                "L_cont_raw": (lambda: loss_contrastive(q, [0, 1, 4], False), [q]),
                "L_cap": (lambda: loss_caption(logits, toks, [True, True]), logits),
                "L_total": (lambda: loss_total({
                    "ow": loss_open_world(obj, masks, gt, sigma, w),
                    "cw": loss_closed_world(cls, masks, gcls, gt, sigma, w),
                    "cont": loss_contrastive(q, [0, 2, 3], True),
                    "cap": loss_caption(logits, toks, [True, True]),
                }, w), [obj, masks, cls, q] + logits),
            }
            for name, (f, params) in terms.items():
                err = nx.finite_diff_check(f, params, eps=eps)
                out.append(CheckResult(f"grad {name} seed={seed}", err < GRAD_TOL, err))
            cfg = micro_config(seed)
            model = OWVisModel(cfg)
            frames = rng.uniform((1, 8, 8, 3))
            scene = micro_scene(rng, 4, model.num_classes, len(model.vocab))
            mw = cfg.loss_weights()

            def f_model():
                comps = model.clip_losses(frames, scene)
                return loss_total(comps, mw)

            params = [p for p in model.parameters() if not p.frozen]
            err = nx.finite_diff_check(f_model, params, eps=eps, coords_per_param=coords_per_param, rng=rng.spawn(7))
            out.append(CheckResult(f"grad micro-model seed={seed}", err < GRAD_TOL, err))
    return out


# --------------------------------------------------------------------------
# assignment
# --------------------------------------------------------------------------


def hungarian_checks(n: int = 1000, seed: int = 0) -> list[CheckResult]:
    rng = SplitMix64(seed)
    bad_total = bad_sigma = 0
    for k in range(n):
        rows = rng.integers(1, 8)
        cols = rng.integers(rows, 9)
        if k % 2:
            cost = rng.integers(0, 4, (rows, cols)).astype(np.float64)  # many ties
        else:
            cost = rng.uniform((rows, cols)) * 10 - 5
        h, b = hungarian(cost), brute_force_assignment(cost)
        bad_total += h.total != b.total
        bad_sigma += h.sigma != b.sigma
    return [
        CheckResult("hungarian total == brute force", bad_total == 0, bad_total, f"{n} matrices"),
        CheckResult("hungarian sigma == brute force", bad_sigma == 0, bad_sigma, f"{n} matrices"),
    ]


# --------------------------------------------------------------------------
# masked caption attention
# --------------------------------------------------------------------------


def masked_attention_checks(n: int = 20, seed: int = 0) -> list[CheckResult]:
    zero_bad = perturb_bad = 0
    for k in range(n):
        rng = SplitMix64(seed).spawn(k)
        C, M, B = 8, 12, 3
        head = CaptionHead(rng, C, 3, 2)
        q = Tensor(rng.normal((B, C)))
        mem = Tensor(rng.normal((M, C)))
        with nx.no_grad():
            empty = np.concatenate([build_attention_mask(np.zeros(M, bool)) for _ in range(B)])
            a = object_to_text_forward(head, q, mem, empty).data
            b = object_to_text_forward(head, q, mem, None).data
            zero_bad += not np.array_equal(a, b)
            bins = rng.uniform((B, M)) > 0.5
            bins[:, 0] = True
            masks = np.concatenate([build_attention_mask(m) for m in bins])
            X = head.initial_state(q)
            mem2 = mem.data.copy()
            outside = ~bins.any(axis=0)
            if not outside.any():
                bins[:, -1] = False
                masks = np.concatenate([build_attention_mask(m) for m in bins])
                outside = ~bins.any(axis=0)
            mem2[outside] += rng.normal((int(outside.sum()), C)) * 10
            layer = head.layers[0]
            t1 = layer.cross_term(X, mem, masks[:, None, :]).data
            t2 = layer.cross_term(X, Tensor(mem2), masks[:, None, :]).data
            perturb_bad += not np.array_equal(t1, t2)
    return [
        CheckResult("all-zero caption mask == unmasked forward", zero_bad == 0, zero_bad, f"{n} instances"),
        CheckResult("masked-out features do not reach the cross term", perturb_bad == 0, perturb_bad, f"{n} instances"),
    ]


# --------------------------------------------------------------------------
# open-world loss contract
# --------------------------------------------------------------------------


def loss_contract_checks(n: int = 20, seed: int = 0) -> list[CheckResult]:
    ow_changed = cw_unchanged = 0
    w = LossWeights()
    for k in range(n):
        rng = SplitMix64(seed).spawn(100 + k)
        P, G, M, K = 6, 2, 10, 3
        gt = rng.uniform((G, M))
        sigma = Matching({0: 1, 1: 4}, 0.0)
        unmatched = np.array([0, 2, 3, 5])
        obj = rng.normal((P,))
        masks = rng.normal((P, M))
        cls = rng.normal((P, K + 1))
        gcls = np.array([0, 2])
        obj2, masks2, cls2 = obj.copy(), masks.copy(), cls.copy()
        obj2[unmatched] += rng.normal((len(unmatched),)) * 3
        masks2[unmatched] += rng.normal((len(unmatched), M)) * 3
        cls2[unmatched] += rng.normal((len(unmatched), K + 1)) * 3
        a = loss_open_world(Tensor(obj), Tensor(masks), gt, sigma, w).data
        b = loss_open_world(Tensor(obj2), Tensor(masks2), gt, sigma, w).data
        ow_changed += not np.array_equal(a, b)
        c = loss_closed_world(Tensor(cls), Tensor(masks), gcls, gt, sigma, w).data
        d = loss_closed_world(Tensor(cls2), Tensor(masks2), gcls, gt, sigma, w).data
        cw_unchanged += np.array_equal(c, d)
    return [
        CheckResult("unmatched open-world predictions leave L_ow bitwise unchanged", ow_changed == 0, ow_changed, f"{n} scenes"),
        CheckResult("unmatched closed-world predictions change L_cw", cw_unchanged == 0, cw_unchanged, f"{n} scenes"),
    ]


# --------------------------------------------------------------------------
# metric hand oracles
# --------------------------------------------------------------------------


def _block(H, W, x0):
    m = np.zeros((H, W), bool)
    m[1:5, x0:x0 + 3] = True
    return m


def metric_fixtures():
    """(gt, perfect prediction, id-swapped prediction) for a 2-object 2-frame scene."""
    A, B = _block(8, 8, 0), _block(8, 8, 4)
    ca, cb = ["a", "red", "square", "moving", "left"], ["a", "blue", "circle", "moving", "up"]
    gt = VideoTracks([[Det(0, A, ca), Det(1, B, cb)]] * 2, {0: "square", 1: "circle"}, {0: 1.0, 1: 1.0})
    perfect = VideoTracks([[Det(7, A, ca), Det(9, B, cb)]] * 2, {}, {7: 0.9, 9: 0.8})
    swap = VideoTracks([[Det(7, A, ca), Det(9, B, cb)], [Det(9, A, ca), Det(7, B, cb)]], {}, {7: 0.9, 9: 0.8})
    return gt, perfect, swap


def metric_checks() -> list[CheckResult]:
    out = []
    gt, perfect, swap = metric_fixtures()
    one = VideoTracks([[gt.frames[0][0]]], {0: "square"})
    res = [
        ("perfect track OWTA == 1", compute_owta([one], [one])["OWTA"], 1.0),
        ("perfect track CHOTA == 1", compute_chota([one], [one])["CHOTA"], 1.0),
        ("perfect scene OWTA == 1", compute_owta([gt], [perfect])["OWTA"], 1.0),
        ("id swap OWTA == sqrt(1/3)", compute_owta([gt], [swap])["OWTA"], math.sqrt(1 / 3)),
        ("id swap CHOTA == (1/3)^(1/3)", compute_chota([gt], [swap])["CHOTA"], (1 / 3) ** (1 / 3)),
        ("caption F1 'a red square' vs 'a red circle' == 2/3", caption_token_f1("a red square".split(), "a red circle".split()), 2 / 3),
        ("AP with 2 GT and 1 perfect prediction == 0.5", compute_ap([gt], [VideoTracks([[Det(3, gt.frames[0][0].mask)]] * 2, {}, {3: 1.0})])[0.5], 0.5),
    ]
    for name, val, want in res:
        err = abs(val - want)
        out.append(CheckResult(name, err <= 1e-9, val, f"expected {want:.12g}"))
    return out


# --------------------------------------------------------------------------


def run_suite(grad_seeds: int = 20, hungarian_n: int = 1000, progress=None) -> list[CheckResult]:
    results = []
    stages = (
        ("gradients", lambda: gradient_checks(range(grad_seeds))),
        ("hungarian", lambda: hungarian_checks(hungarian_n)),
        ("masked attention", masked_attention_checks),
        ("loss contract", loss_contract_checks),
        ("metrics", metric_checks),
    )
    for name, fn in stages:
        t0 = time.perf_counter()
        rows = fn()
        if progress:
            bad = sum(not r.passed for r in rows)
            progress(f"{name}: {len(rows) - bad}/{len(rows)} passed in {time.perf_counter() - t0:.1f}s")
        results.extend(rows)
    return results
