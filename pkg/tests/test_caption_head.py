import numpy as np
import pytest

from owvis import numerics as nx
from owvis.caption_head import (
    BOS,
    EOS,
    PAD,
    UNK,
    CaptionDecoder,
    CaptionHead,
    Vocabulary,
    build_attention_mask,
    caption_logits,
    decode_caption,
    object_to_text_forward,
)
from owvis.numerics import Parameter, Tensor
from owvis.rng import SplitMix64
from owvis.synthworld import COLORS, DIRECTIONS, SHAPES

from .conftest import assert_bitwise


def test_vocabulary_contract():
    v = Vocabulary()
    assert len(v) == 32
    assert (v.token_id("<bos>"), v.token_id("<eos>"), v.token_id("<pad>")) == (BOS, EOS, PAD)
    for w in ["a", "moving", *COLORS, *SHAPES, *DIRECTIONS]:
        assert w in v
    assert v.token_id("zebra") == UNK
    ids = v.encode(["a", "red", "ring"])
    assert ids[-1] == EOS
    assert v.decode(ids + [v.token_id("blue")]) == ["a", "red", "ring"]
    with pytest.raises(ValueError):
        Vocabulary(["a", "b", "c"])


def test_build_attention_mask_cases():
    assert np.array_equal(build_attention_mask(np.ones((2, 2, 2))), np.zeros((1, 8)))
    assert np.array_equal(build_attention_mask(np.zeros((2, 2, 2))), np.zeros((1, 8)))
    single = np.zeros((2, 2, 2), bool)
    single[1, 0, 1] = True
    m = build_attention_mask(single)
    assert m.shape == (1, 8)
    assert m[0, 1 * 4 + 0 * 2 + 1] == 0  # time-major, then row-major
    assert np.isneginf(m).sum() == 7


def setup(seed=0, C=8, n_text=3, layers=1, B=2, M=6):
    r = SplitMix64(seed)
    head = CaptionHead(r, C, n_text, layers)
    return head, Tensor(r.normal((B, C))), Tensor(r.normal((M, C))), r


def test_output_rows():
    head, q, mem, _ = setup(n_text=32, B=1)
    assert object_to_text_forward(head, q, mem, None).shape == (1, 33, 8)


def test_zero_mask_reduces_to_masked_attention_update():
    head, q, mem, _ = setup()
    layer = head.layers[0]
    layer.self_attn.o.W.data[:] = 0
    layer.self_attn.o.b.data[:] = 0
    layer.ffn.layers[-1].W.data[:] = 0
    layer.ffn.layers[-1].b.data[:] = 0
    X0 = head.initial_state(q)
    out = object_to_text_forward(head, q, mem, np.zeros((2, 6))).data
    ref = nx.softmax_lastdim(layer.wq(X0) * layer.scale @ nx.transpose(layer.wk(mem))) @ layer.wv(mem) + X0
    assert np.allclose(out, ref.data, atol=1e-14)


def test_zero_mask_bitwise_equals_unmasked():
    head, q, mem, _ = setup(layers=2)
    assert_bitwise(object_to_text_forward(head, q, mem, np.zeros((2, 6))).data,
                   object_to_text_forward(head, q, mem, None).data)


@pytest.mark.parametrize("seed", range(20))
def test_masked_out_cells_do_not_reach_cross_term(seed):
    head, q, mem, r = setup(seed)
    bins = r.uniform((2, 6)) > 0.5
    bins[:, 0] = True
    bins[:, 5] = False
    masks = np.concatenate([build_attention_mask(b) for b in bins])
    mem2 = mem.data.copy()
    dead = ~bins.any(axis=0)
    mem2[dead] = r.normal((int(dead.sum()), 8)) * 50
    X = head.initial_state(q)
    layer = head.layers[0]
    assert_bitwise(layer.cross_term(X, mem, masks[:, None, :]).data, layer.cross_term(X, Tensor(mem2), masks[:, None, :]).data)


def test_swapping_objects_swaps_captions():
    head, q, mem, r = setup(layers=2)
    dec = CaptionDecoder(r, 8, 32, 8)
    masks = np.concatenate([build_attention_mask(m) for m in (r.uniform(6) > 0.3, r.uniform(6) > 0.6)])
    a = object_to_text_forward(head, q, mem, masks)
    b = object_to_text_forward(head, q[np.array([1, 0])], mem, masks[::-1])
    assert np.allclose(a.data[::-1], b.data, atol=1e-13)
    ca, cb = decode_caption(a, dec, 6), decode_caption(b, dec, 6)
    assert ca[::-1] == cb


def test_decode_stops_immediately_on_eos():
    r = SplitMix64(1)
    dec = CaptionDecoder(r, 8, 32, 8)
    dec.out.W.data[:] = 0
    dec.out.b.data[:] = 0
    dec.out.b.data[EOS] = 1.0
    assert decode_caption(Tensor(r.normal((3, 4, 8))), dec, 8) == [[], [], []]
    with pytest.raises(ValueError):
        decode_caption(Tensor(r.normal((1, 4, 8))), dec, 0)


def test_decode_is_deterministic_and_bounded():
    r = SplitMix64(2)
    dec = CaptionDecoder(r, 8, 32, 8)
    q = Tensor(r.normal((2, 4, 8)))
    a, b = decode_caption(q, dec, 5), decode_caption(q, dec, 5)
    assert a == b
    assert all(len(s) <= 5 and all(0 <= t < 32 for t in s) for s in a)


def test_teacher_forcing_is_causal():
    r = SplitMix64(3)
    dec = CaptionDecoder(r, 8, 32, 8)
    q = Tensor(r.normal((1, 4, 8)))
    toks = [5, 6, 7, 8, EOS]
    base = caption_logits(q, dec, [toks])[0].data
    assert base.shape == (5, 32)
    for t in range(len(toks)):
        alt = list(toks)
        alt[t] = 9 if toks[t] != 9 else 10
        out = caption_logits(q, dec, [alt])[0].data
        assert_bitwise(out[: t + 1], base[: t + 1])
        if t + 1 < len(toks):
            assert not np.array_equal(out[t + 1], base[t + 1])
    with pytest.raises(ValueError):
        caption_logits(q, dec, [[40, EOS]])


def test_gradients_reach_head_but_not_frozen_decoder():
    head, _, mem, r = setup(layers=2)
    head.assign_names("head.")
    q = Parameter(r.normal((2, 8)))
    dec = CaptionDecoder(r, 8, 32, 8, mode="frozen-random")
    assert all(p.frozen for p in dec.parameters())
    masks = np.concatenate([build_attention_mask(m) for m in (r.uniform(6) > 0.3, r.uniform(6) > 0.6)])
    qt = object_to_text_forward(head, q, mem, masks)
    logits = caption_logits(qt, dec, [[4, 5, EOS], [6, EOS]])
    loss = nx.cross_entropy(logits[0], np.array([4, 5, EOS])).sum() + nx.cross_entropy(logits[1], np.array([6, EOS])).sum()
    nx.backward(loss)
    assert np.abs(q.grad).sum() > 0
    assert np.abs(head.e_text.grad).sum() > 0
    assert np.abs(head.layers[0].wq.W.grad).sum() > 0
    for p in dec.parameters():
        assert not p.grad.any()


def test_bad_decoder_mode():
    with pytest.raises(ValueError):
        CaptionDecoder(SplitMix64(0), 8, 32, 8, mode="other")
