"""Dense tensors with reverse-mode automatic differentiation.

Every op records a closure that maps the output gradient to gradients of its
inputs. ``backward`` walks the recorded graph in a fixed reverse topological
order, so two runs on the same inputs produce bitwise identical gradients.

Broadcasting is deliberately narrow: operands must have equal shapes, or one
operand is a scalar, or one operand's shape is a suffix of the other's
(a leading batch dimension). Anything else is a ``ShapeError``.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .rng import SplitMix64

_PRECISIONS = {"float64": np.float64, "float32": np.float32}
_dtype = np.float64
_grad_enabled = True
_debug = False


class ShapeError(ValueError):
    pass


class EmptyAttentionRowError(ValueError):
    def __init__(self, msg: str = "empty-attention-row"):
        super().__init__(msg)


class GradientCheckError(ValueError):
    pass


def set_precision(name: str) -> None:
    global _dtype
    if name not in _PRECISIONS:
        raise ValueError(f"unknown precision {name!r}")
    _dtype = _PRECISIONS[name]


def get_dtype():
    return _dtype


def precision_name() -> str:
    return "float64" if _dtype == np.float64 else "float32"


@contextlib.contextmanager
def precision(name: str):
    prev = _dtype
    set_precision(name)
    try:
        yield
    finally:
        globals()["_dtype"] = prev


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_debug(flag: bool) -> None:
    """In debug mode every op output is checked for NaN/Inf."""
    global _debug
    _debug = bool(flag)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_prev", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype != _dtype:
            arr = arr.astype(_dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._prev: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(_as_tensor(o), self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis, keepdims)

    def backward(self):
        return backward(self)


class Parameter(Tensor):
    """Trainable leaf. Frozen parameters keep a zero gradient and never update."""

    __slots__ = ("name", "frozen")

    def __init__(self, data, name: str = "", frozen: bool = False):
        super().__init__(data, requires_grad=not frozen)
        self.name = name
        self.frozen = bool(frozen)
        self.grad = np.zeros_like(self.data)

    def freeze(self, flag: bool = True) -> None:
        self.frozen = bool(flag)
        self.requires_grad = not self.frozen
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if _debug and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by a forward op")
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = req
    out.grad = None
    out._prev = tuple(parents) if req else ()
    out._backward = backward_fn if req else None
    return out


def _check_broadcast(a: tuple, b: tuple) -> None:
    if a == b or a == () or b == ():
        return
    if len(a) > len(b) and a[len(a) - len(b):] == b:
        return
    if len(b) > len(a) and b[len(b) - len(a):] == a:
        return
    raise ShapeError(f"incompatible shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum(), dtype=g.dtype)
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def tabs(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid_np(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.maximum(xd, 0.0), (x,), lambda g: (g * (xd > 0),))


_GELU_K = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU; smooth everywhere, unlike ReLU."""
    xd = x.data
    inner = _GELU_K * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def bw(g):
        dinner = _GELU_K * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _make(out, (x,), bw)


# --------------------------------------------------------------------------
# shape and reduction
# --------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _make(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def getitem(x: Tensor, key) -> Tensor:
    src_shape = x.shape
    out = x.data[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out, dtype=x.data.dtype)

    def bw(g):
        full = np.zeros(src_shape, dtype=g.dtype)
        np.add.at(full, key, g)
        return (full,)

    return _make(out, (x,), bw)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs)))

    return _make(out, xs, bw)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    out = np.stack([x.data for x in xs], axis=axis)
    return _make(out, xs, lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(xs))))


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(out, (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / float(n))


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a: (..., n, k); b: (..., k, m) with identical leading dims, or shared (k, m)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dims {a.shape} @ {b.shape}")
    if a.ndim == 2 and b.ndim > 2:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = np.swapaxes(ad.reshape(-1, ad.shape[-1]), 0, 1) @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(ad @ bd, (a, b), bw)


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ W.T + b with W of shape (out, in)."""
    x = _as_tensor(x)
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} vs weight {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} vs weight {W.shape}")
    xd, Wd = x.data, W.data
    out = xd @ Wd.T
    if b is not None:
        out = out + b.data

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ Wd
        gW = g2.T @ xd.reshape(-1, xd.shape[-1])
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    parents = (x, W) if b is None else (x, W, b)
    return _make(out, parents, bw)


# --------------------------------------------------------------------------
# softmax family
# --------------------------------------------------------------------------


def _softmax_np(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    if np.any(np.isneginf(m)):
        raise EmptyAttentionRowError()
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.shape[-1] < 1:
        raise ShapeError("softmax over an empty axis")
    y = _softmax_np(x.data)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), bw)


def log_softmax_lastdim(x: Tensor) -> Tensor:
    xd = x.data
    m = np.max(xd, axis=-1, keepdims=True)
    if np.any(np.isneginf(m)):
        raise EmptyAttentionRowError()
    z = xd - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _make(out, (x,), lambda g: (g - sm * g.sum(axis=-1, keepdims=True),))


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Per-row cross-entropy of (n, V) logits against integer targets (n,)."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape}, targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ValueError("cross_entropy: target id out of range")
    xd = logits.data
    m = xd.max(axis=1, keepdims=True)
    z = xd - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(len(targets))
    out = -logp[rows, targets]

    def bw(g):
        grad = np.exp(logp) * g[:, None]
        grad[rows, targets] -= g
        return (grad,)

    return _make(out, (logits,), bw)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy; ``targets`` is a constant array in [0, 1]."""
    t = np.asarray(targets, dtype=logits.data.dtype)
    if t.shape != logits.shape:
        raise ShapeError(f"bce: logits {logits.shape}, targets {t.shape}")
    x = logits.data
    out = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    return _make(out, (logits,), lambda g: (g * (_sigmoid_np(x) - t),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data
    n = xd.shape[-1]

    def bw(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, n)
        return gx, (g2 * xhat.reshape(-1, n)).sum(axis=0), g2.sum(axis=0)

    return _make(out, (x, gamma, beta), bw)


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=-1, keepdims=True) + eps)
    y = xd / norm

    def bw(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return _make(y, (x,), bw)


def attention(Q: Tensor, K: Tensor, V: Tensor, add_mask=None) -> Tensor:
    """softmax(add_mask + Q K^T) V.

    Q: (..., n, d); K: (m, d) or (..., m, d); V matches K with c columns.
    ``add_mask`` is a constant array broadcastable to (..., n, m) holding
    finite values or -inf. Positions at -inf get exactly zero weight, so the
    output does not depend on the K and V rows behind them.
    """
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ShapeError(f"attention shapes Q{Q.shape} K{K.shape} V{V.shape}")
    scores = matmul(Q, transpose(K))
    if add_mask is not None:
        mask = np.broadcast_to(np.asarray(add_mask, dtype=scores.data.dtype), scores.shape)
        if np.any(np.all(np.isneginf(mask), axis=-1)):
            raise EmptyAttentionRowError()
        scores = add(scores, Tensor(mask))
    return matmul(softmax_lastdim(scores), V)


# --------------------------------------------------------------------------
# convolution helpers (NHWC)
# --------------------------------------------------------------------------


def pad_edge(x: Tensor, p: int) -> Tensor:
    """Replicate-pad the two spatial axes of an (N, H, W, C) tensor."""
    if p == 0:
        return x
    N, H, W, C = x.shape
    ih = np.clip(np.arange(-p, H + p), 0, H - 1)
    iw = np.clip(np.arange(-p, W + p), 0, W - 1)
    out = x.data[:, ih][:, :, iw]

    def bw(g):
        gh = np.zeros((N, H, W + 2 * p, C), dtype=g.dtype)
        np.add.at(gh, (slice(None), ih), g)
        gx = np.zeros((N, H, W, C), dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), iw), gh)
        return (gx,)

    return _make(out, (x,), bw)


def im2col(x: Tensor, k: int, stride: int) -> Tensor:
    """(N, H, W, C) -> (N, Ho, Wo, k*k*C) patches, no padding."""
    N, H, W, C = x.shape
    Ho, Wo = (H - k) // stride + 1, (W - k) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"im2col: input {x.shape} smaller than kernel {k}")
    xd = np.ascontiguousarray(x.data)
    sN, sH, sW, sC = xd.strides
    win = np.lib.stride_tricks.as_strided(
        xd, shape=(N, Ho, Wo, k, k, C), strides=(sN, sH * stride, sW * stride, sH, sW, sC), writeable=False
    )
    out = win.reshape(N, Ho, Wo, k * k * C)

    def bw(g):
        g6 = g.reshape(N, Ho, Wo, k, k, C)
        gx = np.zeros((N, H, W, C), dtype=g.dtype)
        for di in range(k):
            for dj in range(k):
                gx[:, di:di + stride * Ho:stride, dj:dj + stride * Wo:stride, :] += g6[:, :, :, di, dj, :]
        return (gx,)

    return _make(out, (x,), bw)


# --------------------------------------------------------------------------
# autodiff driver
# --------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._prev):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict:
    """Populate ``.grad`` on every grad-requiring tensor reachable from ``loss``.

    Returns a map from Parameter name to gradient array for convenience.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ShapeError("backward needs a scalar loss")
    if not loss.requires_grad:
        raise ValueError("detached loss: no recorded op requires grad")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, gp in zip(node._prev, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = gp if prev is None else prev + gp
    return {n.name: n.grad for n in order if isinstance(n, Parameter)}


# --------------------------------------------------------------------------
# modules
# --------------------------------------------------------------------------


class Module:
    """Attribute-walking container; parameters are discovered in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def freeze(self, flag: bool = True) -> None:
        for p in self.parameters():
            p.freeze(flag)

    def assign_names(self, prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            p.name = name


def init_weight(rng: SplitMix64, shape: tuple, std: float | None = None) -> np.ndarray:
    """Gaussian init; default std is 1/sqrt(fan_in) over the last axis."""
    if std is None:
        std = 1.0 / math.sqrt(shape[-1])
    return (rng.normal(shape) * std).astype(_dtype)


class Linear(Module):
    def __init__(self, rng: SplitMix64, d_in: int, d_out: int, bias: bool = True, std: float | None = None):
        self.W = Parameter(init_weight(rng, (d_out, d_in), std))
        self.b = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.W, self.b)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class MLP(Module):
    def __init__(self, rng: SplitMix64, dims: Sequence[int]):
        self.layers = [Linear(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = gelu(x)
        return x


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    coords_per_param: int | None = None,
    rng: SplitMix64 | None = None,
) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` rebuilds the scalar from the current values of ``params``; the
    checker perturbs ``param.data`` in place and restores it. With
    ``coords_per_param`` set, that many coordinates per tensor are sampled
    (deterministically from ``rng``) instead of checking every coordinate.
    """
    if _dtype != np.float64:
        raise GradientCheckError("finite_diff_check requires 64-bit precision")
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    params = list(params)
    for p in params:
        p.grad = np.zeros_like(p.data) if isinstance(p, Parameter) else None
    loss = f()
    if np.isnan(loss.data).any():
        raise GradientCheckError("f returned NaN")
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = rng or SplitMix64(0)
    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            n = flat.size
            idx = range(n) if coords_per_param is None or coords_per_param >= n else rng.permutation(n)[:coords_per_param]
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(f().data)
                flat[i] = orig - eps
                fm = float(f().data)
                flat[i] = orig
                if math.isnan(fp) or math.isnan(fm):
                    raise GradientCheckError("f returned NaN")
                num = (fp - fm) / (2 * eps)
                a = float(ga.reshape(-1)[i])
                worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
    return worst
