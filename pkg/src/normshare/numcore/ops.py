"""Differentiable operations.

Only what the encoder-decoder needs. No general broadcasting: binary ops take
equal shapes, except that ``add`` accepts a 1-D bias matching the last axis.
The LSTM recurrence, attention and cross-entropy are fused ops backed by
:mod:`normshare.kernels`.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import kernels
from .tensor import DimensionError, ParameterError, Tensor, record


def _out(value) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.value = value
    t.grad = None
    t.requires_grad = False
    t.node = None
    t.name = None
    return t


def _c(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    A, Bv = a.value, b.value
    out = _out(A @ Bv)

    def bw(g):
        g = g[0]
        return (g @ Bv.T, A.T @ g)

    record("matmul", (a, b), (out,), bw)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        out = _out(a.value + b.value)
        record("add", (a, b), (out,), lambda g: (g[0], g[0]))
        return out
    if b.value.ndim == 1 and a.shape[-1] == b.shape[0]:
        n = b.shape[0]
        out = _out(a.value + b.value)
        record("add", (a, b), (out,), lambda g: (g[0], g[0].reshape(-1, n).sum(axis=0)))
        return out
    raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    A, Bv = a.value, b.value
    out = _out(A * Bv)
    record("mul", (a, b), (out,), lambda g: (g[0] * Bv, g[0] * A))
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    out = _out(y)
    record("tanh", (a,), (out,), lambda g: (g[0] * (1.0 - y * y),))
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = _out(y)
    record("sigmoid", (a,), (out,), lambda g: (g[0] * y * (1.0 - y),))
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise DimensionError("concat: no inputs")
    nd = tensors[0].value.ndim
    ax = axis % nd
    for t in tensors:
        if t.value.ndim != nd or any(
            t.shape[k] != tensors[0].shape[k] for k in range(nd) if k != ax
        ):
            raise DimensionError(
                f"concat: shapes {[t.shape for t in tensors]} disagree off axis {axis}"
            )
    sizes = [t.shape[ax] for t in tensors]
    out = _out(np.concatenate([t.value for t in tensors], axis=ax))
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return [_c(p) for p in np.split(g[0], cuts, axis=ax)]

    record("concat", tensors, (out,), bw)
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("stack: no inputs")
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise DimensionError(f"stack: unequal shapes {[t.shape for t in tensors]}")
    ax = axis % (len(shape) + 1)
    out = _out(np.stack([t.value for t in tensors], axis=ax))

    def bw(g):
        return [_c(np.take(g[0], k, axis=ax)) for k in range(len(tensors))]

    record("stack", tensors, (out,), bw)
    return out


def slice_(a: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing, e.g. ``slice_(x, (slice(None), 3))``."""
    try:
        y = a.value[index]
    except IndexError as exc:
        raise DimensionError(f"slice: index {index!r} invalid for shape {a.shape}") from exc
    if not isinstance(y, np.ndarray) or not np.may_share_memory(y, a.value):
        raise DimensionError(f"slice: index {index!r} is not a basic slice")
    out = _out(_c(y))
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g[0]
        return (full,)

    record("slice", (a,), (out,), bw)
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        y = a.value.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from exc
    old = a.shape
    out = _out(y)
    record("reshape", (a,), (out,), lambda g: (g[0].reshape(old),))
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _out(y)

    def bw(g):
        g = g[0]
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    record("softmax", (a,), (out,), bw)
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.value - a.value.max(axis=axis, keepdims=True)
    y = x - np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out = _out(y)

    def bw(g):
        g = g[0]
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    record("log_softmax", (a,), (out,), bw)
    return out


def embedding(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` gathered by an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.value.ndim != 2:
        raise DimensionError(f"embedding: table must be 2-D, got {table.shape}")
    V, E = table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"embedding: id out of range [0, {V}) in {ids.ravel().tolist()[:10]}")
    out = _out(table.value[ids])
    dtype = table.dtype

    def bw(g):
        full = np.zeros((V, E), dtype=dtype)
        np.add.at(full, ids.reshape(-1), g[0].reshape(-1, E))
        return (full,)

    record("embedding", (table,), (out,), bw)
    return out


def dropout(a: Tensor, p: float, rng: np.random.Generator | None = None, training: bool = True) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/(1-p)."""
    if not (0.0 <= p < 1.0):
        raise ParameterError(f"dropout: p={p} outside [0, 1)")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ParameterError("dropout: training mode needs an rng")
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    out = _out(a.value * keep)
    record("dropout", (a,), (out,), lambda g: (g[0] * keep,))
    return out


def sum_(a: Tensor) -> Tensor:
    shape, dtype = a.shape, a.dtype
    out = _out(np.array([a.value.sum()], dtype=dtype))
    record("sum", (a,), (out,), lambda g: (np.full(shape, g[0][0], dtype=dtype),))
    return out


def mean(a: Tensor) -> Tensor:
    shape, dtype, n = a.shape, a.dtype, a.size
    out = _out(np.array([a.value.mean()], dtype=dtype))
    record("mean", (a,), (out,), lambda g: (np.full(shape, g[0][0] / n, dtype=dtype),))
    return out


def scale(a: Tensor, factor: float) -> Tensor:
    out = _out(a.value * factor)
    record("scale", (a,), (out,), lambda g: (g[0] * factor,))
    return out


def time_reverse(a: Tensor, lengths) -> Tensor:
    """Reverse each row of a (B, L, ...) tensor within its own length.

    Padding positions stay in place, so the permutation is its own inverse.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    B, L = a.shape[0], a.shape[1]
    if lengths.shape != (B,) or lengths.min(initial=1) < 1 or lengths.max(initial=0) > L:
        raise DimensionError(f"time_reverse: lengths {lengths.tolist()} invalid for shape {a.shape}")
    pos = np.arange(L)[None, :]
    idx = np.where(pos < lengths[:, None], lengths[:, None] - 1 - pos, pos)
    rows = np.arange(B)[:, None]
    out = _out(_c(a.value[rows, idx]))

    def bw(g):
        return (_c(g[0][rows, idx]),)

    record("time_reverse", (a,), (out,), bw)
    return out


def lstm(x: Tensor, W: Tensor, b: Tensor, h0: Tensor, c0: Tensor, mask=None):
    """Masked single-direction LSTM over a (B, L, In) sequence.

    ``W`` is (In + H, 4H) with the input rows first; gate order i, f, g, o.
    Returns (all hidden states (B, L, H), last h (B, H), last c (B, H)); a row
    whose mask is 0 at step t keeps its previous state.
    """
    if x.value.ndim != 3:
        raise DimensionError(f"lstm: input must be (B, L, In), got {x.shape}")
    B, L, In = x.shape
    H4 = W.shape[1]
    H = H4 // 4
    if W.value.ndim != 2 or W.shape[0] != In + H or H4 != 4 * H or b.shape != (H4,):
        raise DimensionError(f"lstm: weights {W.shape}/{b.shape} do not fit input {x.shape}")
    if h0.shape != (B, H) or c0.shape != (B, H):
        raise DimensionError(f"lstm: initial states {h0.shape}/{c0.shape}, expected {(B, H)}")
    dtype = x.dtype
    m = np.ones((B, L), dtype=dtype) if mask is None else _c(np.asarray(mask, dtype=dtype))
    Wx, Wh = W.value[:In], _c(W.value[In:])
    X2 = x.value.reshape(B * L, In)
    xw = _c((X2 @ Wx + b.value).reshape(B, L, H4))
    hv, cv = _c(h0.value), _c(c0.value)
    hs, cs, gates, tanh_c = kernels.lstm_forward(xw, Wh, hv, cv, m)
    out_h = _out(hs)
    last_h = _out(_c(hs[:, -1]))
    last_c = _out(_c(cs[:, -1]))

    def bw(g):
        dhs = g[0] if g[0] is not None else np.zeros_like(hs)
        dh_last = g[1] if g[1] is not None else np.zeros((B, H), dtype=dtype)
        dc_last = g[2] if g[2] is not None else np.zeros((B, H), dtype=dtype)
        dxw, dWh, dh0, dc0 = kernels.lstm_backward(
            _c(dhs), _c(dh_last), _c(dc_last), Wh, hv, cv, m, hs, cs, gates, tanh_c
        )
        dxw2 = dxw.reshape(B * L, H4)
        dW = np.concatenate([X2.T @ dxw2, dWh], axis=0)
        dx = (dxw2 @ Wx.T).reshape(B, L, In)
        return (dx, dW, dxw2.sum(axis=0), dh0, dc0)

    record("lstm", (x, W, b, h0, c0), (out_h, last_h, last_c), bw)
    return out_h, last_h, last_c


def attention(enc: Tensor, enc_proj: Tensor, dec_proj: Tensor, v: Tensor, mask=None):
    """MLP attention over encoder states.

    scores_j = v . tanh(enc_proj_j + dec_proj); weights = softmax over the
    unmasked positions; context = sum_j weights_j * enc_j.
    Returns (context (B, H), weights (B, L)).
    """
    if enc.value.ndim != 3 or enc_proj.value.ndim != 3 or enc.shape[:2] != enc_proj.shape[:2]:
        raise DimensionError(f"attention: states {enc.shape} vs projections {enc_proj.shape}")
    B, L, _ = enc.shape
    A = enc_proj.shape[2]
    if dec_proj.shape != (B, A) or v.shape != (A,):
        raise DimensionError(
            f"attention: decoder projection {dec_proj.shape} / v {v.shape} do not match {(B, A)}"
        )
    if L == 0:
        raise DimensionError("attention: no encoder states")
    dtype = enc.dtype
    m = np.ones((B, L), dtype=dtype) if mask is None else _c(np.asarray(mask, dtype=dtype))
    ev, vv = enc.value, v.value
    ctx, weights, u = kernels.attention_forward(ev, _c(enc_proj.value), _c(dec_proj.value), vv, m)
    out_c, out_w = _out(ctx), _out(weights)

    def bw(g):
        dctx = g[0] if g[0] is not None else np.zeros_like(ctx)
        dw = None if g[1] is None else _c(g[1])
        denc, dproj, ddec, dv = kernels.attention_backward(_c(dctx), dw, ev, vv, weights, u)
        return (denc, dproj, ddec, dv)

    record("attention", (enc, enc_proj, dec_proj, v), (out_c, out_w), bw)
    return out_c, out_w


def cross_entropy(logits: Tensor, targets, weights=None, reduction: str = "mean") -> Tensor:
    """Negative log-likelihood of ``targets`` under softmax(logits) row-wise.

    ``weights`` (0/1 per row) excludes padding. ``mean`` divides by the total
    weight; ``sum`` returns the raw weighted sum.
    """
    if logits.value.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be (T, V), got {logits.shape}")
    T, V = logits.shape
    tg = np.ascontiguousarray(np.asarray(targets, dtype=np.int64).reshape(-1))
    if T < 1 or tg.shape != (T,):
        raise DimensionError(f"cross_entropy: {tg.shape[0]} targets for {T} rows")
    if tg.min() < 0 or tg.max() >= V:
        raise IndexError(f"cross_entropy: target index out of range [0, {V})")
    if reduction not in ("mean", "sum"):
        raise ParameterError(f"cross_entropy: unknown reduction {reduction!r}")
    dtype = logits.dtype
    w = np.ones(T, dtype=dtype) if weights is None else _c(np.asarray(weights, dtype=dtype).reshape(-1))
    nll, probs = kernels.xent_forward(_c(logits.value), tg, w)
    denom = float(w.sum()) if reduction == "mean" else 1.0
    if denom <= 0:
        raise ParameterError("cross_entropy: all rows masked out")
    out = _out(np.array([nll.sum() / denom], dtype=dtype))

    def bw(g):
        return (kernels.xent_backward(probs, tg, _c(w * (g[0][0] / denom))),)

    record("cross_entropy", (logits,), (out,), bw)
    return out


_CATALOGUE = {
    "matmul": matmul,
    "add": add,
    "elementwise-multiply": mul,
    "mul": mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "stack": lambda *ts, axis=0: stack(ts, axis=axis),
    "slice": slice_,
    "reshape": reshape,
    "softmax": softmax,
    "log-softmax": log_softmax,
    "embedding-lookup": embedding,
    "dropout": dropout,
    "sum": sum_,
    "mean": mean,
    "time-reverse": time_reverse,
    "lstm": lstm,
    "attention": attention,
    "cross-entropy": cross_entropy,
}


def forward_op(kind: str, *inputs, **params):
    """Dispatch by catalogue name, e.g. ``forward_op("dropout", x, p=0.2, rng=g)``."""
    try:
        fn = _CATALOGUE[kind]
    except KeyError:
        raise ParameterError(f"unknown op {kind!r}; known: {sorted(_CATALOGUE)}") from None
    return fn(*inputs, **params)
