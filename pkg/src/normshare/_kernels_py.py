"""Pure-numpy reference kernels.

Same signatures and results as the compiled ``_kernels`` module; used when
the extension is not built or when ``NORMSHARE_PURE=1`` is set.

Array conventions: batch-major, C-contiguous. LSTM gate blocks are stacked
in the order input, forget, cell, output along the last axis.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x):
    # split on sign to keep exp() from overflowing
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward(xw, Wh, h0, c0, mask):
    """Run a masked LSTM over ``L`` steps.

    ``xw`` (B, L, 4H) already holds the input projection plus bias. Rows whose
    mask is 0 at step t carry their previous state through unchanged.

    Returns hs, cs (B, L, H), activated gates (B, L, 4H) and tanh(c) of the
    candidate cell (B, L, H).
    """
    B, L, H4 = xw.shape
    H = H4 // 4
    dtype = xw.dtype
    hs = np.empty((B, L, H), dtype=dtype)
    cs = np.empty((B, L, H), dtype=dtype)
    gates = np.empty((B, L, H4), dtype=dtype)
    tanh_c = np.empty((B, L, H), dtype=dtype)
    h, c = h0, c0
    for t in range(L):
        z = xw[:, t] + h @ Wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[:, t:t + 1]
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
        gates[:, t, :H] = i
        gates[:, t, H:2 * H] = f
        gates[:, t, 2 * H:3 * H] = g
        gates[:, t, 3 * H:] = o
        tanh_c[:, t] = tc
        hs[:, t] = h
        cs[:, t] = c
    return hs, cs, gates, tanh_c


def lstm_backward(dhs, dh_last, dc_last, Wh, h0, c0, mask, hs, cs, gates, tanh_c):
    """Backpropagate through :func:`lstm_forward`.

    Returns d(xw) (B, L, 4H), dWh (H, 4H), dh0 and dc0 (B, H).
    """
    B, L, H = hs.shape
    dtype = hs.dtype
    dxw = np.empty((B, L, 4 * H), dtype=dtype)
    dh = dh_last.copy()
    dc = dc_last.copy()
    for t in range(L - 1, -1, -1):
        dh = dh + dhs[:, t]
        m = mask[:, t:t + 1]
        c_prev = cs[:, t - 1] if t > 0 else c0
        i = gates[:, t, :H]
        f = gates[:, t, H:2 * H]
        g = gates[:, t, 2 * H:3 * H]
        o = gates[:, t, 3 * H:]
        tc = tanh_c[:, t]
        dh_new = m * dh
        dc_new = m * dc + dh_new * o * (1.0 - tc * tc)
        dz = dxw[:, t]
        dz[:, :H] = dc_new * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc_new * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc_new * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh_new * tc * o * (1.0 - o)
        dc = dc_new * f + (1.0 - m) * dc
        dh = dz @ Wh.T + (1.0 - m) * dh
    h_prev = np.concatenate([h0[:, None, :], hs[:, :-1]], axis=1)
    dWh = h_prev.reshape(B * L, H).T @ dxw.reshape(B * L, 4 * H)
    return dxw, dWh, dh, dc


def attention_forward(enc, enc_proj, dec_proj, v, mask):
    """MLP attention: scores v . tanh(enc_proj_j + dec_proj), masked softmax.

    Returns context (B, H), weights (B, L) and the tanh activations (B, L, A).
    """
    u = np.tanh(enc_proj + dec_proj[:, None, :])
    scores = u @ v
    scores = np.where(mask > 0, scores, -np.inf)
    scores = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    weights = e / e.sum(axis=1, keepdims=True)
    ctx = np.einsum("bl,blh->bh", weights, enc)
    return ctx, weights, u


def attention_backward(dctx, dweights, enc, v, weights, u):
    """Gradients of :func:`attention_forward` w.r.t. enc, enc_proj, dec_proj, v."""
    denc = weights[:, :, None] * dctx[:, None, :]
    da = np.einsum("blh,bh->bl", enc, dctx)
    if dweights is not None:
        da = da + dweights
    de = weights * (da - (weights * da).sum(axis=1, keepdims=True))
    dv = np.einsum("bl,bla->a", de, u)
    dpre = de[:, :, None] * v[None, None, :] * (1.0 - u * u)
    return denc, dpre, dpre.sum(axis=1), dv


def xent_forward(logits, targets, weights):
    """Per-row negative log-likelihood of ``targets`` and softmax probabilities."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    rows = np.arange(logits.shape[0])
    nll = (np.log(z[:, 0]) - shifted[rows, targets]) * weights
    return nll, probs


def xent_backward(probs, targets, row_scale):
    """d(sum_i row_scale_i * nll_i) / d(logits)."""
    d = probs * row_scale[:, None]
    d[np.arange(probs.shape[0]), targets] -= row_scale
    return d
