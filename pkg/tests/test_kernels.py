from __future__ import annotations

import numpy as np
import pytest

from normshare import _kernels_py as ref

cy = pytest.importorskip("normshare._kernels")


def _lstm_inputs(r, dtype, B=3, L=5, H=4):
    xw = r.normal(size=(B, L, 4 * H)).astype(dtype)
    Wh = (0.5 * r.normal(size=(H, 4 * H))).astype(dtype)
    h0 = r.normal(size=(B, H)).astype(dtype)
    c0 = r.normal(size=(B, H)).astype(dtype)
    mask = np.ones((B, L), dtype=dtype)
    mask[1, 3:] = 0.0
    mask[2, 1:] = 0.0
    return xw, Wh, h0, c0, mask


def _close(a, b, dtype):
    tol = 1e-12 if dtype == np.float64 else 1e-5
    np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
@pytest.mark.parametrize("seed", range(5))
def test_lstm_matches_reference(dtype, seed):
    r = np.random.default_rng(seed)
    args = _lstm_inputs(r, dtype)
    fwd_ref, fwd_cy = ref.lstm_forward(*args), cy.lstm_forward(*args)
    for a, b in zip(fwd_ref, fwd_cy):
        _close(np.asarray(b), a, dtype)
    xw, Wh, h0, c0, mask = args
    hs = fwd_ref[0]
    dhs = r.normal(size=hs.shape).astype(dtype)
    dhl = r.normal(size=h0.shape).astype(dtype)
    dcl = r.normal(size=c0.shape).astype(dtype)
    b_ref = ref.lstm_backward(dhs, dhl, dcl, Wh, h0, c0, mask, *fwd_ref)
    b_cy = cy.lstm_backward(dhs, dhl, dcl, Wh, h0, c0, mask, *[np.asarray(x) for x in fwd_cy])
    for a, b in zip(b_ref, b_cy):
        _close(np.asarray(b), a, dtype)


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
@pytest.mark.parametrize("seed", range(5))
def test_attention_matches_reference(dtype, seed):
    r = np.random.default_rng(seed)
    B, L, H, A = 3, 6, 4, 5
    enc = r.normal(size=(B, L, H)).astype(dtype)
    enc_proj = r.normal(size=(B, L, A)).astype(dtype)
    dec_proj = r.normal(size=(B, A)).astype(dtype)
    v = r.normal(size=A).astype(dtype)
    mask = np.ones((B, L), dtype=dtype)
    mask[0, 4:] = 0.0
    f_ref = ref.attention_forward(enc, enc_proj, dec_proj, v, mask)
    f_cy = cy.attention_forward(enc, enc_proj, dec_proj, v, mask)
    for a, b in zip(f_ref, f_cy):
        _close(np.asarray(b), a, dtype)
    ctx, w, u = f_ref
    dctx = r.normal(size=ctx.shape).astype(dtype)
    for dw in (None, r.normal(size=w.shape).astype(dtype)):
        b_ref = ref.attention_backward(dctx, dw, enc, v, w, u)
        b_cy = cy.attention_backward(dctx, dw, enc, v, w, u)
        for a, b in zip(b_ref, b_cy):
            _close(np.asarray(b), a, dtype)


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_xent_matches_reference(dtype):
    r = np.random.default_rng(0)
    logits = (5 * r.normal(size=(7, 11))).astype(dtype)
    targets = r.integers(0, 11, size=7).astype(np.int64)
    weights = (r.random(7) > 0.3).astype(dtype)
    nll_ref, p_ref = ref.xent_forward(logits, targets, weights)
    nll_cy, p_cy = cy.xent_forward(logits, targets, weights)
    _close(np.asarray(nll_cy), nll_ref, dtype)
    _close(np.asarray(p_cy), p_ref, dtype)
    scale = r.random(7).astype(dtype)
    _close(np.asarray(cy.xent_backward(p_ref.copy(), targets, scale)),
           ref.xent_backward(p_ref.copy(), targets, scale), dtype)


def test_backend_selection(monkeypatch):
    import importlib

    import normshare.kernels as k

    monkeypatch.setenv("NORMSHARE_PURE", "1")
    assert importlib.reload(k).BACKEND == "numpy"
    monkeypatch.delenv("NORMSHARE_PURE")
    assert importlib.reload(k).BACKEND == "cython"
