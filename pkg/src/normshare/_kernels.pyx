# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: masked LSTM recurrence, MLP attention, softmax
cross-entropy. Mirrors ``_kernels_py`` exactly; float32 and float64."""

import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport exp, tanh, log
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()


cdef inline void _gemm(char ta, char tb, int m, int n, int k, floating alpha,
                       floating* A, int lda, floating* B, int ldb,
                       floating beta, floating* C, int ldc) noexcept:
    # row-major C = alpha op(A) op(B) + beta C, via column-major BLAS on the transposes
    if floating is double:
        dgemm(&tb, &ta, &n, &m, &k, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)
    else:
        sgemm(&tb, &ta, &n, &m, &k, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


cdef inline floating _sig(floating x) noexcept:
    cdef floating e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def lstm_forward(floating[:, :, ::1] xw, floating[:, ::1] Wh, floating[:, ::1] h0,
                 floating[:, ::1] c0, floating[:, ::1] mask):
    cdef Py_ssize_t B = xw.shape[0], L = xw.shape[1], H4 = xw.shape[2]
    cdef Py_ssize_t H = H4 // 4
    cdef Py_ssize_t b, t, j
    cdef floating i_, f_, g_, o_, cn, tc, m, cp, hp
    dtype = np.float64 if floating is double else np.float32
    hs_a = np.empty((B, L, H), dtype=dtype)
    cs_a = np.empty((B, L, H), dtype=dtype)
    gates_a = np.array(xw, dtype=dtype, copy=True)
    tanh_a = np.empty((B, L, H), dtype=dtype)
    cdef floating[:, :, ::1] hs = hs_a
    cdef floating[:, :, ::1] cs = cs_a
    cdef floating[:, :, ::1] z = gates_a
    cdef floating[:, :, ::1] tcs = tanh_a
    if B == 0 or L == 0:
        return hs_a, cs_a, gates_a, tanh_a
    for t in range(L):
        # z[:, t] += h_prev @ Wh
        if t == 0:
            _gemm(c'N', c'N', <int>B, <int>H4, <int>H, <floating>1.0, &h0[0, 0], <int>H,
                  &Wh[0, 0], <int>H4, <floating>1.0, &z[0, 0, 0], <int>(L * H4))
        else:
            _gemm(c'N', c'N', <int>B, <int>H4, <int>H, <floating>1.0, &hs[0, t - 1, 0], <int>(L * H),
                  &Wh[0, 0], <int>H4, <floating>1.0, &z[0, t, 0], <int>(L * H4))
        for b in range(B):
            m = mask[b, t]
            for j in range(H):
                i_ = _sig(z[b, t, j])
                f_ = _sig(z[b, t, H + j])
                g_ = tanh(z[b, t, 2 * H + j])
                o_ = _sig(z[b, t, 3 * H + j])
                z[b, t, j] = i_
                z[b, t, H + j] = f_
                z[b, t, 2 * H + j] = g_
                z[b, t, 3 * H + j] = o_
                if t == 0:
                    cp = c0[b, j]
                    hp = h0[b, j]
                else:
                    cp = cs[b, t - 1, j]
                    hp = hs[b, t - 1, j]
                cn = f_ * cp + i_ * g_
                tc = tanh(cn)
                tcs[b, t, j] = tc
                hs[b, t, j] = m * (o_ * tc) + (1.0 - m) * hp
                cs[b, t, j] = m * cn + (1.0 - m) * cp
    return hs_a, cs_a, gates_a, tanh_a


def lstm_backward(floating[:, :, ::1] dhs, floating[:, ::1] dh_last, floating[:, ::1] dc_last,
                  floating[:, ::1] Wh, floating[:, ::1] h0, floating[:, ::1] c0,
                  floating[:, ::1] mask, floating[:, :, ::1] hs, floating[:, :, ::1] cs,
                  floating[:, :, ::1] gates, floating[:, :, ::1] tanh_c):
    cdef Py_ssize_t B = hs.shape[0], L = hs.shape[1], H = hs.shape[2]
    cdef Py_ssize_t H4 = 4 * H
    cdef Py_ssize_t b, t, j
    cdef floating i_, f_, g_, o_, tc, m, cp, dhn, dcn, dhv
    dtype = np.float64 if floating is double else np.float32
    dxw_a = np.empty((B, L, H4), dtype=dtype)
    dh_a = np.array(dh_last, dtype=dtype, copy=True)
    dc_a = np.array(dc_last, dtype=dtype, copy=True)
    hprev_a = np.empty((B, L, H), dtype=dtype)
    dWh_a = np.zeros((H, H4), dtype=dtype)
    cdef floating[:, :, ::1] dz = dxw_a
    cdef floating[:, ::1] dh = dh_a
    cdef floating[:, ::1] dc = dc_a
    cdef floating[:, :, ::1] hprev = hprev_a
    if B == 0 or L == 0:
        return dxw_a, dWh_a, dh_a, dc_a
    for t in range(L - 1, -1, -1):
        for b in range(B):
            m = mask[b, t]
            for j in range(H):
                dhv = dh[b, j] + dhs[b, t, j]
                i_ = gates[b, t, j]
                f_ = gates[b, t, H + j]
                g_ = gates[b, t, 2 * H + j]
                o_ = gates[b, t, 3 * H + j]
                tc = tanh_c[b, t, j]
                cp = cs[b, t - 1, j] if t > 0 else c0[b, j]
                dhn = m * dhv
                dcn = m * dc[b, j] + dhn * o_ * (1.0 - tc * tc)
                dz[b, t, j] = dcn * g_ * i_ * (1.0 - i_)
                dz[b, t, H + j] = dcn * cp * f_ * (1.0 - f_)
                dz[b, t, 2 * H + j] = dcn * i_ * (1.0 - g_ * g_)
                dz[b, t, 3 * H + j] = dhn * tc * o_ * (1.0 - o_)
                dc[b, j] = dcn * f_ + (1.0 - m) * dc[b, j]
                dh[b, j] = (1.0 - m) * dhv
                hprev[b, t, j] = hs[b, t - 1, j] if t > 0 else h0[b, j]
        # dh += dz[:, t] @ Wh.T
        _gemm(c'N', c'T', <int>B, <int>H, <int>H4, <floating>1.0, &dz[0, t, 0], <int>(L * H4),
              &Wh[0, 0], <int>H4, <floating>1.0, &dh[0, 0], <int>H)
    cdef floating[:, ::1] dWh = dWh_a
    # dWh = hprev^T @ dz over all (b, t)
    _gemm(c'T', c'N', <int>H, <int>H4, <int>(B * L), <floating>1.0, &hprev[0, 0, 0], <int>H,
          &dz[0, 0, 0], <int>H4, <floating>0.0, &dWh[0, 0], <int>H4)
    return dxw_a, dWh_a, dh_a, dc_a


def attention_forward(floating[:, :, ::1] enc, floating[:, :, ::1] enc_proj,
                      floating[:, ::1] dec_proj, floating[::1] v, floating[:, ::1] mask):
    cdef Py_ssize_t B = enc.shape[0], L = enc.shape[1], H = enc.shape[2], A = enc_proj.shape[2]
    cdef Py_ssize_t b, l, a, h
    cdef floating s, mx, tot, w
    cdef bint first
    dtype = np.float64 if floating is double else np.float32
    # vectorized tanh beats scalar libm calls; scores, softmax and context stay fused
    u_a = np.tanh(np.add(enc_proj, np.asarray(dec_proj)[:, None, :]))
    w_a = np.zeros((B, L), dtype=dtype)
    ctx_a = np.zeros((B, H), dtype=dtype)
    cdef floating[:, :, ::1] u = u_a
    cdef floating[:, ::1] wts = w_a
    cdef floating[:, ::1] ctx = ctx_a
    for b in range(B):
        mx = 0.0
        first = True
        for l in range(L):
            s = 0.0
            for a in range(A):
                s = s + u[b, l, a] * v[a]
            wts[b, l] = s
            if mask[b, l] > 0 and (first or s > mx):
                mx = s
                first = False
        tot = 0.0
        for l in range(L):
            if mask[b, l] > 0:
                w = exp(wts[b, l] - mx)
                wts[b, l] = w
                tot = tot + w
            else:
                wts[b, l] = 0.0
        for l in range(L):
            w = wts[b, l] / tot
            wts[b, l] = w
            if w != 0.0:
                for h in range(H):
                    ctx[b, h] = ctx[b, h] + w * enc[b, l, h]
    return ctx_a, w_a, u_a


def attention_backward(floating[:, ::1] dctx, dweights, floating[:, :, ::1] enc,
                       floating[::1] v, floating[:, ::1] weights, floating[:, :, ::1] u):
    cdef Py_ssize_t B = enc.shape[0], L = enc.shape[1], H = enc.shape[2], A = u.shape[2]
    cdef Py_ssize_t b, l, a, h
    cdef floating s, dot, de, w
    dtype = np.float64 if floating is double else np.float32
    denc_a = np.empty((B, L, H), dtype=dtype)
    dpre_a = np.empty((B, L, A), dtype=dtype)
    ddec_a = np.zeros((B, A), dtype=dtype)
    dv_a = np.zeros(A, dtype=dtype)
    da_a = np.empty((B, L), dtype=dtype)
    cdef floating[:, :, ::1] denc = denc_a
    cdef floating[:, :, ::1] dpre = dpre_a
    cdef floating[:, ::1] ddec = ddec_a
    cdef floating[::1] dv = dv_a
    cdef floating[:, ::1] da = da_a
    cdef floating[:, ::1] dw
    has_dw = dweights is not None
    if has_dw:
        dw = np.ascontiguousarray(dweights, dtype=dtype)
    for b in range(B):
        dot = 0.0
        for l in range(L):
            w = weights[b, l]
            s = 0.0
            for h in range(H):
                denc[b, l, h] = w * dctx[b, h]
                s = s + enc[b, l, h] * dctx[b, h]
            if has_dw:
                s = s + dw[b, l]
            da[b, l] = s
            dot = dot + w * s
        for l in range(L):
            de = weights[b, l] * (da[b, l] - dot)
            for a in range(A):
                dv[a] = dv[a] + de * u[b, l, a]
                s = de * v[a] * (1.0 - u[b, l, a] * u[b, l, a])
                dpre[b, l, a] = s
                ddec[b, a] = ddec[b, a] + s
    return denc_a, dpre_a, ddec_a, dv_a


def xent_forward(floating[:, ::1] logits, cnp.int64_t[::1] targets, floating[::1] weights):
    cdef Py_ssize_t N = logits.shape[0], V = logits.shape[1]
    cdef Py_ssize_t n, k
    cdef floating mx, tot
    dtype = np.float64 if floating is double else np.float32
    nll_a = np.empty(N, dtype=dtype)
    probs_a = np.empty((N, V), dtype=dtype)
    cdef floating[::1] nll = nll_a
    cdef floating[:, ::1] probs = probs_a
    for n in range(N):
        mx = logits[n, 0]
        for k in range(1, V):
            if logits[n, k] > mx:
                mx = logits[n, k]
        tot = 0.0
        for k in range(V):
            probs[n, k] = exp(logits[n, k] - mx)
            tot = tot + probs[n, k]
        for k in range(V):
            probs[n, k] = probs[n, k] / tot
        nll[n] = (log(tot) - (logits[n, targets[n]] - mx)) * weights[n]
    return nll_a, probs_a


def xent_backward(floating[:, ::1] probs, cnp.int64_t[::1] targets, floating[::1] row_scale):
    cdef Py_ssize_t N = probs.shape[0], V = probs.shape[1]
    cdef Py_ssize_t n, k
    dtype = np.float64 if floating is double else np.float32
    d_a = np.empty((N, V), dtype=dtype)
    cdef floating[:, ::1] d = d_a
    for n in range(N):
        for k in range(V):
            d[n, k] = probs[n, k] * row_scale[n]
        d[n, targets[n]] = d[n, targets[n]] - row_scale[n]
    return d_a
