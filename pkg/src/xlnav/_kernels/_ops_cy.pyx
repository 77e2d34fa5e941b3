# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled lane for the hot kernels.

Mirrors the semantics of ``_ops_py`` (the reference implementation):
same signatures, same gate layout [input | forget | cell | output], and
the same strict (0, 1) clamps on sigmoid and softmax outputs. Matrix
products stay on numpy's BLAS; the win here is fusing the element-wise
gate math and the Adam update into single C loops without temporaries.

Results agree with the numpy lane to float64 rounding (summation order
inside softmax normalization differs, so agreement is approximate at
the last ulp, not bitwise).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh

cnp.import_array()

BACKEND_NAME = "cython"

cdef double SIG_LO = 5e-324
cdef double SIG_HI = 1.0 - 1e-16


cdef inline double _sig1(double x) nogil:
    cdef double v
    if x >= 0.0:
        v = 1.0 / (1.0 + exp(-x))
    else:
        v = exp(x)
        v = v / (1.0 + v)
    if v < SIG_LO:
        v = SIG_LO
    elif v > SIG_HI:
        v = SIG_HI
    return v


cdef void _sigmoid_flat(double[::1] x, double[::1] out) nogil:
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = _sig1(x[i])


def _sigmoid(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    _sigmoid_flat(x.ravel(), out.ravel())
    return out


def tanh_fwd(x):
    return np.tanh(x)


def tanh_bwd(grad, out):
    return grad * (1.0 - out * out)


def sigmoid_fwd(x):
    return _sigmoid(x)


def sigmoid_bwd(grad, out):
    return grad * out * (1.0 - out)


cdef void _softmax_rows(double[:, ::1] x, double[:, ::1] out) nogil:
    cdef Py_ssize_t r, i
    cdef double mx, s, v
    for r in range(x.shape[0]):
        mx = x[r, 0]
        for i in range(1, x.shape[1]):
            if x[r, i] > mx:
                mx = x[r, i]
        s = 0.0
        for i in range(x.shape[1]):
            v = exp(x[r, i] - mx)
            out[r, i] = v
            s += v
        for i in range(x.shape[1]):
            v = out[r, i] / s
            if v < SIG_LO:
                v = SIG_LO
            elif v > SIG_HI:
                v = SIG_HI
            out[r, i] = v


def softmax_rows_fwd(x):
    """Row-wise softmax with max subtraction; works on 1-D and 2-D.

    Outputs are clamped to the open interval (0, 1); see the numpy lane.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    if x.ndim == 1:
        _softmax_rows(x[None, :], out[None, :])
    else:
        _softmax_rows(x, out)
    return out


def softmax_rows_bwd(grad, out):
    dot = (grad * out).sum(axis=-1, keepdims=True)
    return out * (grad - dot)


def affine_fwd(x, w, b):
    return x @ w + b


def affine_bwd(grad, x, w):
    gx = grad @ w.T
    gw = x.T @ grad
    gb = grad.sum(axis=0) if grad.ndim == 2 else grad.copy()
    return gx, gw, gb


cdef void _gates_fwd(double[::1] z, double[::1] c,
                     double[::1] i_g, double[::1] f_g, double[::1] g_g,
                     double[::1] o_g, double[::1] c_new,
                     double[::1] tc, double[::1] h_new) nogil:
    cdef Py_ssize_t k
    cdef Py_ssize_t hd = c.shape[0]
    for k in range(hd):
        i_g[k] = _sig1(z[k])
        f_g[k] = _sig1(z[hd + k])
        g_g[k] = tanh(z[2 * hd + k])
        o_g[k] = _sig1(z[3 * hd + k])
        c_new[k] = f_g[k] * c[k] + i_g[k] * g_g[k]
        tc[k] = tanh(c_new[k])
        h_new[k] = o_g[k] * tc[k]


def lstm_cell_fwd(xh, c, w, b):
    """One LSTM step. xh is the concatenated [input, hidden] row block.

    Returns (h_new, c_new, gates) where gates caches (i, f, g, o, tanh_c_new)
    for the backward pass.
    """
    cdef Py_ssize_t hd = c.shape[c.ndim - 1]
    z = np.ascontiguousarray(xh @ w + b)
    c = np.ascontiguousarray(c, dtype=np.float64)
    if z.ndim != 1:
        # batched rows: reuse the scalar loop per row
        i = _sigmoid(z[..., :hd])
        f = _sigmoid(z[..., hd:2 * hd])
        g = np.tanh(z[..., 2 * hd:3 * hd])
        o = _sigmoid(z[..., 3 * hd:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        return o * tc, c_new, (i, f, g, o, tc)
    i = np.empty(hd)
    f = np.empty(hd)
    g = np.empty(hd)
    o = np.empty(hd)
    c_new = np.empty(hd)
    tc = np.empty(hd)
    h_new = np.empty(hd)
    _gates_fwd(z, c, i, f, g, o, c_new, tc, h_new)
    return h_new, c_new, (i, f, g, o, tc)


cdef void _gates_bwd(double[::1] gh, double[::1] gc_in, double[::1] c,
                     double[::1] i_g, double[::1] f_g, double[::1] g_g,
                     double[::1] o_g, double[::1] tc,
                     double[::1] gz, double[::1] gc_prev) nogil:
    cdef Py_ssize_t k
    cdef Py_ssize_t hd = c.shape[0]
    cdef double gc, gi, gf, gg, go
    for k in range(hd):
        gc = gc_in[k] + gh[k] * o_g[k] * (1.0 - tc[k] * tc[k])
        go = gh[k] * tc[k]
        gf = gc * c[k]
        gi = gc * g_g[k]
        gg = gc * i_g[k]
        gc_prev[k] = gc * f_g[k]
        gz[k] = gi * i_g[k] * (1.0 - i_g[k])
        gz[hd + k] = gf * f_g[k] * (1.0 - f_g[k])
        gz[2 * hd + k] = gg * (1.0 - g_g[k] * g_g[k])
        gz[3 * hd + k] = go * o_g[k] * (1.0 - o_g[k])


def lstm_cell_bwd(gh, gc_in, xh, c, w, gates):
    """Backward of one LSTM step.

    gh / gc_in are gradients w.r.t. h_new and c_new. Returns
    (g_xh, g_c, g_w, g_b).
    """
    i, f, g, o, tc = gates
    if gh.ndim != 1:
        gc = gc_in + gh * o * (1.0 - tc * tc)
        go = gh * tc
        gz = np.concatenate([
            gc * g * i * (1.0 - i),
            gc * c * f * (1.0 - f),
            gc * i * (1.0 - g * g),
            go * o * (1.0 - o),
        ], axis=-1)
        g_xh = gz @ w.T
        g_w = xh.T @ gz
        g_b = gz.sum(axis=0)
        return g_xh, gc * f, g_w, g_b
    cdef Py_ssize_t hd = c.shape[0]
    gz = np.empty(4 * hd)
    gc_prev = np.empty(hd)
    _gates_bwd(np.ascontiguousarray(gh), np.ascontiguousarray(gc_in),
               np.ascontiguousarray(c, dtype=np.float64),
               np.ascontiguousarray(i), np.ascontiguousarray(f),
               np.ascontiguousarray(g), np.ascontiguousarray(o),
               np.ascontiguousarray(tc), gz, gc_prev)
    g_xh = gz @ w.T
    g_w = np.outer(xh, gz)
    return g_xh, gc_prev, g_w, gz.copy()


def lstm_seq_fwd(xs, w, b, h0, c0):
    """Run an LSTM over a (T, n) input sequence. Returns (hs, cache).

    hs is (T, H); cache holds everything the backward pass needs.
    """
    cdef Py_ssize_t t_len = xs.shape[0]
    cdef Py_ssize_t n_in = xs.shape[1]
    cdef Py_ssize_t hd = h0.shape[0]
    cdef Py_ssize_t t
    hs = np.empty((t_len, hd))
    cs = np.empty((t_len, hd))
    gates = np.empty((t_len, 5, hd))
    # one fused GEMM for the input contribution of every step
    zx = np.ascontiguousarray(xs @ w[:n_in] + b)
    wh = np.ascontiguousarray(w[n_in:])
    h = np.ascontiguousarray(h0, dtype=np.float64)
    c = np.ascontiguousarray(c0, dtype=np.float64)
    cdef double[:, ::1] hs_v = hs
    cdef double[:, ::1] cs_v = cs
    cdef double[:, :, ::1] g_v = gates
    for t in range(t_len):
        z = np.ascontiguousarray(zx[t] + h @ wh)
        _gates_fwd(z, c, g_v[t, 0], g_v[t, 1], g_v[t, 2], g_v[t, 3],
                   cs_v[t], g_v[t, 4], hs_v[t])
        h = hs[t]
        c = cs[t]
    return hs, (xs, hs, cs, gates, h0, c0)


def lstm_seq_bwd(ghs, w, cache):
    """Backward through time for lstm_seq_fwd. ghs is (T, H).

    Returns (g_xs, g_w, g_b, g_h0, g_c0).
    """
    xs, hs, cs, gates, h0, c0 = cache
    cdef Py_ssize_t t_len = xs.shape[0]
    cdef Py_ssize_t n_in = xs.shape[1]
    cdef Py_ssize_t hd = h0.shape[0]
    cdef Py_ssize_t t
    gzs = np.empty((t_len, 4 * hd))
    gh = np.zeros(hd)
    gc = np.zeros(hd)
    gc_next = np.empty(hd)
    wh_t = np.ascontiguousarray(w[n_in:].T)
    cdef double[:, :, ::1] g_v = np.ascontiguousarray(gates)
    cdef double[:, ::1] gzs_v = gzs
    for t in range(t_len - 1, -1, -1):
        gh = gh + ghs[t]
        c_prev = cs[t - 1] if t > 0 else c0
        _gates_bwd(np.ascontiguousarray(gh), gc,
                   np.ascontiguousarray(c_prev, dtype=np.float64),
                   g_v[t, 0], g_v[t, 1], g_v[t, 2], g_v[t, 3], g_v[t, 4],
                   gzs_v[t], gc_next)
        gc, gc_next = gc_next, gc
        gh = gzs[t] @ wh_t
    g_xs = gzs @ np.ascontiguousarray(w[:n_in].T)
    hs_prev = np.vstack([h0, hs[:-1]])
    g_w = np.empty_like(w)
    g_w[:n_in] = xs.T @ gzs
    g_w[n_in:] = hs_prev.T @ gzs
    g_b = gzs.sum(axis=0)
    return g_xs, g_w, g_b, gh, gc


def attn_fwd(q, keys, values, w):
    """Bilinear attention: scores_i = (q @ w) . keys_i, softmax, mix values.

    Returns (context, weights).
    """
    scores = keys @ (q @ w)
    weights = softmax_rows_fwd(scores)
    context = weights @ values
    return context, weights


def attn_bwd(g_ctx, q, keys, values, w, weights):
    """Backward for attn_fwd. Returns (g_q, g_keys, g_values, g_w)."""
    g_values = np.outer(weights, g_ctx)
    g_weights = values @ g_ctx
    g_scores = softmax_rows_bwd(g_weights, weights)
    qw = q @ w
    g_keys = np.outer(g_scores, qw)
    g_qw = g_scores @ keys
    g_q = w @ g_qw
    g_w = np.outer(q, g_qw)
    return g_q, g_keys, g_values, g_w


cdef void _adam_flat(double[::1] value, double[::1] grad,
                     double[::1] m, double[::1] v,
                     double lr, double beta1, double beta2, double eps,
                     double weight_decay, double bc1, double bc2) nogil:
    cdef Py_ssize_t k
    cdef double mk, vk
    for k in range(value.shape[0]):
        if weight_decay != 0.0:
            value[k] -= lr * weight_decay * value[k]
        mk = beta1 * m[k] + (1.0 - beta1) * grad[k]
        vk = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k]
        m[k] = mk
        v[k] = vk
        value[k] -= lr * (mk / bc1) / (sqrt(vk / bc2) + eps)


def adam_update(value, grad, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """In-place decoupled-weight-decay Adam step on one parameter array."""
    _adam_flat(value.ravel(), np.ascontiguousarray(grad).ravel(),
               m.ravel(), v.ravel(), lr, beta1, beta2, eps, weight_decay,
               1.0 - beta1 ** t, 1.0 - beta2 ** t)
