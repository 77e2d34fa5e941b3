"""Numpy implementations of the hot kernels.

These are the reference semantics: the compiled lane in ``_ops_cy.pyx``
must agree with every function here to float64 rounding. All arrays are
C-contiguous float64; callers guarantee conforming shapes.

Gate layout for LSTM kernels is [input | forget | cell | output] along
the last axis of the packed weight matrix.
"""

import numpy as np

BACKEND_NAME = "numpy"


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # keep the output strictly inside (0, 1) even where float64 rounds to 1
    np.clip(out, 5e-324, 1.0 - 1e-16, out=out)
    return out


def tanh_fwd(x):
    return np.tanh(x)


def tanh_bwd(grad, out):
    return grad * (1.0 - out * out)


def sigmoid_fwd(x):
    return _sigmoid(x)


def sigmoid_bwd(grad, out):
    return grad * out * (1.0 - out)


def softmax_rows_fwd(x):
    """Row-wise softmax with max subtraction; works on 1-D and 2-D.

    Outputs are clamped to the open interval (0, 1) so saturated rows
    never round to an exact 0 or 1 (downstream code takes logs and
    asserts strict bounds); the perturbation is below 1e-16 per entry.
    """
    shifted = x - x.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=-1, keepdims=True)
    return np.clip(out, 5e-324, 1.0 - 1e-16)


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


def lstm_cell_fwd(xh, c, w, b):
    """One LSTM step. xh is the concatenated [input, hidden] row block.

    Returns (h_new, c_new, gates) where gates caches (i, f, g, o, tanh_c_new)
    for the backward pass.
    """
    hd = c.shape[-1]
    z = xh @ w + b
    i = _sigmoid(z[..., :hd])
    f = _sigmoid(z[..., hd:2 * hd])
    g = np.tanh(z[..., 2 * hd:3 * hd])
    o = _sigmoid(z[..., 3 * hd:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (i, f, g, o, tc)


def lstm_cell_bwd(gh, gc_in, xh, c, w, gates):
    """Backward of one LSTM step.

    gh / gc_in are gradients w.r.t. h_new and c_new. Returns
    (g_xh, g_c, g_w, g_b).
    """
    i, f, g, o, tc = gates
    gc = gc_in + gh * o * (1.0 - tc * tc)
    go = gh * tc
    gf = gc * c
    gi = gc * g
    gg = gc * i
    gc_prev = gc * f
    gz = np.concatenate([
        gi * i * (1.0 - i),
        gf * f * (1.0 - f),
        gg * (1.0 - g * g),
        go * o * (1.0 - o),
    ], axis=-1)
    g_xh = gz @ w.T
    mat = gz if gz.ndim == 2 else gz[None, :]
    xmat = xh if xh.ndim == 2 else xh[None, :]
    g_w = xmat.T @ mat
    g_b = mat.sum(axis=0)
    return g_xh, gc_prev, g_w, g_b


def lstm_seq_fwd(xs, w, b, h0, c0):
    """Run an LSTM over a (T, n) input sequence. Returns (hs, cache).

    hs is (T, H); cache holds everything the backward pass needs.
    """
    t_len, n_in = xs.shape
    hd = h0.shape[0]
    hs = np.empty((t_len, hd))
    cs = np.empty((t_len, hd))
    gates = np.empty((t_len, 5, hd))
    h, c = h0, c0
    for t in range(t_len):
        xh = np.concatenate([xs[t], h])
        h, c, (i, f, g, o, tc) = lstm_cell_fwd(xh, c, w, b)
        hs[t] = h
        cs[t] = c
        gates[t, 0] = i
        gates[t, 1] = f
        gates[t, 2] = g
        gates[t, 3] = o
        gates[t, 4] = tc
    return hs, (xs, hs, cs, gates, h0, c0)


def lstm_seq_bwd(ghs, w, cache):
    """Backward through time for lstm_seq_fwd. ghs is (T, H).

    Returns (g_xs, g_w, g_b, g_h0, g_c0).
    """
    xs, hs, cs, gates, h0, c0 = cache
    t_len, n_in = xs.shape
    hd = h0.shape[0]
    g_xs = np.empty_like(xs)
    g_w = np.zeros_like(w)
    g_b = np.zeros(4 * hd)
    gh = np.zeros(hd)
    gc = np.zeros(hd)
    for t in range(t_len - 1, -1, -1):
        gh = gh + ghs[t]
        h_prev = hs[t - 1] if t > 0 else h0
        c_prev = cs[t - 1] if t > 0 else c0
        xh = np.concatenate([xs[t], h_prev])
        g_xh, gc, gw_t, gb_t = lstm_cell_bwd(
            gh, gc, xh, c_prev,
            w, tuple(gates[t]))
        g_w += gw_t
        g_b += gb_t
        g_xs[t] = g_xh[:n_in]
        gh = g_xh[n_in:]
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


def adam_update(value, grad, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """In-place decoupled-weight-decay Adam step on one parameter array."""
    if weight_decay != 0.0:
        value -= lr * weight_decay * value
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    value -= lr * mhat / (np.sqrt(vhat) + eps)
