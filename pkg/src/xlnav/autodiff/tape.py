"""Reverse-mode autodiff over dense float64 arrays.

A ``Tape`` is an append-only list of nodes in construction order; every
node's inputs come earlier on the tape, so a single reverse sweep
propagates gradients. Values are plain numpy float64 arrays (row-major),
which realizes the Tensor contract directly: ``shape`` + flat data,
finite after any forward primitive on finite inputs.

Besides the small generic primitives (matmul, add, mul, concat, tanh,
sigmoid, softmax, embedding, dropout, slice, sum, cross_entropy) the
tape has fused kinds (affine, lstm_cell, lstm_seq, attn) whose forward
and backward bodies live in the kernel lanes under ``xlnav._kernels``;
the fused kinds exist purely so the per-timestep inner loop is a handful
of kernel calls instead of dozens of node visits.
"""

import numpy as np

from .._kernels import impl as K


class ShapeError(ValueError):
    """Raised when a primitive's input shapes do not conform."""

    def __init__(self, primitive, shapes, detail=""):
        self.primitive = primitive
        self.shapes = [tuple(s) for s in shapes]
        msg = f"{primitive}: incompatible shapes {self.shapes}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Node:
    __slots__ = ("kind", "inputs", "value", "cache", "attrs", "param")

    def __init__(self, kind, inputs, value, cache=None, attrs=None, param=None):
        self.kind = kind
        self.inputs = inputs
        self.value = value
        self.cache = cache
        self.attrs = attrs
        self.param = param  # (ParamStore, name) for trainable leaves


def _asarray(x):
    return np.asarray(x, dtype=np.float64)


class Tape:
    """Single-writer computation graph; construct forward, sweep backward."""

    def __init__(self):
        self.nodes = []

    def _push(self, node):
        self.nodes.append(node)
        return len(self.nodes) - 1

    def val(self, i):
        return self.nodes[i].value

    def leaf(self, value):
        """Constant input; receives no gradient."""
        return self._push(Node("leaf", (), _asarray(value)))

    def param(self, store, name):
        """Trainable leaf backed by a ParamStore entry."""
        return self._push(Node("param", (), store.value(name),
                               param=(store, name)))

    def apply(self, kind, *input_ids, **attrs):
        """Record one forward primitive and return the output node id."""
        fwd = _FORWARD.get(kind)
        if fwd is None:
            raise KeyError(f"unknown primitive kind: {kind}")
        vals = [self.nodes[i].value for i in input_ids]
        out, cache = fwd(vals, attrs)
        return self._push(Node(kind, input_ids, out, cache, attrs or None))

    # Convenience wrappers used throughout the agent code.
    def matmul(self, a, b):
        return self.apply("matmul", a, b)

    def add(self, a, b):
        return self.apply("add", a, b)

    def mul(self, a, b):
        return self.apply("mul", a, b)

    def concat(self, *ids):
        return self.apply("concat", *ids)

    def tanh(self, a):
        return self.apply("tanh", a)

    def sigmoid(self, a):
        return self.apply("sigmoid", a)

    def softmax(self, a):
        return self.apply("softmax", a)

    def embedding(self, table, ids):
        return self.apply("embedding", table, ids=tuple(int(i) for i in ids))

    def dropout(self, a, mask):
        return self.apply("dropout", a, mask=mask)

    def slice(self, a, index):
        return self.apply("slice", a, index=index)

    def sum(self, a):
        return self.apply("sum", a)

    def cross_entropy(self, logits, target):
        return self.apply("cross_entropy", logits, target=int(target))

    def affine(self, x, w, b):
        return self.apply("affine", x, w, b)

    def lstm_cell(self, xh, c, w, b):
        return self.apply("lstm_cell", xh, c, w, b)

    def lstm_seq(self, xs, w, b, h0, c0):
        return self.apply("lstm_seq", xs, w, b, h0, c0)

    def attn(self, q, keys, values, w):
        return self.apply("attn", q, keys, values, w)

    def attn_weights(self, node_id):
        """Attention weights recorded by an attn node (read-only)."""
        node = self.nodes[node_id]
        if node.kind != "attn":
            raise ValueError("attn_weights requires an attn node")
        return node.cache


def backward(tape, loss_id, params=None):
    """Accumulate d(loss)/d(param) into every ParamStore gradient.

    ``loss_id`` must be a scalar node. Non-parameter leaves are skipped.
    Returns the gradient array per node id (for diagnostics).
    """
    loss = tape.nodes[loss_id]
    if loss.value.shape != ():
        raise ShapeError("backward", [loss.value.shape],
                         "loss must be a scalar")
    grads = [None] * (loss_id + 1)
    grads[loss_id] = np.ones(())
    for i in range(loss_id, -1, -1):
        node = tape.nodes[i]
        g = grads[i]
        if g is None:
            continue
        if node.param is not None:
            store, name = node.param
            store.grad(name)[...] += g
            continue
        if not node.inputs:
            continue
        in_vals = [tape.nodes[j].value for j in node.inputs]
        gs = _BACKWARD[node.kind](g, in_vals, node.value, node.cache,
                                  node.attrs)
        for j, gj in zip(node.inputs, gs):
            if gj is None:
                continue
            if grads[j] is None:
                grads[j] = np.zeros_like(tape.nodes[j].value)
            grads[j] += gj
    return grads


# ---------------------------------------------------------------------------
# Primitive definitions: fwd(vals, attrs) -> (out, cache)
#                        bwd(grad, vals, out, cache, attrs) -> per-input grads


def _fwd_matmul(vals, attrs):
    a, b = vals
    if a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", [a.shape, b.shape])
    return a @ b, None


def _bwd_matmul(g, vals, out, cache, attrs):
    a, b = vals
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if a.ndim == 1:  # (n,) @ (n,m) -> (m,)
        return b @ g, np.outer(a, g)
    if b.ndim == 1:  # (k,n) @ (n,) -> (k,)
        return np.outer(g, b), a.T @ g
    return g @ b.T, a.T @ g


def _fwd_add(vals, attrs):
    a, b = vals
    if a.shape != b.shape:
        raise ShapeError("add", [a.shape, b.shape])
    return a + b, None


def _bwd_add(g, vals, out, cache, attrs):
    return g, g


def _fwd_mul(vals, attrs):
    a, b = vals
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError("mul", [a.shape, b.shape])
    return a * b, None


def _bwd_mul(g, vals, out, cache, attrs):
    a, b = vals
    ga = g * b
    gb = g * a
    if a.shape == () and ga.shape != ():
        ga = ga.sum()
    if b.shape == () and gb.shape != ():
        gb = gb.sum()
    return ga, gb


def _fwd_concat(vals, attrs):
    nd = vals[0].ndim
    if any(v.ndim != nd for v in vals):
        raise ShapeError("concat", [v.shape for v in vals])
    return np.concatenate(vals, axis=-1), None


def _bwd_concat(g, vals, out, cache, attrs):
    sizes = [v.shape[-1] for v in vals]
    splits = np.cumsum(sizes)[:-1]
    return np.split(g, splits, axis=-1)


def _fwd_tanh(vals, attrs):
    return K.tanh_fwd(vals[0]), None


def _bwd_tanh(g, vals, out, cache, attrs):
    return (K.tanh_bwd(g, out),)


def _fwd_sigmoid(vals, attrs):
    return K.sigmoid_fwd(vals[0]), None


def _bwd_sigmoid(g, vals, out, cache, attrs):
    return (K.sigmoid_bwd(g, out),)


def _fwd_softmax(vals, attrs):
    return K.softmax_rows_fwd(vals[0]), None


def _bwd_softmax(g, vals, out, cache, attrs):
    return (K.softmax_rows_bwd(g, out),)


def _fwd_embedding(vals, attrs):
    table = vals[0]
    ids = attrs["ids"]
    if table.ndim != 2:
        raise ShapeError("embedding", [table.shape])
    if any(i < 0 or i >= table.shape[0] for i in ids):
        raise IndexError(f"embedding: id out of range for table "
                         f"{table.shape}: {ids}")
    return table[list(ids)], None


def _bwd_embedding(g, vals, out, cache, attrs):
    gt = np.zeros_like(vals[0])
    np.add.at(gt, list(attrs["ids"]), g)
    return (gt,)


def _fwd_dropout(vals, attrs):
    x = vals[0]
    mask = attrs["mask"]
    if x.shape != mask.shape:
        raise ShapeError("dropout", [x.shape, mask.shape])
    return x * mask, None


def _bwd_dropout(g, vals, out, cache, attrs):
    return (g * attrs["mask"],)


def _fwd_slice(vals, attrs):
    # np.ascontiguousarray would promote 0-d results to shape (1,);
    # keep scalar slices scalar.
    out = np.asarray(vals[0][attrs["index"]])
    return out.copy() if out.ndim == 0 else np.ascontiguousarray(out), None


def _bwd_slice(g, vals, out, cache, attrs):
    gx = np.zeros_like(vals[0])
    gx[attrs["index"]] = g
    return (gx,)


def _fwd_sum(vals, attrs):
    return np.asarray(vals[0].sum()), None


def _bwd_sum(g, vals, out, cache, attrs):
    return (np.full_like(vals[0], float(g)),)


def _fwd_cross_entropy(vals, attrs):
    logits = vals[0]
    target = attrs["target"]
    if logits.ndim != 1:
        raise ShapeError("cross_entropy", [logits.shape], "1-D logits")
    if not 0 <= target < logits.shape[0]:
        raise IndexError(f"cross_entropy: target {target} out of range "
                         f"for {logits.shape[0]} logits")
    p = K.softmax_rows_fwd(logits)
    loss = -np.log(max(p[target], 1e-300))
    return np.asarray(loss), p


def _bwd_cross_entropy(g, vals, out, cache, attrs):
    p = cache.copy()
    p[attrs["target"]] -= 1.0
    return (g * p,)


def _fwd_affine(vals, attrs):
    x, w, b = vals
    if x.shape[-1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError("affine", [x.shape, w.shape, b.shape])
    return K.affine_fwd(x, w, b), None


def _bwd_affine(g, vals, out, cache, attrs):
    x, w, b = vals
    if x.ndim == 1:
        gx = w @ g
        gw = np.outer(x, g)
        return gx, gw, g.copy()
    return K.affine_bwd(g, x, w)


def _fwd_lstm_cell(vals, attrs):
    xh, c, w, b = vals
    hd = c.shape[-1]
    if xh.shape[-1] != w.shape[0] or w.shape[1] != 4 * hd or b.shape[0] != 4 * hd:
        raise ShapeError("lstm_cell", [v.shape for v in vals])
    h_new, c_new, gates = K.lstm_cell_fwd(xh, c, w, b)
    return np.stack([h_new, c_new]), gates


def _bwd_lstm_cell(g, vals, out, cache, attrs):
    xh, c, w, b = vals
    g_xh, g_c, g_w, g_b = K.lstm_cell_bwd(g[0], g[1], xh, c, w, cache)
    return g_xh, g_c, g_w, g_b


def _fwd_lstm_seq(vals, attrs):
    xs, w, b, h0, c0 = vals
    hd = h0.shape[0]
    if xs.ndim != 2 or xs.shape[1] + hd != w.shape[0] or w.shape[1] != 4 * hd:
        raise ShapeError("lstm_seq", [v.shape for v in vals])
    hs, cache = K.lstm_seq_fwd(xs, w, b, h0, c0)
    return hs, cache


def _bwd_lstm_seq(g, vals, out, cache, attrs):
    xs, w, b, h0, c0 = vals
    g_xs, g_w, g_b, g_h0, g_c0 = K.lstm_seq_bwd(g, w, cache)
    return g_xs, g_w, g_b, g_h0, g_c0


def _fwd_attn(vals, attrs):
    q, keys, values, w = vals
    if q.shape[0] != w.shape[0] or keys.shape[1] != w.shape[1] \
            or keys.shape[0] != values.shape[0]:
        raise ShapeError("attn", [v.shape for v in vals])
    ctx, weights = K.attn_fwd(q, keys, values, w)
    return ctx, weights


def _bwd_attn(g, vals, out, cache, attrs):
    q, keys, values, w = vals
    return K.attn_bwd(g, q, keys, values, w, cache)


_FORWARD = {
    "matmul": _fwd_matmul, "add": _fwd_add, "mul": _fwd_mul,
    "concat": _fwd_concat, "tanh": _fwd_tanh, "sigmoid": _fwd_sigmoid,
    "softmax": _fwd_softmax, "embedding": _fwd_embedding,
    "dropout": _fwd_dropout, "slice": _fwd_slice, "sum": _fwd_sum,
    "cross_entropy": _fwd_cross_entropy, "affine": _fwd_affine,
    "lstm_cell": _fwd_lstm_cell, "lstm_seq": _fwd_lstm_seq,
    "attn": _fwd_attn,
}

_BACKWARD = {
    "matmul": _bwd_matmul, "add": _bwd_add, "mul": _bwd_mul,
    "concat": _bwd_concat, "tanh": _bwd_tanh, "sigmoid": _bwd_sigmoid,
    "softmax": _bwd_softmax, "embedding": _bwd_embedding,
    "dropout": _bwd_dropout, "slice": _bwd_slice, "sum": _bwd_sum,
    "cross_entropy": _bwd_cross_entropy, "affine": _bwd_affine,
    "lstm_cell": _bwd_lstm_cell, "lstm_seq": _bwd_lstm_seq,
    "attn": _bwd_attn,
}

PRIMITIVE_KINDS = tuple(sorted(_FORWARD))
