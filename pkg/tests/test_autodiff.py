import math

import numpy as np
import pytest

from xlnav.autodiff import (Tape, backward, ShapeError, ParamStore,
                            AdamState, adam_step, grad_check)


def finite_diff(closure, params, eps=1e-5):
    """Central finite differences, the independent oracle for backward."""
    out = {}
    for name in params.names():
        flat = params.value(name).reshape(-1)
        g = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = closure()
            flat[i] = orig - eps
            down = closure()
            flat[i] = orig
            g[i] = (up - down) / (2 * eps)
        out[name] = g.reshape(params.value(name).shape)
    return out


class TestForwardPrimitives:
    def test_tanh_origin(self):
        t = Tape()
        assert t.val(t.tanh(t.leaf([0.0])))[0] == 0.0

    def test_softmax_uniform(self):
        t = Tape()
        out = t.val(t.softmax(t.leaf([0.0, 0.0, 0.0])))
        assert np.allclose(out, [1 / 3] * 3)

    def test_matmul_identity(self):
        t = Tape()
        x = np.arange(12.0).reshape(3, 4)
        out = t.val(t.matmul(t.leaf(np.eye(3)), t.leaf(x)))
        assert np.array_equal(out, x)

    def test_shape_mismatch_is_structured(self):
        t = Tape()
        with pytest.raises(ShapeError) as ei:
            t.matmul(t.leaf(np.ones((2, 3))), t.leaf(np.ones((2, 3))))
        assert ei.value.primitive == "matmul"
        assert ei.value.shapes == [(2, 3), (2, 3)]

    def test_softmax_rows_simplex(self):
        rng = np.random.default_rng(0)
        t = Tape()
        out = t.val(t.softmax(t.leaf(rng.normal(size=(5, 7)))))
        assert np.all(out >= 0)
        assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def test_sigmoid_open_interval(self):
        t = Tape()
        out = t.val(t.sigmoid(t.leaf([-50.0, 0.0, 50.0])))
        assert np.all(out > 0) and np.all(out < 1)

    def test_dropout_mask_applied(self):
        t = Tape()
        mask = np.array([2.0, 0.0, 2.0])
        out = t.val(t.dropout(t.leaf([1.0, 1.0, 1.0]), mask))
        assert np.array_equal(out, [2.0, 0.0, 2.0])

    def test_replay_bitwise_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 4))

        def build():
            t = Tape()
            a = t.leaf(x)
            return t.val(t.softmax(t.tanh(t.matmul(a, a))))

        assert np.array_equal(build(), build())


class TestCrossEntropy:
    def test_uniform_two_class(self):
        t = Tape()
        loss = t.val(t.cross_entropy(t.leaf([0.0, 0.0]), 0))
        assert math.isclose(float(loss), math.log(2), rel_tol=1e-12)

    def test_near_certain(self):
        t = Tape()
        loss = t.val(t.cross_entropy(t.leaf([100.0, 0.0]), 0))
        assert float(loss) < 1e-12

    def test_hand_evaluated(self):
        # independent direct evaluation of -log softmax(logits)[1]
        logits = np.array([1.0, 2.0, 0.5])
        expected = -math.log(math.exp(2.0) / sum(math.exp(v) for v in logits))
        t = Tape()
        loss = t.val(t.cross_entropy(t.leaf(logits), 1))
        assert math.isclose(float(loss), expected, rel_tol=1e-12)

    def test_out_of_range_target(self):
        t = Tape()
        with pytest.raises(IndexError):
            t.cross_entropy(t.leaf([0.0, 1.0]), 2)


class TestBackward:
    def test_product_rule(self):
        store = ParamStore()
        store.add("x", [2.0])
        store.add("y", [3.0])
        t = Tape()
        loss = t.sum(t.mul(t.param(store, "x"), t.param(store, "y")))
        backward(t, loss)
        assert store.grad("x")[0] == 3.0
        assert store.grad("y")[0] == 2.0

    def test_ce_gradient_is_p_minus_onehot(self):
        store = ParamStore()
        store.add("logits", [0.3, -1.2, 0.7])
        t = Tape()
        lg = t.param(store, "logits")
        loss = t.cross_entropy(lg, 2)
        backward(t, loss)
        p = np.exp(store.value("logits"))
        p /= p.sum()
        p[2] -= 1.0
        assert np.allclose(store.grad("logits"), p, atol=1e-12)

    def test_nonscalar_loss_rejected(self):
        t = Tape()
        v = t.leaf([1.0, 2.0])
        with pytest.raises(ShapeError):
            backward(t, v)

    def test_two_layer_network_vs_finite_differences(self):
        rng = np.random.default_rng(11)
        store = ParamStore()
        store.add("w1", rng.normal(size=(5, 6)) * 0.5)
        store.add("b1", rng.normal(size=6) * 0.1)
        store.add("w2", rng.normal(size=(6, 3)) * 0.5)
        store.add("b2", rng.normal(size=3) * 0.1)
        x = rng.normal(size=(2, 5))

        def closure():
            t = Tape()
            h = t.tanh(t.affine(t.leaf(x), t.param(store, "w1"),
                                t.param(store, "b1")))
            out = t.affine(h, t.param(store, "w2"), t.param(store, "b2"))
            loss = t.sum(t.mul(out, out))
            backward(t, loss)
            return float(t.val(loss))

        closure()
        analytic = {n: store.grad(n).copy() for n in store.names()}
        store.zero_grads()
        numeric = finite_diff(closure, store)
        for name in store.names():
            denom = np.maximum(np.abs(analytic[name]),
                               np.maximum(np.abs(numeric[name]), 1e-8))
            assert np.max(np.abs(analytic[name] - numeric[name]) / denom) < 1e-6


@pytest.mark.parametrize("seed", range(100))
def test_random_graph_gradients_match_finite_differences(seed):
    """Property: backward matches central differences on random graphs."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    m = int(rng.integers(2, 8))
    store = ParamStore()
    store.add("w", rng.normal(size=(n, m)) * 0.4)
    store.add("w_att", rng.normal(size=(n, n)) * 0.4)
    store.add("q", rng.normal(size=n) * 0.4)
    store.add("v", rng.normal(size=(3, m)) * 0.4)
    keys = rng.normal(size=(3, n)) * 0.4
    target = int(rng.integers(0, m))

    def closure():
        t = Tape()
        w = t.param(store, "w")
        q = t.param(store, "q")
        ctx = t.attn(q, t.leaf(keys), t.param(store, "v"),
                     t.param(store, "w_att"))
        logits = t.tanh(t.matmul(q, w))
        loss = t.add(t.cross_entropy(logits, target),
                     t.sum(t.mul(ctx, ctx)))
        backward(t, loss)
        return float(t.val(loss))

    closure()
    analytic = {nm: store.grad(nm).copy() for nm in store.names()}
    store.zero_grads()
    numeric = finite_diff(closure, store)
    for nm in store.names():
        # floor 1e-4: below that, float64 central differences hit their
        # cancellation noise (~1e-11 absolute), so the comparison for
        # negligible coordinates is effectively absolute at 1e-10.
        denom = np.maximum(np.abs(analytic[nm]),
                           np.maximum(np.abs(numeric[nm]), 1e-4))
        assert np.max(np.abs(analytic[nm] - numeric[nm]) / denom) < 1e-6


class TestFusedKernels:
    def test_lstm_cell_and_seq_agree(self):
        rng = np.random.default_rng(5)
        n, hd, t_len = 4, 3, 6
        w = rng.normal(size=(n + hd, 4 * hd)) * 0.4
        b = rng.normal(size=4 * hd) * 0.1
        xs = rng.normal(size=(t_len, n))
        t = Tape()
        hs = t.val(t.lstm_seq(t.leaf(xs), t.leaf(w), t.leaf(b),
                              t.leaf(np.zeros(hd)), t.leaf(np.zeros(hd))))
        h = np.zeros(hd)
        c = np.zeros(hd)
        t2 = Tape()
        for i in range(t_len):
            xh = t2.concat(t2.leaf(xs[i]), t2.leaf(h))
            hc = t2.val(t2.lstm_cell(xh, t2.leaf(c), t2.leaf(w), t2.leaf(b)))
            h, c = hc[0], hc[1]
            assert np.allclose(hs[i], h, atol=1e-12)

    def test_lstm_seq_gradients(self):
        rng = np.random.default_rng(6)
        n, hd, t_len = 3, 4, 5
        store = ParamStore()
        store.add("w", rng.normal(size=(n + hd, 4 * hd)) * 0.4)
        store.add("b", rng.normal(size=4 * hd) * 0.1)
        store.add("h0", rng.normal(size=hd) * 0.3)
        xs = rng.normal(size=(t_len, n))

        def closure():
            t = Tape()
            hs = t.lstm_seq(t.leaf(xs), t.param(store, "w"),
                            t.param(store, "b"), t.param(store, "h0"),
                            t.leaf(np.zeros(hd)))
            loss = t.sum(t.mul(hs, hs))
            backward(t, loss)
            return float(t.val(loss))

        assert grad_check(closure, store) < 1e-6

    def test_attn_single_key(self):
        t = Tape()
        q = t.leaf([1.0, -2.0])
        keys = t.leaf([[0.5, 0.5]])
        vals = t.leaf([[3.0, 4.0, 5.0]])
        w = t.leaf(np.eye(2))
        ctx = t.attn(q, keys, vals, w)
        assert np.allclose(t.val(ctx), [3.0, 4.0, 5.0])
        assert np.allclose(t.attn_weights(ctx), [1.0])

    def test_attn_identical_keys_uniform(self):
        rng = np.random.default_rng(2)
        t = Tape()
        ctx = t.attn(t.leaf(rng.normal(size=3)),
                     t.leaf(np.tile(rng.normal(size=3), (4, 1))),
                     t.leaf(rng.normal(size=(4, 2))),
                     t.leaf(rng.normal(size=(3, 3))))
        assert np.allclose(t.attn_weights(ctx), 0.25)

    def test_attn_hand_example_identity_w(self):
        # 3 keys, W = I: weights are softmax of plain dot products
        q = np.array([1.0, 0.0])
        keys = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        values = np.array([[1.0], [2.0], [3.0]])
        scores = keys @ q
        expect_w = np.exp(scores - scores.max())
        expect_w /= expect_w.sum()
        t = Tape()
        ctx = t.attn(t.leaf(q), t.leaf(keys), t.leaf(values),
                     t.leaf(np.eye(2)))
        assert np.allclose(t.attn_weights(ctx), expect_w, atol=1e-12)
        assert np.allclose(t.val(ctx), expect_w @ values, atol=1e-12)


class TestAdam:
    def _store(self, value):
        s = ParamStore()
        s.add("p", value)
        return s

    def test_zero_gradient_no_decay_keeps_params(self):
        store = self._store([1.0, -2.0])
        state = AdamState(store)
        before = store.value("p").copy()
        adam_step(store, state, lr=0.1, weight_decay=0.0)
        assert np.array_equal(store.value("p"), before)

    def test_first_step_magnitude_is_lr(self):
        store = self._store([0.0, 0.0])
        store.grad("p")[...] = [0.3, -0.7]
        state = AdamState(store)
        adam_step(store, state, lr=0.01, eps=1e-12)
        # bias-corrected first step is -lr * sign(g) up to eps
        assert np.allclose(store.value("p"), [-0.01, 0.01], atol=1e-6)

    def test_three_step_quadratic_matches_hand_recurrence(self):
        # minimize 0.5 * x^2 from x=1; gradient is x
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        x = 1.0
        m = v = 0.0
        trace = []
        for t in range(1, 4):
            g = x
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            x = x - lr * mhat / (math.sqrt(vhat) + eps)
            trace.append(x)

        store = self._store([1.0])
        state = AdamState(store)
        for t in range(3):
            store.grad("p")[...] = store.value("p")
            adam_step(store, state, lr=lr, beta1=b1, beta2=b2, eps=eps)
            assert math.isclose(store.value("p")[0], trace[t], rel_tol=1e-12)

    def test_decoupled_weight_decay(self):
        store = self._store([2.0])
        state = AdamState(store)
        adam_step(store, state, lr=0.1, weight_decay=0.5)
        # zero gradient: only the decay term moves the value
        assert math.isclose(store.value("p")[0], 2.0 * (1 - 0.1 * 0.5),
                            rel_tol=1e-12)

    def test_bad_lr_rejected(self):
        store = self._store([1.0])
        with pytest.raises(ValueError):
            adam_step(store, AdamState(store), lr=0.0)

    def test_grads_zeroed_after_step(self):
        store = self._store([1.0])
        store.grad("p")[...] = 5.0
        adam_step(store, AdamState(store), lr=0.1)
        assert store.grad("p")[0] == 0.0

    def test_lr_overrides_by_prefix(self):
        store = ParamStore()
        store.add("enc_w", [0.0])
        store.add("dec_w", [0.0])
        store.grad("enc_w")[...] = 1.0
        store.grad("dec_w")[...] = 1.0
        state = AdamState(store)
        adam_step(store, state, lr=0.1, eps=1e-12,
                  lr_overrides={"enc_": 0.001})
        assert math.isclose(store.value("enc_w")[0], -0.001, abs_tol=1e-9)
        assert math.isclose(store.value("dec_w")[0], -0.1, abs_tol=1e-7)


class TestGradCheck:
    def test_linear_model_exact(self):
        rng = np.random.default_rng(7)
        store = ParamStore()
        store.add("w", rng.normal(size=4))
        x = rng.normal(size=4)

        def closure():
            t = Tape()
            loss = t.sum(t.mul(t.param(store, "w"), t.leaf(x)))
            backward(t, loss)
            return float(t.val(loss))

        assert grad_check(closure, store) < 1e-8

    def test_corrupted_gradient_detected(self):
        rng = np.random.default_rng(8)
        store = ParamStore()
        store.add("w", rng.normal(size=3))
        x = rng.normal(size=3)

        def closure():
            t = Tape()
            loss = t.sum(t.mul(t.mul(t.param(store, "w"),
                                     t.param(store, "w")), t.leaf(x)))
            backward(t, loss)
            store.grad("w")[0] *= 2.0  # fault injection
            return float(t.val(loss))

        assert grad_check(closure, store) > 0.3
