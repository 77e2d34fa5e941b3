"""Benchmark the numpy kernel lane against the compiled lane.

Run with: python3 benchmarks/bench_kernels.py

Times the hot kernels at the shapes the agent actually uses
(single-row decode steps, ~40-token encoder sequences) plus a full
teacher-forced episode gradient through the tape on each backend.
"""

import time
import timeit

import numpy as np

from xlnav._kernels import available_backends


def bench(label, fn, number=None):
    if number is None:
        # aim for ~0.3 s per measurement
        t = timeit.timeit(fn, number=10) / 10
        number = max(5, int(0.3 / max(t, 1e-9)))
    best = min(timeit.repeat(fn, number=number, repeat=3)) / number
    return label, best * 1e6  # microseconds


def kernel_cases(lane):
    r = np.random.default_rng(0)
    d_enc, d_dec, t_len = 64, 64, 40
    n_in = 32
    xs = r.normal(size=(t_len, n_in))
    w_seq = r.normal(size=(n_in + d_enc, 4 * d_enc)) * 0.1
    b_seq = r.normal(size=4 * d_enc)
    h0 = np.zeros(d_enc)
    c0 = np.zeros(d_enc)
    hs, cache = lane.lstm_seq_fwd(xs, w_seq, b_seq, h0, c0)
    ghs = r.normal(size=(t_len, d_enc))

    n_cell = 3 * d_dec
    xh = r.normal(size=n_cell + d_dec)
    c = r.normal(size=d_dec)
    w_cell = r.normal(size=(n_cell + d_dec, 4 * d_dec)) * 0.1
    b_cell = r.normal(size=4 * d_dec)
    _, _, gates = lane.lstm_cell_fwd(xh, c, w_cell, b_cell)
    gh = r.normal(size=d_dec)
    gc = r.normal(size=d_dec)

    q = r.normal(size=d_dec)
    keys = r.normal(size=(8, d_dec))
    w_attn = r.normal(size=(d_dec, d_dec))
    _, weights = lane.attn_fwd(q, keys, keys, w_attn)
    g_ctx = r.normal(size=d_dec)

    val = r.normal(size=(128, 256))
    grad = r.normal(size=(128, 256))
    m = np.zeros_like(val)
    v = np.zeros_like(val)

    yield bench("lstm_seq_fwd  (40x32->64)",
                lambda: lane.lstm_seq_fwd(xs, w_seq, b_seq, h0, c0))
    yield bench("lstm_seq_bwd  (40x32->64)",
                lambda: lane.lstm_seq_bwd(ghs, w_seq, cache))
    yield bench("lstm_cell_fwd (192->64)",
                lambda: lane.lstm_cell_fwd(xh, c, w_cell, b_cell))
    yield bench("lstm_cell_bwd (192->64)",
                lambda: lane.lstm_cell_bwd(gh, gc, xh, c, w_cell, gates))
    yield bench("attn fwd+bwd  (8 keys, d=64)",
                lambda: lane.attn_bwd(g_ctx, q, keys, keys, w_attn,
                                      lane.attn_fwd(q, keys, keys,
                                                    w_attn)[1]))
    yield bench("softmax_rows  (16x64)",
                lambda: lane.softmax_rows_fwd(val[:16, :64]))
    yield bench("adam_update   (128x256)",
                lambda: lane.adam_update(val, grad, m, v, 3, 1e-3, 0.9,
                                         0.999, 1e-8, 5e-4))


def episode_gradient_case():
    """Full episode gradient wall time on the currently selected lane."""
    from xlnav import agent as A
    from xlnav import world as W

    world = W.generate_world(3, 25)
    rng = np.random.default_rng(0)
    spec = W.sample_trajectory(world, rng)
    config = A.AgentConfig(vocab_size=40, view_dim=W.observe(
        world, W.Pose(0, 0)).shape[1], d_embed=32, d_enc=64, d_dec=64,
        dropout=0.0)
    params = A.init_params(config, seed=0)
    ids = {"src": np.array([2] + list(rng.integers(4, 40, size=20)) + [3])}

    def run():
        A.accumulate_episode_gradient(world, spec, ids, params, config)
    t0 = time.perf_counter()
    n = 20
    for _ in range(n):
        run()
    return (time.perf_counter() - t0) / n * 1e3


def main():
    lanes = available_backends()
    names = [lane.BACKEND_NAME for lane in lanes]
    rows = {}
    for lane in lanes:
        for label, us in kernel_cases(lane):
            rows.setdefault(label, {})[lane.BACKEND_NAME] = us
    width = max(len(k) for k in rows)
    header = f"{'kernel':<{width}}  " + "  ".join(
        f"{n:>10}" for n in names)
    if len(names) == 2:
        header += "   speedup"
    print(header)
    print("-" * len(header))
    for label, per in rows.items():
        line = f"{label:<{width}}  " + "  ".join(
            f"{per[n]:>8.1f}us" for n in names)
        if len(names) == 2:
            line += f"   {per[names[0]] / per[names[1]]:>6.2f}x"
        print(line)
    from xlnav._kernels import BACKEND
    print(f"\nfull episode gradient ({BACKEND} lane): "
          f"{episode_gradient_case():.2f} ms")


if __name__ == "__main__":
    main()
