"""Benchmark the JIT kernels against the plain-numpy fallback.

Runs each hot kernel (batched BiLSTM forward, backward-through-time, and the
complex Cholesky solve) through the numba-compiled variant and the pure
numpy implementation, reporting wall time per call and the speedup.  The
process-wide GFNM_BACKEND selection is bypassed so both variants always run.

Usage: python benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from gfnoma.backend import compile_for_benchmark
from gfnoma.kernels import lstm_seq_backward_py, lstm_seq_forward_py
from gfnoma.linalg import chol_factor_loops_py, chol_factor_py
from gfnoma.rng import RngStream


def timeit(fn, args, repeats):
    fn(*args)  # warmup (and JIT compile)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench_lstm(repeats):
    T, B, D, H = 7, 20, 50, 128
    st = RngStream(1)
    x = st.gaussian(T * B * D).reshape(T, B, D)
    wxt = 0.1 * st.gaussian(D * 4 * H).reshape(D, 4 * H)
    wht = 0.1 * st.gaussian(H * 4 * H).reshape(H, 4 * H)
    b = np.zeros(4 * H)
    h0 = np.zeros((B, H))
    fwd_args = (x, wxt, wht, b, h0, h0)
    jit_fwd = compile_for_benchmark(lstm_seq_forward_py)
    t_np = timeit(lstm_seq_forward_py, fwd_args, repeats)
    t_jit = timeit(jit_fwd, fwd_args, repeats)
    yield ("lstm forward (T=7,B=20,H=128)", t_np, t_jit)

    h_seq, c_seq, gates = lstm_seq_forward_py(*fwd_args)
    dh = st.gaussian(T * B * H).reshape(T, B, H)
    bwd_args = (x, wxt, wht, gates, h_seq, c_seq, h0, h0, dh)
    jit_bwd = compile_for_benchmark(lstm_seq_backward_py)
    t_np = timeit(lstm_seq_backward_py, bwd_args, repeats)
    t_jit = timeit(jit_bwd, bwd_args, repeats)
    yield ("lstm backward", t_np, t_jit)


def bench_cholesky(repeats):
    st = RngStream(2)
    n = 125
    g = st.gaussian_complex(n * n).reshape(n, n)
    h = np.ascontiguousarray(g.conj().T @ g + np.eye(n))
    jit_chol = compile_for_benchmark(chol_factor_loops_py)
    t_np = timeit(chol_factor_py, (h, 0.0), repeats)
    t_jit = timeit(jit_chol, (h, 0.0), repeats)
    yield (f"complex cholesky (n={n})", t_np, t_jit)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()
    rows = []
    for bench in (bench_lstm, bench_cholesky):
        rows.extend(bench(args.repeats))
    width = max(len(name) for name, _, _ in rows)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  speedup")
    for name, t_np, t_jit in rows:
        print(f"{name:<{width}}  {t_np * 1e3:>8.2f}ms  {t_jit * 1e3:>8.2f}ms"
              f"  {t_np / t_jit:>6.2f}x")


if __name__ == "__main__":
    main()
