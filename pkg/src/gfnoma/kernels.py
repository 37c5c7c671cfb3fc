"""Hot sequence kernels: batched 4-gate LSTM forward and backward-through-time.

Written once in numba-compilable numpy style; `backend.jit_kernel` decides at
import whether they run compiled or as plain numpy.  Gate order throughout is
input | forget | candidate | output, stacked along the last weight axis, and
weights are stored pre-transposed as (d_in, 4H) / (H, 4H) so the per-step
products are plain row-major matmuls.
"""

import numpy as np

from .backend import jit_kernel


def _lstm_seq_forward(x, wxt, wht, b, h0, c0):
    """Run one LSTM over a batched sequence.

    x: (T, B, D); wxt: (D, 4H); wht: (H, 4H); b: (4H,); h0, c0: (B, H).
    Returns h_seq, c_seq (T, B, H) and post-activation gates (T, B, 4H).
    """
    T, B, _ = x.shape
    H = wht.shape[0]
    h_seq = np.empty((T, B, H))
    c_seq = np.empty((T, B, H))
    gates = np.empty((T, B, 4 * H))
    h = h0.copy()
    c = c0.copy()
    for t in range(T):
        raw = np.dot(x[t], wxt) + np.dot(h, wht) + b
        gi = 1.0 / (1.0 + np.exp(-raw[:, 0 * H:1 * H]))
        gf = 1.0 / (1.0 + np.exp(-raw[:, 1 * H:2 * H]))
        gg = np.tanh(raw[:, 2 * H:3 * H])
        go = 1.0 / (1.0 + np.exp(-raw[:, 3 * H:4 * H]))
        c = gf * c + gi * gg
        h = go * np.tanh(c)
        gates[t, :, 0 * H:1 * H] = gi
        gates[t, :, 1 * H:2 * H] = gf
        gates[t, :, 2 * H:3 * H] = gg
        gates[t, :, 3 * H:4 * H] = go
        h_seq[t] = h
        c_seq[t] = c
    return h_seq, c_seq, gates


def _lstm_seq_backward(x, wxt, wht, gates, h_seq, c_seq, h0, c0, dh_out):
    """Backprop through time for `_lstm_seq_forward`.

    dh_out: (T, B, H) upstream gradient on each h_seq[t].  Initial states are
    treated as constants.  Returns dx, dwxt, dwht, db.
    """
    T, B, D = x.shape
    H = wht.shape[0]
    dx = np.empty((T, B, D))
    dwxt = np.zeros((D, 4 * H))
    dwht = np.zeros((H, 4 * H))
    db = np.zeros(4 * H)
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    draw = np.empty((B, 4 * H))
    for t in range(T - 1, -1, -1):
        dh = dh + dh_out[t]
        gi = gates[t, :, 0 * H:1 * H]
        gf = gates[t, :, 1 * H:2 * H]
        gg = gates[t, :, 2 * H:3 * H]
        go = gates[t, :, 3 * H:4 * H]
        tc = np.tanh(c_seq[t])
        do = dh * tc
        dc = dc + dh * go * (1.0 - tc * tc)
        c_prev = c_seq[t - 1] if t > 0 else c0
        h_prev = h_seq[t - 1] if t > 0 else h0
        di = dc * gg
        df = dc * c_prev
        dg = dc * gi
        dc = dc * gf
        draw[:, 0 * H:1 * H] = di * gi * (1.0 - gi)
        draw[:, 1 * H:2 * H] = df * gf * (1.0 - gf)
        draw[:, 2 * H:3 * H] = dg * (1.0 - gg * gg)
        draw[:, 3 * H:4 * H] = do * go * (1.0 - go)
        dwxt += np.dot(x[t].T, draw)
        dwht += np.dot(h_prev.T, draw)
        db += np.sum(draw, axis=0)
        dx[t] = np.dot(draw, wxt.T)
        dh = np.dot(draw, wht.T)
    return dx, dwxt, dwht, db


lstm_seq_forward = jit_kernel(_lstm_seq_forward)
lstm_seq_backward = jit_kernel(_lstm_seq_backward)

# plain-python references, used by the backend benchmark
lstm_seq_forward_py = _lstm_seq_forward
lstm_seq_backward_py = _lstm_seq_backward
