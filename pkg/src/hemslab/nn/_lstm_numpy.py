"""Pure-numpy LSTM sequence kernels (fallback for the compiled extension).

Gate stacking convention: weight rows are ordered [input, forget, output,
candidate], i.e. W[0:H] drives the input gate, W[H:2H] the forget gate,
W[2H:3H] the output gate and W[3H:4H] the tanh candidate.
"""

import numpy as np


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm_seq_forward(x, h0, c0, W, U, b):
    """Run an LSTM over a whole sequence.

    x: [T, D], h0/c0: [H], W: [4H, D], U: [4H, H], b: [4H]
    Returns (hs [T, H], cs [T, H], gates [T, 4H]) where gates stores the
    activated i, f, o, g values needed by the backward pass.
    """
    T = x.shape[0]
    H = h0.shape[0]
    hs = np.empty((T, H))
    cs = np.empty((T, H))
    gates = np.empty((T, 4 * H))
    xW = x @ W.T  # [T, 4H]
    h = h0
    c = c0
    for t in range(T):
        z = xW[t] + h @ U.T + b
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H : 2 * H])
        o = _sigmoid(z[2 * H : 3 * H])
        g = np.tanh(z[3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :H] = i
        gates[t, H : 2 * H] = f
        gates[t, 2 * H : 3 * H] = o
        gates[t, 3 * H :] = g
        hs[t] = h
        cs[t] = c
    return hs, cs, gates


def lstm_seq_backward(d_hs, dc_last, x, h0, c0, W, U, hs, cs, gates):
    """Reverse-mode pass matching lstm_seq_forward.

    d_hs: [T, H] upstream gradient on every hidden state; dc_last: [H]
    upstream gradient on the final cell state.
    Returns (dx, dh0, dc0, dW, dU, db).
    """
    T, H = hs.shape
    dzs = np.empty((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.asarray(dc_last, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        i = gates[t, :H]
        f = gates[t, H : 2 * H]
        o = gates[t, 2 * H : 3 * H]
        g = gates[t, 3 * H :]
        c = cs[t]
        c_prev = cs[t - 1] if t > 0 else c0
        dh = d_hs[t] + dh_next
        tc = np.tanh(c)
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = dzs[t]
        dz[:H] = di * i * (1.0 - i)
        dz[H : 2 * H] = df * f * (1.0 - f)
        dz[2 * H : 3 * H] = do * o * (1.0 - o)
        dz[3 * H :] = dg * (1.0 - g * g)
        dh_next = dz @ U
        dc_next = dc * f
    h_prev_all = np.vstack([h0[None, :], hs[:-1]])
    dW = dzs.T @ x
    dU = dzs.T @ h_prev_all
    db = dzs.sum(axis=0)
    dx = dzs @ W
    return dx, dh_next, dc_next, dW, dU, db
