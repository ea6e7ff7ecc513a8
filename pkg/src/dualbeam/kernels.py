"""Time-major recurrent kernels shared by both backends.

These functions are written in the numba-compatible subset of numpy: plain
loops over time, 2-D matmuls on contiguous arrays, elementwise gate math.
The backend module runs them as-is (numpy) or compiles them with numba.

Layout conventions:
  xproj: (L, B, G*H) input projections x_t W_ih^T + b_ih, precomputed with
         one large matmul outside the kernel (G = 3 gates for GRU, 4 LSTM).
  w_rec_t: (H, G*H) transposed recurrent weights, so h @ w_rec_t is (B, G*H).
  w_rec: (G*H, H) untransposed, used on the backward pass.
  h_all: (L+1, B, H) states including the initial state at index 0.

Gate order is [reset, update, candidate] for GRU and [input, forget, cell,
output] for LSTM; the candidate uses the reset gate on the recurrent
projection only, and biases enter both projections separately.

Scalar constants are materialized at array dtype (one = np.ones(1, dt)[0])
because float literals would promote float32 math to float64 under numba.
"""

import numpy as np


def gru_forward(xproj, w_rec_t, b_rec, h0):
    """Run a GRU layer over a batch of equal-length sequences.

    Returns h_all (L+1, B, H) and cache (L, B, 4H) holding [r, z, n, a]
    where a is the recurrent candidate projection needed for backprop.
    """
    steps, batch, gates = xproj.shape
    hidden = gates // 3
    one = np.ones(1, xproj.dtype)[0]
    h_all = np.empty((steps + 1, batch, hidden), xproj.dtype)
    cache = np.empty((steps, batch, 4 * hidden), xproj.dtype)
    h_all[0] = h0
    for t in range(steps):
        hproj = np.dot(h_all[t], w_rec_t) + b_rec
        pre = xproj[t] + hproj
        r = one / (one + np.exp(-pre[:, :hidden]))
        z = one / (one + np.exp(-pre[:, hidden:2 * hidden]))
        a = hproj[:, 2 * hidden:]
        n = np.tanh(xproj[t][:, 2 * hidden:] + r * a)
        h_all[t + 1] = (one - z) * n + z * h_all[t]
        cache[t, :, :hidden] = r
        cache[t, :, hidden:2 * hidden] = z
        cache[t, :, 2 * hidden:3 * hidden] = n
        cache[t, :, 3 * hidden:] = a
    return h_all, cache


def gru_backward(dh_out, h_all, cache, w_rec):
    """Backpropagate through gru_forward.

    dh_out (L, B, H) is the loss gradient on each emitted state. Returns
    dxproj (L, B, 3H), dhproj (L, B, 3H) for the two projection paths, and
    dh0 (B, H). Weight/bias gradients are reduced from the projection
    gradients by the caller with batched matmuls.
    """
    steps, batch, hidden = dh_out.shape
    one = np.ones(1, dh_out.dtype)[0]
    dxproj = np.empty((steps, batch, 3 * hidden), dh_out.dtype)
    dhproj = np.empty((steps, batch, 3 * hidden), dh_out.dtype)
    carry = np.zeros((batch, hidden), dh_out.dtype)
    for t in range(steps - 1, -1, -1):
        r = cache[t, :, :hidden]
        z = cache[t, :, hidden:2 * hidden]
        n = cache[t, :, 2 * hidden:3 * hidden]
        a = cache[t, :, 3 * hidden:]
        dh = dh_out[t] + carry
        dz = dh * (h_all[t] - n)
        dn_pre = dh * (one - z) * (one - n * n)
        dz_pre = dz * z * (one - z)
        dr = dn_pre * a
        dr_pre = dr * r * (one - r)
        dxproj[t, :, :hidden] = dr_pre
        dxproj[t, :, hidden:2 * hidden] = dz_pre
        dxproj[t, :, 2 * hidden:] = dn_pre
        dhproj[t, :, :hidden] = dr_pre
        dhproj[t, :, hidden:2 * hidden] = dz_pre
        dhproj[t, :, 2 * hidden:] = dn_pre * r
        carry = dh * z + np.dot(np.ascontiguousarray(dhproj[t]), w_rec)
    return dxproj, dhproj, carry


def lstm_forward(xproj, w_rec_t, b_rec, h0, c0):
    """Run an LSTM layer over a batch of equal-length sequences.

    Returns h_all, c_all (both (L+1, B, H)) and cache (L, B, 5H) holding
    [i, f, g, o, tanh(c)].
    """
    steps, batch, gates = xproj.shape
    hidden = gates // 4
    one = np.ones(1, xproj.dtype)[0]
    h_all = np.empty((steps + 1, batch, hidden), xproj.dtype)
    c_all = np.empty((steps + 1, batch, hidden), xproj.dtype)
    cache = np.empty((steps, batch, 5 * hidden), xproj.dtype)
    h_all[0] = h0
    c_all[0] = c0
    for t in range(steps):
        pre = xproj[t] + np.dot(h_all[t], w_rec_t) + b_rec
        i = one / (one + np.exp(-pre[:, :hidden]))
        f = one / (one + np.exp(-pre[:, hidden:2 * hidden]))
        g = np.tanh(pre[:, 2 * hidden:3 * hidden])
        o = one / (one + np.exp(-pre[:, 3 * hidden:]))
        c = f * c_all[t] + i * g
        tanh_c = np.tanh(c)
        c_all[t + 1] = c
        h_all[t + 1] = o * tanh_c
        cache[t, :, :hidden] = i
        cache[t, :, hidden:2 * hidden] = f
        cache[t, :, 2 * hidden:3 * hidden] = g
        cache[t, :, 3 * hidden:4 * hidden] = o
        cache[t, :, 4 * hidden:] = tanh_c
    return h_all, c_all, cache


def lstm_backward(dh_out, c_all, cache, w_rec):
    """Backpropagate through lstm_forward.

    Returns dproj (L, B, 4H), which serves both projection paths (input and
    recurrent pre-activations coincide for the LSTM), plus dh0 and dc0.
    """
    steps, batch, hidden = dh_out.shape
    one = np.ones(1, dh_out.dtype)[0]
    dproj = np.empty((steps, batch, 4 * hidden), dh_out.dtype)
    carry_h = np.zeros((batch, hidden), dh_out.dtype)
    carry_c = np.zeros((batch, hidden), dh_out.dtype)
    for t in range(steps - 1, -1, -1):
        i = cache[t, :, :hidden]
        f = cache[t, :, hidden:2 * hidden]
        g = cache[t, :, 2 * hidden:3 * hidden]
        o = cache[t, :, 3 * hidden:4 * hidden]
        tanh_c = cache[t, :, 4 * hidden:]
        dh = dh_out[t] + carry_h
        do = dh * tanh_c
        dc = dh * o * (one - tanh_c * tanh_c) + carry_c
        dproj[t, :, :hidden] = dc * g * i * (one - i)
        dproj[t, :, hidden:2 * hidden] = dc * c_all[t] * f * (one - f)
        dproj[t, :, 2 * hidden:3 * hidden] = dc * i * (one - g * g)
        dproj[t, :, 3 * hidden:] = do * o * (one - o)
        carry_c = dc * f
        carry_h = np.dot(np.ascontiguousarray(dproj[t]), w_rec)
    return dproj, carry_h, carry_c
