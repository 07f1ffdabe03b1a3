"""Pure-numpy GRU recurrence kernels (fallback for the compiled extension).

Both kernels work time-major. The input projections ``xr, xz, xn`` (T, B, H)
are precomputed outside the loop; only the hidden-to-hidden products run
per step.
"""
import numpy as np


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def gru_forward(xr, xz, xn, W_rh, W_zh, W_hh, h0):
    """Run the recurrence. Returns hs (T+1, B, H) with hs[0] = h0, and r, z, n (T, B, H)."""
    T, B, H = xr.shape
    hs = np.empty((T + 1, B, H))
    r = np.empty((T, B, H))
    z = np.empty((T, B, H))
    n = np.empty((T, B, H))
    hs[0] = h0
    for t in range(T):
        h = hs[t]
        r[t] = _sigmoid(xr[t] + h @ W_rh.T)
        z[t] = _sigmoid(xz[t] + h @ W_zh.T)
        n[t] = np.tanh(xn[t] + (r[t] * h) @ W_hh.T)
        hs[t + 1] = h + z[t] * (n[t] - h)
    return hs, r, z, n


def gru_backward(dh_out, hs, r, z, n, W_rh, W_zh, W_hh):
    """Backpropagate through time.

    ``dh_out[t]`` is the loss gradient arriving at hs[t + 1] from outside the
    recurrence. Returns (dxr, dxz, dxn, dW_rh, dW_zh, dW_hh, dh0).
    """
    T, B, H = dh_out.shape
    dxr = np.empty((T, B, H))
    dxz = np.empty((T, B, H))
    dxn = np.empty((T, B, H))
    dW_rh = np.zeros((H, H))
    dW_zh = np.zeros((H, H))
    dW_hh = np.zeros((H, H))
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dh + dh_out[t]
        h = hs[t]
        rt, zt, nt = r[t], z[t], n[t]
        gn = dh * zt * (1.0 - nt * nt)
        gz = dh * (nt - h) * zt * (1.0 - zt)
        drh = gn @ W_hh
        gr = drh * h * rt * (1.0 - rt)
        dW_hh += gn.T @ (rt * h)
        dW_zh += gz.T @ h
        dW_rh += gr.T @ h
        dh = dh * (1.0 - zt) + drh * rt + gz @ W_zh + gr @ W_rh
        dxr[t] = gr
        dxz[t] = gz
        dxn[t] = gn
    return dxr, dxz, dxn, dW_rh, dW_zh, dW_hh, dh
