"""Pure-numpy reference backend for the sequential scan recurrence.

Semantics match the compiled backend step for step:

    h[k] = abar[k] * h[k-1] + bbar[k] * x[k]        (per channel, per state)
    y[k] = <c[k], h[k]> + d_skip * x[k]             (per channel)

The k-loop is inherently sequential; everything inside a step is
vectorized over (channels, states).
"""

from __future__ import annotations

import numpy as np


def scan_forward(abar, bbar, c, d_skip, x, h0):
    """Run the recurrence; returns (y, h) with every hidden state saved.

    abar, bbar: (len, ch, n); c: (len, n); d_skip: (ch,); x: (len, ch);
    h0: (ch, n). y: (len, ch); h: (len, ch, n).
    """
    length, ch, n = abar.shape
    y = np.empty((length, ch), dtype=x.dtype)
    h = np.empty((length, ch, n), dtype=x.dtype)
    state = h0
    for k in range(length):
        state = abar[k] * state + bbar[k] * x[k][:, None]
        h[k] = state
        y[k] = h[k] @ c[k] + d_skip * x[k]
    return y, h


def scan_backward(abar, bbar, c, d_skip, x, h0, h, grad_y):
    """Reverse-time sweep producing gradients for every scan input.

    Returns (g_abar, g_bbar, g_c, g_d, g_x, g_h0).
    """
    length, ch, n = abar.shape
    g_abar = np.empty_like(abar)
    g_bbar = np.empty_like(bbar)
    g_c = np.zeros_like(c)
    g_d = np.zeros_like(d_skip)
    g_x = np.empty_like(x)
    gh = np.zeros((ch, n), dtype=x.dtype)
    for k in range(length - 1, -1, -1):
        gy = grad_y[k]
        # total dL/dh_k: direct readout term plus what flowed back from k+1
        gh = gy[:, None] * c[k][None, :] + gh
        h_prev = h0 if k == 0 else h[k - 1]
        g_abar[k] = gh * h_prev
        g_bbar[k] = gh * x[k][:, None]
        g_x[k] = (gh * bbar[k]).sum(axis=1) + gy * d_skip
        g_c[k] = gy @ h[k]
        g_d += gy * x[k]
        gh = gh * abar[k]
    return g_abar, g_bbar, g_c, g_d, g_x, gh
