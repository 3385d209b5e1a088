"""Pure-numpy convolution kernels (fallback backend).

All arrays are batched channel-major: inputs ``(batch, channels, length)``,
conv weights ``(out_ch, in_ch, k)``, transposed-conv weights
``(in_ch, out_ch, k)``. Zero padding is always ``(k - 1) // 2`` so stride 1
preserves length and stride ``s`` maps ``L`` to ``ceil(L / s)``.

The transposed convolution is the exact linear adjoint of the convolution
with the same weights, which is why only four kernels are needed: each op's
input gradient is the other op's forward pass.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

name = "numpy"


def _windows(x, k, stride):
    # padded sliding windows: (B, C, n_positions, k) with positions stride apart
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, k, axis=2)
    return win[:, :, ::stride, :]


def conv1d_fwd(x, w, b, stride):
    """Cross-correlation: y[b,o,i] = sum_{c,j} w[o,c,j] * x[b,c,stride*i+j-pad]."""
    win = _windows(x, w.shape[2], stride)
    y = np.tensordot(win, w, axes=([1, 3], [1, 2]))  # (B, P, Co)
    y = np.ascontiguousarray(y.transpose(0, 2, 1))
    if b is not None:
        y += b[None, :, None]
    return y


def conv1d_grad_w(x, g, stride, k):
    """Weight and bias gradients of conv1d_fwd given upstream gradient g."""
    win = _windows(x, k, stride)
    gw = np.tensordot(g, win, axes=([0, 2], [0, 2]))  # (Co, Ci, k)
    gb = g.sum(axis=(0, 2))
    return np.ascontiguousarray(gw), gb


def convtr1d_fwd(x, w, b, stride):
    """Transposed convolution, the adjoint of conv1d_fwd: length L -> stride*L.

    Implemented as a stride-1 cross-correlation of the zero-stuffed input with
    the flipped, channel-transposed kernel; for odd k both paddings coincide,
    so the map is the exact adjoint of conv1d_fwd on inputs of length stride*L.
    """
    B, ci, L = x.shape
    if stride == 1:
        xs = x
    else:
        xs = np.zeros((B, ci, stride * L), dtype=x.dtype)
        xs[:, :, ::stride] = x
    wc = np.ascontiguousarray(w.transpose(1, 0, 2)[:, :, ::-1])
    return conv1d_fwd(xs, wc, b, 1)


def convtr1d_grad_w(x, g, stride, k):
    """Weight and bias gradients of convtr1d_fwd given upstream gradient g."""
    pad = (k - 1) // 2
    gp = np.pad(g, ((0, 0), (0, 0), (pad, pad)))
    gwin = sliding_window_view(gp, k, axis=2)[:, :, ::stride, :]
    # gwin[b,o,i,j] = g_pad[b,o,stride*i+j]; i runs over input positions
    gwin = gwin[:, :, : x.shape[2], :]
    gw = np.tensordot(x, gwin, axes=([0, 2], [0, 2]))  # (Ci, Co, k)
    gb = g.sum(axis=(0, 2))
    return np.ascontiguousarray(gw), gb
