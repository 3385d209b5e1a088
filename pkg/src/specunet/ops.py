"""Forward and hand-derived backward passes for every layer operation.

Conventions
-----------
Activations are numpy arrays of shape ``(batch, channels, length)``; a single
spectrum is carried as ``(1, 1, bands)``. Conv weights are ``(out_ch, in_ch,
k)`` with per-output-channel bias; transposed-conv weights are ``(in_ch,
out_ch, k)`` so that ``conv_transpose1d(y, w)`` is the exact linear adjoint
of ``conv1d(x, w)`` with the *same* weight array. Kernels are odd, padding is
``(k - 1) // 2``, strides are 1 or 2. Both float32 and float64 are supported;
dtype is preserved.

Backward passes are exact adjoints of the forward maps:

* conv input gradient  = transposed-conv forward with the same weights,
* transposed-conv input gradient = conv forward with the same weights,

so the adjoint identity ``<conv(x), y> == <x, conv_transpose(y)>`` holds by
construction and is verified numerically in the test suite.
"""

import numpy as np

from . import backends


class ShapeError(ValueError):
    """Operand shapes are inconsistent; the message names the offending dims."""


class ConfigError(ValueError):
    """A structural parameter (kernel size, stride, window) is invalid."""


def _check_conv_args(x, w, stride, transposed=False):
    if x.ndim != 3:
        raise ShapeError(f"input must be (batch, channels, length), got {x.shape}")
    if w.ndim != 3:
        raise ShapeError(f"weights must be 3-d, got {w.shape}")
    if w.shape[2] % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {w.shape[2]}")
    if stride not in (1, 2):
        raise ConfigError(f"stride must be 1 or 2, got {stride}")
    want = w.shape[1] if not transposed else w.shape[0]
    if x.shape[1] != want:
        raise ShapeError(
            f"input channels {x.shape[1]} != weight in_channels {want}"
        )


def conv1d(x, w, b=None, stride=1):
    """Strided cross-correlation with zero padding; length L -> ceil(L/stride)."""
    _check_conv_args(x, w, stride)
    return backends.active().conv1d_fwd(x, w, b, stride)


def conv1d_backward(x, w, grad_y, stride=1):
    """Exact adjoints of conv1d: gradients for input, weights and bias."""
    _check_conv_args(x, w, stride)
    kern = backends.active()
    grad_x = kern.convtr1d_fwd(grad_y, w, None, stride)
    if grad_x.shape[2] != x.shape[2]:
        raise ShapeError(
            f"conv backward needs stride*out_len == in_len "
            f"({grad_x.shape[2]} != {x.shape[2]}); pad input to even length"
        )
    grad_w, grad_b = kern.conv1d_grad_w(x, grad_y, stride, w.shape[2])
    return grad_x, grad_w, grad_b


def conv_transpose1d(x, w, b=None, stride=2):
    """Transposed convolution (adjoint of conv1d); length L -> stride*L."""
    _check_conv_args(x, w, stride, transposed=True)
    return backends.active().convtr1d_fwd(x, w, b, stride)


def conv_transpose1d_backward(x, w, grad_y, stride=2):
    """Exact adjoints of conv_transpose1d for input, weights and bias."""
    _check_conv_args(x, w, stride, transposed=True)
    kern = backends.active()
    grad_x = kern.conv1d_fwd(grad_y, w, None, stride)
    grad_w, grad_b = kern.convtr1d_grad_w(x, grad_y, stride, w.shape[2])
    return grad_x, grad_w, grad_b


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_y):
    # subgradient at exactly 0 fixed to 0
    return np.where(x > 0, grad_y, 0)


def maxpool1d(x):
    """Window-2 stride-2 max pooling; returns output and absolute argmax indices.

    Ties break to the lower index. Input length must be even.
    """
    B, C, L = x.shape
    if L % 2:
        raise ShapeError(f"maxpool needs an even length, got {L}")
    xr = x.reshape(B, C, L // 2, 2)
    local = xr.argmax(axis=3)  # first occurrence wins -> lower index
    y = np.take_along_axis(xr, local[..., None], axis=3)[..., 0]
    idx = 2 * np.arange(L // 2)[None, None, :] + local
    return y, idx


def maxpool1d_backward(idx, grad_y, length):
    """Route gradient to the recorded argmax positions only."""
    B, C, P = grad_y.shape
    gx = np.zeros((B, C, P, 2), dtype=grad_y.dtype)
    np.put_along_axis(gx, (idx % 2)[..., None], grad_y[..., None], axis=3)
    return gx.reshape(B, C, length)


def batchnorm1d(x, gamma, beta, running_mean, running_var,
                training, momentum=0.9, eps=1e-5):
    """Per-channel batch normalization over the (batch, length) axes.

    Returns ``(y, cache, new_running_mean, new_running_var)``; running stats
    are returned, never mutated. In training mode the batch statistics are
    used and folded into the running stats by exponential moving average; in
    inference mode the running stats are used and returned unchanged.
    """
    if training:
        if x.shape[0] < 2:
            raise ShapeError(
                f"batchnorm in training mode needs batch >= 2, got {x.shape[0]}"
            )
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        new_rm = momentum * running_mean + (1 - momentum) * mean
        new_rv = momentum * running_var + (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
        new_rm, new_rv = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    y = gamma[None, :, None] * xhat + beta[None, :, None]
    cache = (xhat, inv_std.astype(x.dtype), gamma)
    return y.astype(x.dtype, copy=False), cache, new_rm, new_rv


def batchnorm1d_backward(cache, grad_y):
    """Chain rule through the full batch statistics (training mode)."""
    xhat, inv_std, gamma = cache
    m = xhat.shape[0] * xhat.shape[2]
    dbeta = grad_y.sum(axis=(0, 2))
    dgamma = (grad_y * xhat).sum(axis=(0, 2))
    # dx = gamma*inv_std/m * (m*g - sum(g) - xhat*sum(g*xhat)) per channel
    gx = (gamma * inv_std / m)[None, :, None] * (
        m * grad_y
        - dbeta[None, :, None]
        - xhat * dgamma[None, :, None]
    )
    return gx.astype(grad_y.dtype, copy=False), dgamma, dbeta


def concat_channels(a, b):
    """Stack two activations along the channel axis (a first)."""
    if a.shape[2] != b.shape[2]:
        raise ShapeError(
            f"concat length mismatch: {a.shape[2]} vs {b.shape[2]}"
        )
    return np.concatenate([a, b], axis=1)


def concat_channels_backward(grad_y, channels_a):
    """Split the upstream gradient back into the two inputs' shapes."""
    return grad_y[:, :channels_a], grad_y[:, channels_a:]


def mse_loss(pred, target):
    """Mean squared error over all elements."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d))


def mse_loss_backward(pred, target):
    """Gradient of mse_loss with respect to pred: (2/n) * (pred - target)."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    return (2.0 / pred.size) * (pred - target)
