"""Parameter-holding layer objects wrapping the functional ops.

Each layer's ``forward`` returns ``(output, cache)`` and ``backward`` takes
``(upstream_grad, cache)`` and returns ``(input_grad, param_grads)`` where
``param_grads`` maps the layer's parameter attribute names to gradient
arrays. Layers are dumb containers; the model owns topology and naming.
"""

import numpy as np

from . import ops


class Conv1D:
    param_names = ("w", "b")
    stat_names = ()

    def __init__(self, w, b, stride=1, name=""):
        self.w = w
        self.b = b
        self.stride = stride
        self.name = name

    def forward(self, x, training=False):
        return ops.conv1d(x, self.w, self.b, self.stride), x

    def backward(self, grad_y, cache):
        gx, gw, gb = ops.conv1d_backward(cache, self.w, grad_y, self.stride)
        return gx, {"w": gw, "b": gb}


class ConvTranspose1D:
    param_names = ("w", "b")
    stat_names = ()

    def __init__(self, w, b, stride=2, name=""):
        self.w = w
        self.b = b
        self.stride = stride
        self.name = name

    def forward(self, x, training=False):
        return ops.conv_transpose1d(x, self.w, self.b, self.stride), x

    def backward(self, grad_y, cache):
        gx, gw, gb = ops.conv_transpose1d_backward(
            cache, self.w, grad_y, self.stride
        )
        return gx, {"w": gw, "b": gb}


class BatchNorm1D:
    param_names = ("gamma", "beta")
    stat_names = ("running_mean", "running_var")

    def __init__(self, gamma, beta, running_mean, running_var,
                 momentum=0.9, eps=1e-5, name=""):
        self.gamma = gamma
        self.beta = beta
        self.running_mean = running_mean
        self.running_var = running_var
        self.momentum = momentum
        self.eps = eps
        self.name = name

    def forward(self, x, training=False, update_stats=True):
        y, cache, rm, rv = ops.batchnorm1d(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training, self.momentum, self.eps,
        )
        if training and update_stats:
            self.running_mean, self.running_var = rm, rv
        return y, cache

    def backward(self, grad_y, cache):
        gx, dgamma, dbeta = ops.batchnorm1d_backward(cache, grad_y)
        return gx, {"gamma": dgamma, "beta": dbeta}


class ReLU:
    param_names = ()
    stat_names = ()

    def __init__(self, name=""):
        self.name = name

    def forward(self, x, training=False):
        return ops.relu(x), x

    def backward(self, grad_y, cache):
        return ops.relu_backward(cache, grad_y), {}


class MaxPool1D:
    param_names = ()
    stat_names = ()

    def __init__(self, name=""):
        self.name = name

    def forward(self, x, training=False):
        y, idx = ops.maxpool1d(x)
        return y, (idx, x.shape[2])

    def backward(self, grad_y, cache):
        idx, length = cache
        return ops.maxpool1d_backward(idx, grad_y, length), {}


def he_uniform(rng, shape, fan_in, dtype):
    """Fan-in-scaled uniform init, drawn in float64 then cast."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
