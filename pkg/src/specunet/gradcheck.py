"""Finite-difference verification of every backward pass.

Central differences with step ``h * max(1, |theta_i|)`` are compared against
the analytic gradients, elementwise, as ``|a - f| / (|a| + |f|)``. Pairs
where both magnitudes fall below 1e-7 count as agreeing: those are
structurally-zero gradients (e.g. a conv bias feeding batchnorm) where the
quotient would only amplify finite-difference noise.

Model-level checks jitter all parameters away from their symmetric init
first; zero biases otherwise put ReLU pre-activations exactly on the kink,
where a finite difference cannot match any subgradient convention.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .model import build_model

BOTH_ZERO = 1e-7


@dataclass
class GradCheckReport:
    target: str
    max_rel_err: float
    tolerance: float
    passed: bool
    location: str = ""

    def __str__(self):
        state = "pass" if self.passed else "FAIL"
        loc = f" at {self.location}" if self.location else ""
        return (f"{self.target}: max_rel_err={self.max_rel_err:.3e} "
                f"(tol {self.tolerance:.0e}) {state}{loc}")


def _elementwise_err(analytic, fd):
    mag = np.abs(analytic) + np.abs(fd)
    err = np.abs(analytic - fd) / np.maximum(mag, BOTH_ZERO)
    err[mag < BOTH_ZERO] = 0.0
    return err


def _fd_check(target, loss, arrays, analytic, tolerance, h=1e-5, corrupt=None):
    """Compare analytic grads against central differences for every array.

    ``arrays`` maps names to float64 arrays that ``loss()`` reads live, so
    in-place perturbation re-evaluates the op. ``corrupt`` optionally maps
    ``(name, grad) -> grad`` to verify the checker detects wrong gradients.
    """
    worst, where = 0.0, ""
    for name, arr in arrays.items():
        a = analytic[name]
        if corrupt is not None:
            a = corrupt(name, a)
        if not np.all(np.isfinite(a)):
            return GradCheckReport(target, float("inf"), tolerance, False,
                                   f"non-finite analytic gradient in {name}")
        flat = arr.ravel()
        fd = np.zeros(flat.size)
        for i in range(flat.size):
            step = h * max(1.0, abs(flat[i]))
            orig = flat[i]
            flat[i] = orig + step
            lp = loss()
            flat[i] = orig - step
            lm = loss()
            flat[i] = orig
            fd[i] = (lp - lm) / (2 * step)
        err = _elementwise_err(np.asarray(a, dtype=float).ravel(), fd)
        j = int(np.argmax(err))
        if err[j] > worst:
            worst, where = float(err[j]), f"{name}[{j}]"
    return GradCheckReport(target, worst, tolerance, worst < tolerance, where)


def _projection(rng, shape):
    return rng.standard_normal(shape)


def check_conv1d(seed, tolerance=1e-5, corrupt=None):
    rng = np.random.default_rng(seed)
    stride = int(rng.choice([1, 2]))
    B, ci, co = (int(v) for v in rng.integers(1, 4, 3))
    k = int(rng.choice([1, 3, 5]))
    L = 2 * int(rng.integers(2, 9))
    x = rng.standard_normal((B, ci, L))
    w = rng.standard_normal((co, ci, k))
    b = rng.standard_normal(co)
    r = _projection(rng, (B, co, -(-L // stride)))
    arrays = {"input": x, "w": w, "b": b}

    def loss():
        return float(np.vdot(ops.conv1d(x, w, b, stride), r))

    gx, gw, gb = ops.conv1d_backward(x, w, r, stride)
    return _fd_check(f"conv1d(s={stride})", loss, arrays,
                     {"input": gx, "w": gw, "b": gb}, tolerance, corrupt=corrupt)


def check_conv_transpose1d(seed, tolerance=1e-5, corrupt=None):
    rng = np.random.default_rng(seed)
    stride = int(rng.choice([1, 2]))
    B, ci, co = (int(v) for v in rng.integers(1, 4, 3))
    k = int(rng.choice([1, 3, 5]))
    L = int(rng.integers(3, 17))
    x = rng.standard_normal((B, ci, L))
    w = rng.standard_normal((ci, co, k))
    b = rng.standard_normal(co)
    r = _projection(rng, (B, co, stride * L))
    arrays = {"input": x, "w": w, "b": b}

    def loss():
        return float(np.vdot(ops.conv_transpose1d(x, w, b, stride), r))

    gx, gw, gb = ops.conv_transpose1d_backward(x, w, r, stride)
    return _fd_check(f"conv_transpose1d(s={stride})", loss, arrays,
                     {"input": gx, "w": gw, "b": gb}, tolerance, corrupt=corrupt)


def check_batchnorm1d(seed, tolerance=1e-5, corrupt=None):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 8))
    gamma = rng.uniform(0.5, 2.0, 3)
    beta = rng.standard_normal(3)
    rm, rv = np.zeros(3), np.ones(3)
    r = _projection(rng, x.shape)
    arrays = {"input": x, "gamma": gamma, "beta": beta}

    def loss():
        y, _, _, _ = ops.batchnorm1d(x, gamma, beta, rm, rv, training=True)
        return float(np.vdot(y, r))

    _, cache, _, _ = ops.batchnorm1d(x, gamma, beta, rm, rv, training=True)
    gx, dgamma, dbeta = ops.batchnorm1d_backward(cache, r)
    return _fd_check("batchnorm1d", loss, arrays,
                     {"input": gx, "gamma": dgamma, "beta": dbeta},
                     tolerance, corrupt=corrupt)


def check_relu(seed, tolerance=1e-7, corrupt=None):
    rng = np.random.default_rng(seed)
    # bounded away from the kink so finite differences are valid
    x = rng.uniform(0.1, 1.0, (2, 3, 8)) * rng.choice([-1.0, 1.0], (2, 3, 8))
    r = _projection(rng, x.shape)
    arrays = {"input": x}

    def loss():
        return float(np.vdot(ops.relu(x), r))

    return _fd_check("relu", loss, arrays,
                     {"input": ops.relu_backward(x, r)}, tolerance, corrupt=corrupt)


def check_maxpool1d(seed, tolerance=1e-7, corrupt=None):
    rng = np.random.default_rng(seed)
    L = 2 * int(rng.integers(2, 9))
    x = rng.standard_normal((2, 2, L))
    # separate window values so the FD step cannot flip an argmax
    gap = np.abs(x[..., ::2] - x[..., 1::2])
    x[..., 1::2] += np.where(gap < 1e-2, 0.05, 0.0)
    r = _projection(rng, (2, 2, L // 2))
    arrays = {"input": x}

    def loss():
        y, _ = ops.maxpool1d(x)
        return float(np.vdot(y, r))

    _, idx = ops.maxpool1d(x)
    gx = ops.maxpool1d_backward(idx, r, L)
    return _fd_check("maxpool1d", loss, arrays, {"input": gx},
                     tolerance, corrupt=corrupt)


def check_mse_loss(seed, tolerance=1e-6, corrupt=None):
    rng = np.random.default_rng(seed)
    pred = rng.standard_normal((2, 1, 12))
    target = rng.standard_normal((2, 1, 12))
    arrays = {"pred": pred}

    def loss():
        return ops.mse_loss(pred, target)

    return _fd_check("mse_loss", loss, arrays,
                     {"pred": ops.mse_loss_backward(pred, target)},
                     tolerance, corrupt=corrupt)


LAYER_CHECKS = {
    "conv1d": check_conv1d,
    "conv_transpose1d": check_conv_transpose1d,
    "batchnorm1d": check_batchnorm1d,
    "relu": check_relu,
    "maxpool1d": check_maxpool1d,
    "mse_loss": check_mse_loss,
}


def check_model(config, seed, tolerance=1e-4, corrupt=None):
    """Full-network finite-difference check on a (small) config, float64."""
    rng = np.random.default_rng(seed)
    model = build_model(config, seed, dtype=np.float64)
    arrays = {}
    for name, arr in model.named_params():
        arr += rng.uniform(-0.1, 0.1, arr.shape)  # general position
        arrays[name] = arr
    x = rng.standard_normal((3, config.bands))
    target = rng.standard_normal((3, config.bands))
    arrays["input"] = x

    def loss():
        y = model.forward(x, training=True, update_stats=False)
        return ops.mse_loss(y, target)

    y, cache = model.forward(x, training=True, update_stats=False, with_cache=True)
    grads, gx = model.backward(cache, ops.mse_loss_backward(y, target))
    grads["input"] = gx
    return _fd_check(f"model[{config.name}]", loss, arrays, grads,
                     tolerance, corrupt=corrupt)
