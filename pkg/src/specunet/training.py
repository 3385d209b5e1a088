"""Optimization: Adam, plateau LR scheduling, early stopping, evaluation.

The Adam update keeps per-parameter first and second moments

    m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2

and by default applies the bias-corrected step
theta <- theta - lr * m_hat / (sqrt(v_hat) + eps). The ``uncorrected`` flag
drops the 1/(1-b^t) corrections and applies the raw moments verbatim.

The LR scheduler multiplies the rate by ``factor`` after ``patience``
consecutive epochs without strict validation improvement; early stopping
fires on the same condition with its own independent counter.
"""

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .synth import NoiseSchedule


@dataclass
class AdamState:
    """Moment estimates aligned with a fixed parameter list."""

    m: list
    v: list
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    uncorrected: bool = False

    @classmethod
    def for_params(cls, params, lr=1e-4, uncorrected=False):
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   lr=lr, uncorrected=uncorrected)


def adam_step(state, params, grads):
    """One Adam update; returns (new_state, new_params), inputs untouched."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ops.ShapeError(
            f"adam_step: {len(params)} params vs {len(state.m)} moments "
            f"vs {len(grads)} grads"
        )
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ops.ShapeError(
                f"adam_step: param {i} shape {p.shape}, grad {g.shape}, "
                f"moment {state.m[i].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient in parameter {i} (shape {g.shape})"
            )
    t = state.t + 1
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        if state.uncorrected:
            step = state.lr * m / (np.sqrt(v) + state.eps)
        else:
            m_hat = m / (1 - state.beta1 ** t)
            v_hat = v / (1 - state.beta2 ** t)
            step = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m.append(m)
        new_v.append(v)
        new_p.append((p - step).astype(p.dtype, copy=False))
    return replace(state, m=new_m, v=new_v, t=t), new_p


IMPROVEMENT_DELTA = 1e-8  # strict decrease below best, in absolute terms


@dataclass
class PlateauScheduler:
    """Multiply lr by ``factor`` after ``patience`` stalled epochs."""

    lr: float
    factor: float = 0.1
    patience: int = 10
    best: float = float("inf")
    stalled: int = 0

    def step(self, val_loss):
        """Update with this epoch's validation loss; returns the new lr."""
        if val_loss < self.best - IMPROVEMENT_DELTA:
            self.best = val_loss
            self.stalled = 0
        else:
            self.stalled += 1
            if self.stalled >= self.patience:
                self.lr *= self.factor
                self.stalled = 0
        return self.lr


def early_stop(val_losses, patience=10):
    """True when the last ``patience`` epochs never improved on the prior best."""
    if len(val_losses) <= patience:
        return False
    tail = val_losses[-patience:]
    best_before = min(val_losses[:-patience])
    return all(v >= best_before - IMPROVEMENT_DELTA for v in tail)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    steps_per_epoch: int = 100
    max_epochs: int = 100
    lr: float = 1e-4
    scheduler_factor: float = 0.1
    scheduler_patience: int = 10
    early_stop_patience: int = 10
    noise_schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    uncorrected_adam: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "steps_per_epoch", "max_epochs",
                     "scheduler_patience", "early_stop_patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.scheduler_factor < 1:
            raise ValueError("scheduler_factor must lie in (0, 1)")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class TrainHistory:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    sigma_hi: list = field(default_factory=list)
    termination: str = "completed"

    def __len__(self):
        return len(self.train_mse)

    def write_csv(self, path):
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "w", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_mse", "val_mse", "lr", "sigma_hi"])
            for i in range(len(self)):
                writer.writerow([i + 1, repr(self.train_mse[i]),
                                 repr(self.val_mse[i]), repr(self.lr[i]),
                                 repr(self.sigma_hi[i])])
        os.replace(tmp, path)


@dataclass
class EvalMetrics:
    mse: float
    pearson_r: float
    n_degenerate: int = 0  # spectra where a constant output made r undefined


def evaluate(model, inputs, targets, batch=256):
    """Mean MSE and mean per-spectrum Pearson r of model outputs vs targets."""
    if len(inputs) == 0:
        raise ValueError("evaluate needs a nonempty dataset")
    inputs = np.asarray(inputs, dtype=model.dtype)
    targets = np.asarray(targets, dtype=np.float64)
    outs = []
    for i in range(0, len(inputs), batch):
        outs.append(np.asarray(model.forward(inputs[i:i + batch]), dtype=np.float64))
    out = np.vstack(outs)
    mse = float(np.mean((out - targets) ** 2))
    oc = out - out.mean(axis=1, keepdims=True)
    tc = targets - targets.mean(axis=1, keepdims=True)
    denom = np.sqrt((oc * oc).sum(axis=1) * (tc * tc).sum(axis=1))
    degenerate = denom == 0
    r = np.zeros(len(out))
    r[~degenerate] = (oc * tc).sum(axis=1)[~degenerate] / denom[~degenerate]
    return EvalMetrics(mse, float(r.mean()), int(degenerate.sum()))


def train(model, generator, val_inputs, val_targets, config=TrainConfig(),
          callback=None):
    """Optimize a model against the generator's sample stream.

    Each epoch runs ``steps_per_epoch`` batches of ``batch_size`` freshly
    generated samples with the epoch's curriculum noise, then evaluates the
    fixed validation set, advances the LR scheduler and the early-stopping
    counter. Returns ``(best_model, history)`` where ``best_model`` is the
    checkpointed copy with the lowest validation loss. A non-finite training
    loss aborts and keeps the last good checkpoint.
    """
    names = [n for n, _ in model.named_params()]
    sched = PlateauScheduler(config.lr, config.scheduler_factor,
                             config.scheduler_patience)
    state = AdamState.for_params([p for _, p in model.named_params()],
                                 lr=config.lr,
                                 uncorrected=config.uncorrected_adam)
    history = TrainHistory()
    best_val = float("inf")
    best_model = model.clone()

    for epoch in range(1, config.max_epochs + 1):
        epoch_losses = []
        for _ in range(config.steps_per_epoch):
            xb, tb, _ = generator.batch(epoch, config.batch_size)
            xb = xb.astype(model.dtype)
            tb = tb.astype(model.dtype)
            y, cache = model.forward(xb, training=True, with_cache=True)
            loss = ops.mse_loss(y, tb)
            if not np.isfinite(loss):
                history.termination = "nan_abort"
                return best_model, history
            grads, _ = model.backward(cache, ops.mse_loss_backward(y, tb))
            params = [p for _, p in model.named_params()]
            state.lr = sched.lr
            state, new_params = adam_step(state, params,
                                          [grads[n] for n in names])
            for name, p in zip(names, new_params):
                model.set_tensor(name, p)
            epoch_losses.append(loss)

        val = evaluate(model, val_inputs, val_targets)
        history.train_mse.append(float(np.mean(epoch_losses)))
        history.val_mse.append(val.mse)
        history.sigma_hi.append(config.noise_schedule.upper_bound(epoch))
        lr_after = sched.step(val.mse)
        history.lr.append(lr_after)
        if val.mse < best_val - IMPROVEMENT_DELTA:
            best_val = val.mse
            best_model = model.clone()
        if callback is not None:
            callback(epoch, history)
        if early_stop(history.val_mse, config.early_stop_patience):
            history.termination = "early_stop"
            return best_model, history
    return best_model, history
