"""Adam with coupled L2 weight decay, plateau LR reduction and early stopping."""

from __future__ import annotations

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    """Raised when a gradient contains NaN or inf."""


class Adam:
    """Bias-corrected Adam over a ``{name: Tensor}`` mapping.

    Weight decay is coupled: ``g <- g + weight_decay * param`` before the
    moment updates.
    """

    def __init__(self, params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=5e-5):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
            grads[name] = g

        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self):
        return {
            "lr": self.lr,
            "step_count": self.step_count,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }


def improved(value, best, threshold=1e-4):
    """Relative-decrease test shared by the scheduler and early stopping."""
    if best is None or not np.isfinite(best):
        return True
    return value < best - threshold * abs(best)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` once the monitored loss has
    failed to improve for more than ``patience`` consecutive epochs.

    After a reduction the bad-epoch counter restarts, so a long plateau
    reduces the rate once every ``patience + 1`` epochs.
    """

    def __init__(self, optimizer, factor=0.1, patience=10, threshold=1e-4, min_lr=0.0):
        if not 0.0 < factor < 1.0:
            raise ValueError("factor must lie in (0, 1)")
        self.optimizer = optimizer
        self.factor = factor
        self.patience = int(patience)
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = None
        self.num_bad_epochs = 0
        self.reductions = 0

    def step(self, value):
        if improved(value, self.best, self.threshold):
            self.best = value
            self.num_bad_epochs = 0
        else:
            self.num_bad_epochs += 1
        if self.num_bad_epochs > self.patience:
            new_lr = max(self.optimizer.lr * self.factor, self.min_lr)
            if new_lr < self.optimizer.lr:
                self.optimizer.lr = new_lr
                self.reductions += 1
            self.num_bad_epochs = 0
        return self.optimizer.lr


def plateau_schedule(history, lr, factor=0.1, patience=10, threshold=1e-4):
    """Replay :class:`PlateauScheduler` over a loss history.

    Returns the learning rate in force after each epoch.
    """

    class _Holder:
        pass

    holder = _Holder()
    holder.lr = lr
    sched = PlateauScheduler(holder, factor=factor, patience=patience, threshold=threshold)
    return [sched.step(v) for v in history]


class EarlyStopping:
    def __init__(self, patience=10, threshold=1e-4):
        self.patience = patience
        self.threshold = threshold
        self.best = None
        self.best_epoch = -1
        self.bad_epochs = 0

    def step(self, value, epoch):
        """Record one epoch; return True when training should stop."""
        if improved(value, self.best, self.threshold):
            self.best = value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience
