"""Adam, reduce-on-plateau scheduling, and early stopping.

The scheduler and the stopper share one definition of improvement
(strictly lower monitored value, zero min-delta) so they can never
disagree about whether an epoch improved.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError

__all__ = ["Adam", "PlateauScheduler", "EarlyStopper", "improved"]


def improved(value: float, best: float, min_delta: float = 0.0) -> bool:
    return value < best - min_delta


class Adam:
    """Bias-corrected Adam over an ordered parameter list."""

    def __init__(self, params, lr: float = 1e-5, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(names) != len(set(names)):
            raise ValueError("parameter names must be unique for optimizer state")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: dict) -> None:
        """Apply one update from a parameter -> gradient mapping."""
        for p in self.params:
            g = grads[p]
            if g.shape != p.data.shape:
                raise ShapeError(
                    f"gradient for {p.name!r} has shape {g.shape}, parameter {p.data.shape}"
                )
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = grads[p].astype(p.data.dtype, copy=False)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        out = {"step": np.int64(self.t), "lr": np.float64(self.lr)}
        for i, p in enumerate(self.params):
            out[f"m.{p.name}"] = self.m[i].copy()
            out[f"v.{p.name}"] = self.v[i].copy()
        return out

    def load_state_dict(self, state: dict) -> None:
        # scalar entries may round-trip through storage as 1-element arrays
        self.t = int(np.ravel(state["step"])[0])
        self.lr = float(np.ravel(state["lr"])[0])
        for i, p in enumerate(self.params):
            m = state[f"m.{p.name}"]
            v = state[f"v.{p.name}"]
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise ShapeError(f"optimizer state for {p.name!r} has wrong shape")
            self.m[i] = np.ascontiguousarray(m)
            self.v[i] = np.ascontiguousarray(v)


class PlateauScheduler:
    """Multiply lr by ``factor`` once the monitored value stalls past ``patience``.

    The cut fires on the (patience+1)-th consecutive non-improving
    observation; the wait counter then restarts.
    """

    def __init__(self, lr: float, factor: float = 0.2, patience: int = 5,
                 min_delta: float = 0.0, min_lr: float = 0.0):
        if not 0.0 < factor < 1.0:
            raise ValueError(f"factor must be in (0, 1), got {factor}")
        self.lr = float(lr)
        self.factor = float(factor)
        self.patience = int(patience)
        self.min_delta = float(min_delta)
        self.min_lr = float(min_lr)
        self.best = np.inf
        self.wait = 0

    def update(self, value: float) -> float:
        if improved(value, self.best, self.min_delta):
            self.best = value
            self.wait = 0
        else:
            self.wait += 1
            if self.wait > self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.wait = 0
        return self.lr


class EarlyStopper:
    """Flag a halt once the monitored value stalls past ``patience``; sticky."""

    def __init__(self, patience: int = 5, min_delta: float = 0.0):
        self.patience = int(patience)
        self.min_delta = float(min_delta)
        self.best = np.inf
        self.wait = 0
        self.stopped = False

    def update(self, value: float) -> bool:
        if self.stopped:
            return True
        if improved(value, self.best, self.min_delta):
            self.best = value
            self.wait = 0
        else:
            self.wait += 1
            if self.wait > self.patience:
                self.stopped = True
        return self.stopped
