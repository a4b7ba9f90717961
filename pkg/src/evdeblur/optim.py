"""Adam with bias correction and a continuous exponential learning-rate decay.

Two independent instances are used during training (one for the scene, one
for the trajectory); they share the schedule shape but keep separate moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeMismatch(ValueError):
    """params and grads disagree in length."""


def decayed_lr(lr0: float, step: int, total_steps: int, decay_target_frac: float = 0.1) -> float:
    """lr(step) = lr0 * decay_target_frac**(step / total_steps).

    lr(0) = lr0 exactly; lr(total_steps) = decay_target_frac * lr0.
    """
    return lr0 * decay_target_frac ** (step / total_steps)


@dataclass
class AdamState:
    lr0: float = 5e-4
    total_steps: int = 1
    decay_target_frac: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None)  # first moment, lazily sized
    v: np.ndarray = field(default=None)  # second moment, lazily sized

    def ensure(self, n: int, dtype) -> None:
        if self.m is None:
            self.m = np.zeros(n, dtype=dtype)
            self.v = np.zeros(n, dtype=dtype)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState):
    """One Adam update. Returns the new params; moments advance in ``state``."""
    params = np.asarray(params)
    grads = np.asarray(grads)
    if params.shape != grads.shape:
        raise ShapeMismatch(f"params {params.shape} vs grads {grads.shape}")
    state.ensure(params.size, params.dtype)
    if state.m.shape != params.shape:
        raise ShapeMismatch(f"moment state {state.m.shape} vs params {params.shape}")

    lr = decayed_lr(state.lr0, state.step, state.total_steps, state.decay_target_frac)
    state.step += 1
    t = state.step
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**t)
    v_hat = state.v / (1.0 - state.beta2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps), state
