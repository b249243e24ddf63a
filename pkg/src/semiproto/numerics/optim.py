"""Adam with bias correction and the halving step-decay schedule."""
from dataclasses import dataclass, field

import numpy as np

from semiproto.errors import ConfigurationError, NumericError


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr_base: float = 1e-3
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def init_for(self, params):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.step = 0
        return self


def adam_step(state, params, grads, lr):
    """Apply one Adam update in place and return ``(params, state)``.

    Nothing is modified if any gradient is non-finite.
    """
    if lr < 0:
        raise ConfigurationError(f"learning rate must be non-negative, got {lr}")
    if not state.m:
        state.init_for(params)
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigurationError("adam_step: params, grads and moments differ in length")
    for p, g, m in zip(params, grads, state.m):
        if np.shape(g) != p.shape or m.shape != p.shape:
            raise ConfigurationError(f"adam_step: shape mismatch for parameter {p.name or p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {p.name or p.shape}")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        m = b1 * state.m[i] + (1.0 - b1) * g
        v = b2 * state.v[i] + (1.0 - b2) * (g * g)
        state.m[i], state.v[i] = m, v
        if lr == 0.0:
            continue  # keep parameters bit-identical
        p.data = p.data - lr * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
    return params, state


@dataclass(frozen=True)
class StepSchedule:
    """``base * 2**-k`` with k decay points at start_at, start_at + every, ..."""

    base: float = 1e-3
    decay_every: int = 2000
    start_at: int = 2000


def lr_at(step, schedule):
    if step < 0:
        raise ConfigurationError(f"step must be non-negative, got {step}")
    if schedule.decay_every <= 0 or step < schedule.start_at:
        return schedule.base
    k = 1 + (step - schedule.start_at) // schedule.decay_every
    return schedule.base * 2.0 ** (-k)
