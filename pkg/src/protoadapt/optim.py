"""AdaDelta: per-element adaptive steps from running gradient statistics.

There is deliberately no learning-rate anywhere; step sizes come from
the ratio of the running update and gradient second moments.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


class AdaDeltaState:
    """Per-parameter accumulators E[g^2] and E[dx^2], plus rho/epsilon."""

    def __init__(self, params: Sequence[Tensor], rho: float = 0.9, epsilon: float = 1e-6):
        if not 0.0 <= rho < 1.0:
            raise ValueError(f"rho must be in [0,1), got {rho}")
        if epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        self.rho = rho
        self.epsilon = epsilon
        self.acc_grad = [np.zeros_like(p.data) for p in params]
        self.acc_delta = [np.zeros_like(p.data) for p in params]

    def snapshot(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(g.copy(), d.copy()) for g, d in zip(self.acc_grad, self.acc_delta)]

    @classmethod
    def restore(cls, params: Sequence[Tensor], pairs, rho: float = 0.9,
                epsilon: float = 1e-6) -> "AdaDeltaState":
        state = cls(params, rho, epsilon)
        if len(pairs) != len(state.acc_grad):
            raise ValueError("accumulator count does not match parameter count")
        for i, (acc_g, acc_d) in enumerate(pairs):
            if acc_g.shape != state.acc_grad[i].shape:
                raise ValueError(f"accumulator {i} shape {acc_g.shape} does not match "
                                 f"parameter shape {state.acc_grad[i].shape}")
            state.acc_grad[i] = acc_g.astype(np.float64).copy()
            state.acc_delta[i] = acc_d.astype(np.float64).copy()
        return state


def adadelta_step(params: Sequence[Tensor], grads: Sequence[np.ndarray] | None,
                  state: AdaDeltaState) -> AdaDeltaState:
    """One update: acc_g <- rho*acc_g + (1-rho)*g^2, then
    dx = -sqrt((acc_dx+eps)/(acc_g+eps)) * g, apply, then accumulate dx^2.

    grads defaults to each param's .grad; a missing gradient is an error.
    Updates params in place and returns the (mutated) state.
    """
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params) or len(params) != len(state.acc_grad):
        raise ValueError("params, grads and state must be parallel lists")
    rho, eps = state.rho, state.epsilon
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            raise ValueError(f"parameter {i} has no gradient")
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        acc_g, acc_d = state.acc_grad[i], state.acc_delta[i]
        acc_g *= rho
        acc_g += (1.0 - rho) * g * g
        delta = -np.sqrt((acc_d + eps) / (acc_g + eps)) * g
        p.data += delta
        acc_d *= rho
        acc_d += (1.0 - rho) * delta * delta
    return state
