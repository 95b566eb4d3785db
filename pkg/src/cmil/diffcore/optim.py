from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Param


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
              names=None):
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Raises ``FloatingPointError`` naming the first parameter whose gradient is
    not finite; nothing is modified in that case.
    """
    if len(params) != len(state.m):
        raise ValueError("optimizer state does not match the parameter list")
    for i, g in enumerate(grads):
        if g.shape != state.m[i].shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, state has {state.m[i].shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names is not None else f"#{i}"
            raise FloatingPointError(f"non-finite gradient in parameter group {label}")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


@dataclass
class Adam:
    """Adam over a fixed list of :class:`Param`, with optional global-norm clipping."""

    params: list[Param]
    lr: float
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float | None = 100.0
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.state = AdamState.zeros_like([p.value for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad.fill(0.0)

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params)))

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns the pre-clip norm."""
        grads = [p.grad for p in self.params]
        norm = self.grad_norm()
        if self.clip_norm is not None and np.isfinite(norm) and norm > self.clip_norm:
            grads = [g * (self.clip_norm / norm) for g in grads]
        adam_step([p.value for p in self.params], grads, self.state, self.lr, self.betas,
                  self.eps, names=[p.name for p in self.params])
        return norm
