"""Adam and the fixed / adaptive learning-rate schedules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class Schedule:
    kind: str = "fixed"  # "fixed" | "adaptive"
    base_lr: float = 1e-4
    flat_epochs: int = 7
    decay: float = 0.95
    max_epochs: int = 35

    def __post_init__(self):
        if self.kind not in ("fixed", "adaptive"):
            raise ValueError(f"unknown schedule {self.kind!r}")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")


def lr_at(schedule: Schedule, epoch: int) -> float:
    """Learning rate for a 1-based epoch index.

    The adaptive schedule holds ``base_lr`` through ``flat_epochs`` and then
    multiplies by ``decay`` once per further epoch.
    """
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    if schedule.kind == "fixed" or epoch <= schedule.flat_epochs:
        return schedule.base_lr
    return schedule.base_lr * schedule.decay ** (epoch - schedule.flat_epochs)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0


class Adam:
    def __init__(self, params: list[Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = AdamState([np.zeros_like(p.data) for p in self.params], [np.zeros_like(p.data) for p in self.params])

    def step(self, lr: float) -> None:
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                bad = int(np.count_nonzero(~np.isfinite(g)))
                raise FloatingPointError(f"non-finite gradient in {p.name or 'parameter'}: {bad} of {g.size} entries")
            grads.append(g)
        adam_step(self.params, grads, self.state, lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(params, grads, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """Bias-corrected Adam update applied in place."""
    state.t += 1
    t = state.t
    c1 = 1 - beta1**t
    c2 = 1 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = g.astype(m.dtype, copy=False)
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)
