from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


def optimizer_step(state: OptimizerState, params: list[Tensor]) -> None:
    """In-place parameter update. Gradients are left for the caller to zero."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {p.name or i} has no gradient")
    if state.kind == "sgd":
        for p in params:
            p.data -= state.lr * p.grad
        state.step_count += 1
        return
    if state.m is None:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    """Thin stateful wrapper pairing a parameter list with an OptimizerState."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState("adam", lr, betas[0], betas[1], eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        optimizer_step(self.state, self.params)


@dataclass
class SGD:
    params: list[Tensor]
    lr: float = 1e-2
    state: OptimizerState = field(init=False)

    def __post_init__(self):
        self.state = OptimizerState("sgd", self.lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        optimizer_step(self.state, self.params)


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``. Returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None)))
    if total > max_norm:
        s = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= s
    return total
