"""SGD and Adam parameter updates over DiffTensor collections."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from purlab.tensor import DiffTensor

__all__ = ["OptimizerState", "sgd", "adam"]


class OptimizerState:
    """Update rule plus per-parameter moment buffers.

    kind "sgd": p <- p - lr * g.
    kind "adam": moment estimates with bias correction driven by
    step_count; defaults beta1=0.9, beta2=0.999, eps=1e-8.
    """

    def __init__(self, params: Sequence[DiffTensor], kind: str = "adam",
                 lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"optimizer kind must be sgd or adam, got {kind!r}")
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.kind = kind
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.params = list(params)
        self.step_count = 0
        if kind == "adam":
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        """Apply one update in place; every parameter must hold a grad."""
        for p in self.params:
            if p.grad is None:
                raise ValueError("optimizer_step: parameter has no gradient")
        self.step_count += 1
        if self.kind == "sgd":
            for p in self.params:
                p.data -= self.lr * p.grad
            return
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (p.grad * p.grad)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def sgd(params: Sequence[DiffTensor], lr: float) -> OptimizerState:
    return OptimizerState(params, kind="sgd", lr=lr)


def adam(params: Sequence[DiffTensor], lr: float, beta1: float = 0.9,
         beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState(params, kind="adam", lr=lr, beta1=beta1,
                          beta2=beta2, eps=eps)
