"""Optimizers and the per-cycle cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autograd import Tensor, parameters_of


class Optimizer:
    kind = "base"

    def __init__(self, params: Sequence[Tensor], lr: float, weight_decay: float = 0.0):
        self.params = parameters_of(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.steps = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ValueError(f"gradient shape {p.grad.shape} != parameter shape {p.data.shape}")
            self._update(i, p, p.grad + self.weight_decay * p.data if self.weight_decay else p.grad, lr)
        self.steps += 1

    def _update(self, i: int, p: Tensor, g: np.ndarray, lr: float) -> None:
        raise NotImplementedError

    def state_dict(self) -> dict:
        raise NotImplementedError

    def load_state_dict(self, state: dict) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """SGD with heavy-ball momentum: ``v <- m v + g + wd p``; ``p <- p - lr v``."""

    kind = "sgd-momentum"

    def __init__(self, params, lr: float = 0.025, momentum: float = 0.9, weight_decay: float = 3e-4):
        super().__init__(params, lr, weight_decay)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, p, g, lr):
        v = self.velocity[i]
        v *= self.momentum
        v += g
        p.data -= lr * v

    def state_dict(self) -> dict:
        return {"kind": self.kind, "steps": self.steps, "velocity": [v.copy() for v in self.velocity]}

    def load_state_dict(self, state: dict) -> None:
        if len(state["velocity"]) != len(self.params):
            raise ValueError("optimizer state does not match parameter list")
        self.velocity = [np.array(v, dtype=np.float64) for v in state["velocity"]]
        self.steps = int(state["steps"])


class Adam(Optimizer):
    """Bias-corrected Adam with L2 weight decay folded into the gradient."""

    kind = "adam"

    def __init__(self, params, lr: float = 6e-4, betas: tuple[float, float] = (0.5, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-3):
        super().__init__(params, lr, weight_decay)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, p, g, lr):
        t = self.steps + 1
        self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
        self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
        m_hat = self.m[i] / (1 - self.beta1 ** t)
        v_hat = self.v[i] / (1 - self.beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"kind": self.kind, "steps": self.steps,
                "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state_dict(self, state: dict) -> None:
        if len(state["m"]) != len(self.params):
            raise ValueError("optimizer state does not match parameter list")
        self.m = [np.array(a, dtype=np.float64) for a in state["m"]]
        self.v = [np.array(a, dtype=np.float64) for a in state["v"]]
        self.steps = int(state["steps"])


@dataclass(frozen=True)
class CosineRestartSchedule:
    """Cosine decay from ``lr_max`` to ``lr_min`` over one cycle; restarts each cycle."""

    lr_max: float = 0.025
    lr_min: float = 0.01
    epochs_in_cycle: int = 1

    def __post_init__(self):
        if self.lr_max <= 0 or not 0 <= self.lr_min <= self.lr_max:
            raise ValueError("need 0 <= lr_min <= lr_max and lr_max > 0")
        if self.epochs_in_cycle < 1:
            raise ValueError("epochs_in_cycle must be positive")

    def lr_at(self, fraction: float) -> float:
        if not 0.0 <= fraction <= 1.0:
            raise ValueError(f"cycle fraction {fraction} outside [0, 1]")
        return self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + math.cos(math.pi * fraction))

    def lr_at_epoch(self, epoch: float) -> float:
        return self.lr_at(min(max(epoch / self.epochs_in_cycle, 0.0), 1.0))


def lr_at(schedule: CosineRestartSchedule, fraction: float) -> float:
    return schedule.lr_at(fraction)
