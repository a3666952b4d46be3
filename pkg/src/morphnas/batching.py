"""Adaptive batch sizing under a linear memory model."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

TRAIN_STEP = "train-step"
REPLACEMENT = "replacement"


class OutOfBudgetError(RuntimeError):
    """The minimum batch does not fit: the proxy network is too large for the budget."""


@dataclass(frozen=True)
class MemoryModel:
    """Expected use = fixed_cost + batch * per_sample_cost, in arbitrary units."""

    fixed_cost: float
    per_sample_cost: float
    capacity: float
    threshold_fraction: float = 0.95

    def __post_init__(self):
        if self.fixed_cost < 0 or self.per_sample_cost <= 0 or self.capacity <= 0:
            raise ValueError("memory costs must be non-negative and capacity positive")
        if not 0 < self.threshold_fraction <= 1:
            raise ValueError("threshold_fraction must lie in (0, 1]")

    @property
    def budget(self) -> float:
        return self.threshold_fraction * self.capacity

    def usage(self, batch: int) -> float:
        return self.fixed_cost + batch * self.per_sample_cost

    def fits(self, batch: int) -> bool:
        return self.usage(batch) <= self.budget


@dataclass(frozen=True)
class BatchPolicy:
    b_min: int = 16
    b_mult: int = 16
    b_max: int = 256
    probe_interval: int = 5

    def __post_init__(self):
        if min(self.b_min, self.b_max, self.probe_interval) < 1 or self.b_mult < 1:
            raise ValueError("batch policy values must be positive")
        if self.b_min > self.b_max:
            raise ValueError("b_min must not exceed b_max")


def choose_batch_size(policy: BatchPolicy, model: MemoryModel) -> int:
    """Largest b_min + n * b_mult within b_max whose expected use stays under the threshold."""
    if not model.fits(policy.b_min):
        raise OutOfBudgetError(
            f"batch {policy.b_min} needs {model.usage(policy.b_min):g} units, budget is {model.budget:g}")
    n_cap = (policy.b_max - policy.b_min) // policy.b_mult
    room = (model.budget - model.usage(policy.b_min)) / (model.per_sample_cost * policy.b_mult)
    n = min(n_cap, math.floor(room))
    # guard the float floor in both directions
    while n < n_cap and model.fits(policy.b_min + (n + 1) * policy.b_mult):
        n += 1
    while n > 0 and not model.fits(policy.b_min + n * policy.b_mult):
        n -= 1
    return policy.b_min + n * policy.b_mult


def governor_step(current_b: int, step_index: int, event: str, policy: BatchPolicy, model: MemoryModel) -> int:
    """Reset on replacement, probe every ``probe_interval`` train steps, never shrink otherwise."""
    if event == REPLACEMENT:
        return policy.b_min
    if event != TRAIN_STEP:
        raise ValueError(f"unknown governor event {event!r}")
    if step_index > 0 and step_index % policy.probe_interval == 0:
        return max(current_b, choose_batch_size(policy, model))
    return current_b


def activation_footprint(output: Tensor) -> int:
    """Elements held by every recorded intermediate of the graph ending at ``output``."""
    seen, stack, total = set(), [output], 0
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._parents:
            total += t.data.size
            stack.extend(t._parents)
    return total


def estimate_memory_model(network, sample_shape: tuple, capacity: float, threshold_fraction: float = 0.95,
                          optimizer_slots: int = 1) -> MemoryModel:
    """Analytic model from a one-sample forward: activations plus their gradients per sample,
    parameters plus gradients plus optimizer slots as the fixed part (units are float64 elements)."""
    probe = Tensor(np.zeros((1,) + tuple(sample_shape)))
    out = network(probe)
    if isinstance(out, tuple):
        out = out[0]
    per_sample = 2 * activation_footprint(out)
    params = network.parameter_count() + sum(a.size for a in network.alpha_parameters())
    return MemoryModel(float(params * (2 + optimizer_slots)), float(per_sample), float(capacity),
                       threshold_fraction)
