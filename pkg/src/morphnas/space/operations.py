"""Turning a :class:`CandidateSpec` into a callable layer stack with weights."""
from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from ..tensor import Tensor, avg_pool2d, channel_affine, concat, conv2d, max_pool2d, relu, shift
from .specs import AVG_POOL, IDENTITY, MAX_POOL, SEP_CONV, CandidateSpec

# layer name -> parameter tensor
OperationWeights = Dict[str, Tensor]


def fan_in_uniform(shape: tuple, rng: np.random.Generator) -> np.ndarray:
    """He-style uniform init, bound sqrt(6 / fan_in) with fan_in = in_channels * k * k."""
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def expansion_widths(spec: CandidateSpec, channels: int) -> list[int]:
    """Channel count at every layer boundary, input first, output last.

    ``conv_k3_d1_m[2]`` on 8 channels gives ``[8, 16, 8]``.
    """
    return [channels] + [m * channels for m in spec.mult] + [channels]


def fresh_weights(spec: CandidateSpec, channels: int, stride: int,
                  rng: np.random.Generator, affine: bool = True) -> OperationWeights:
    """Freshly initialised parameters for one candidate on one edge."""
    weights: OperationWeights = {}
    if spec.kind == IDENTITY:
        if stride == 2:
            half = channels // 2
            weights["fr.0.weight"] = Tensor(fan_in_uniform((half, channels, 1, 1), rng), requires_grad=True)
            weights["fr.1.weight"] = Tensor(fan_in_uniform((channels - half, channels, 1, 1), rng),
                                            requires_grad=True)
        return weights
    if spec.kind != SEP_CONV:
        return weights
    widths = expansion_widths(spec, channels)
    for i in range(len(spec.mult)):
        weights[f"expand.{i}.weight"] = Tensor(fan_in_uniform((widths[i + 1], widths[i], 1, 1), rng),
                                               requires_grad=True)
    inner = widths[-2]
    weights["dw.weight"] = Tensor(fan_in_uniform((inner, 1, spec.kernel, spec.kernel), rng), requires_grad=True)
    weights["pw.weight"] = Tensor(fan_in_uniform((channels, inner, 1, 1), rng), requires_grad=True)
    if affine:
        weights["affine.scale"] = Tensor(np.ones(channels), requires_grad=True)
        weights["affine.shift"] = Tensor(np.zeros(channels), requires_grad=True)
    return weights


def factorized_reduction(x: Tensor, w0: Tensor, w1: Tensor) -> Tensor:
    """Stride-2 replacement for identity: ReLU, then two pixel-offset 1x1 convs concatenated."""
    r = relu(x)
    return concat([conv2d(r, w0, stride=2), conv2d(shift(r, 1, 1), w1, stride=2)])


class Operation:
    """One instantiated candidate: a spec bound to a channel count, stride and weights."""

    def __init__(self, spec: CandidateSpec, channels: int, stride: int = 1,
                 weights: Optional[OperationWeights] = None,
                 rng: Optional[np.random.Generator] = None, affine: bool = True):
        if channels < 1:
            raise ValueError("channels must be positive")
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        if spec.kind == IDENTITY and stride == 2 and channels < 2:
            raise ValueError("factorized reduction needs at least 2 channels")
        self.spec = spec
        self.channels = channels
        self.stride = stride
        if weights is None:
            weights = fresh_weights(spec, channels, stride, rng or np.random.default_rng(), affine)
        self.weights = weights
        self._check_shapes()

    def _check_shapes(self) -> None:
        spec, c = self.spec, self.channels
        if spec.kind != SEP_CONV:
            return
        widths = expansion_widths(spec, c)
        for i in range(len(spec.mult)):
            expected = (widths[i + 1], widths[i], 1, 1)
            if self.weights[f"expand.{i}.weight"].shape != expected:
                raise ValueError(f"expand.{i}.weight has shape {self.weights[f'expand.{i}.weight'].shape}, "
                                 f"expected {expected}")
        if self.weights["dw.weight"].shape != (widths[-2], 1, spec.kernel, spec.kernel):
            raise ValueError("depthwise weight does not match spec")
        if self.weights["pw.weight"].shape != (c, widths[-2], 1, 1):
            raise ValueError("pointwise weight does not match spec")

    def parameters(self) -> list[Tensor]:
        return list(self.weights.values())

    def layer_widths(self) -> list[int]:
        return expansion_widths(self.spec, self.channels) if self.spec.is_conv else [self.channels, self.channels]

    def __call__(self, x: Tensor) -> Tensor:
        kind, s = self.spec.kind, self.stride
        if kind == IDENTITY:
            if s == 1:
                return x
            return factorized_reduction(x, self.weights["fr.0.weight"], self.weights["fr.1.weight"])
        if kind == MAX_POOL:
            return max_pool2d(x, self.spec.kernel, s)
        if kind == AVG_POOL:
            return avg_pool2d(x, self.spec.kernel, s)
        h = x
        for i in range(len(self.spec.mult)):
            h = conv2d(relu(h), self.weights[f"expand.{i}.weight"])
        h = relu(h)
        h = conv2d(h, self.weights["dw.weight"], stride=s, dilation=self.spec.dilation, groups=h.shape[1])
        h = conv2d(h, self.weights["pw.weight"])
        if "affine.scale" in self.weights:
            h = channel_affine(h, self.weights["affine.scale"], self.weights["affine.shift"])
        return h

    def __repr__(self) -> str:
        return f"Operation({self.spec.canonical()}, channels={self.channels}, stride={self.stride})"


def instantiate(spec: CandidateSpec, channels: int, stride: int = 1, seed=None, affine: bool = True) -> Operation:
    """Build a fresh operation; ``seed`` may be an int or a numpy Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Operation(spec, channels, stride, rng=rng, affine=affine)


def parameter_count(weights: OperationWeights) -> int:
    return int(sum(t.size for t in weights.values()))
