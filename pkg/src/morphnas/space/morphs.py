"""The six morph moves on separable-convolution candidates, with weight transfer.

Moves 1 (kernel increase) and 2 (widen) preserve the function exactly; the
others change it and rely on grace epochs to recover.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..tensor import Tensor
from .operations import OperationWeights, fan_in_uniform
from .specs import CandidateSpec, SpaceConstraints

KERNEL_UP = "kernel+"
KERNEL_DOWN = "kernel-"
DILATION_UP = "dilation+"
DILATION_DOWN = "dilation-"
WIDEN = "widen"
INSERT = "insert-layer"
MOVES = (KERNEL_UP, KERNEL_DOWN, DILATION_UP, DILATION_DOWN, WIDEN, INSERT)


@dataclass(frozen=True, order=True)
class MorphAction:
    move: str
    # target kernel size for kernel moves (matters under "jump" semantics)
    target: Optional[int] = None

    def __str__(self) -> str:
        return self.move if self.target is None else f"{self.move}{self.target}"


def widen_index(mult: tuple[int, ...]) -> int:
    """The entry widen increments: the smallest, the leading one among ties."""
    return min(range(len(mult)), key=lambda i: (mult[i], i))


def morph_spec(spec: CandidateSpec, action: MorphAction) -> CandidateSpec:
    """Spec-level transition of a morph, without any legality check."""
    move = action.move
    if move in (KERNEL_UP, KERNEL_DOWN):
        step = 2 if move == KERNEL_UP else -2
        return spec.replace(kernel=action.target if action.target is not None else spec.kernel + step)
    if move == DILATION_UP:
        return spec.replace(dilation=spec.dilation + 1)
    if move == DILATION_DOWN:
        return spec.replace(dilation=spec.dilation - 1)
    if move == WIDEN:
        mult = list(spec.mult)
        mult[widen_index(spec.mult)] += 1
        return spec.replace(mult=tuple(mult))
    if move == INSERT:
        return spec.replace(mult=spec.mult + (1,))
    raise ValueError(f"unknown morph {move!r}")


def _candidate_actions(spec: CandidateSpec, constraints: SpaceConstraints) -> list[MorphAction]:
    k = spec.kernel
    if constraints.kernel_step == "jump":
        sizes = range(constraints.kernel_min, constraints.kernel_max + 1, 2)
        actions = [MorphAction(KERNEL_UP if t > k else KERNEL_DOWN, t) for t in sizes if t != k]
    else:
        actions = [MorphAction(KERNEL_UP, k + 2), MorphAction(KERNEL_DOWN, k - 2)]
    actions += [MorphAction(DILATION_UP), MorphAction(DILATION_DOWN)]
    if spec.mult:
        actions.append(MorphAction(WIDEN))
    actions.append(MorphAction(INSERT))
    return actions


def available_morphs(spec: CandidateSpec, constraints: SpaceConstraints) -> list[MorphAction]:
    """Legal morphs of ``spec`` under ``constraints``, in a fixed order.

    Pools and identity have no morphs. A move is legal when its child stays
    inside the constraint box (kernel 1 never combines with dilation > 1).
    """
    if not spec.is_conv:
        return []
    out = []
    for action in _candidate_actions(spec, constraints):
        if action.move in (KERNEL_UP, KERNEL_DOWN) and action.target < 1:
            continue
        if action.move == DILATION_DOWN and spec.dilation <= 1:
            continue
        if constraints.allows(morph_spec(spec, action)):
            out.append(action)
    return out


def _copy(t: Tensor) -> Tensor:
    return Tensor(t.data.copy(), requires_grad=True)


def apply_morph(spec: CandidateSpec, action: MorphAction, parent_weights: OperationWeights,
                rng: Optional[np.random.Generator] = None,
                constraints: Optional[SpaceConstraints] = None) -> tuple[CandidateSpec, OperationWeights]:
    """Child spec plus child weights derived from the parent's; the parent is not modified."""
    if not spec.is_conv:
        raise ValueError(f"{spec} has no morphs")
    if constraints is not None and action not in available_morphs(spec, constraints):
        raise ValueError(f"{action} is not a legal morph of {spec}")
    child = morph_spec(spec, action)
    if action.move in (KERNEL_UP, KERNEL_DOWN) and child.kernel < 1:
        raise ValueError(f"{action} would produce a non-positive kernel")
    if action.move == DILATION_DOWN and child.dilation < 1:
        raise ValueError("dilation cannot go below 1")
    if action.move == WIDEN and not spec.mult:
        raise ValueError("widen needs at least one expansion layer")
    rng = rng or np.random.default_rng()
    weights = {name: _copy(t) for name, t in parent_weights.items()}
    channels = parent_weights["pw.weight"].shape[0]
    move = action.move

    if move in (KERNEL_UP, KERNEL_DOWN):
        dw = parent_weights["dw.weight"].data
        if move == KERNEL_UP:
            pad = (child.kernel - spec.kernel) // 2
            new = np.pad(dw, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        else:
            cut = (spec.kernel - child.kernel) // 2
            new = dw[:, :, cut:cut + child.kernel, cut:cut + child.kernel].copy()
        weights["dw.weight"] = Tensor(new, requires_grad=True)

    elif move == WIDEN:
        j = widen_index(spec.mult)
        depth = len(spec.mult)
        grown = parent_weights[f"expand.{j}.weight"].data
        extra_rows = fan_in_uniform((channels,) + grown.shape[1:], rng)
        weights[f"expand.{j}.weight"] = Tensor(np.concatenate([grown, extra_rows], axis=0), requires_grad=True)
        if j + 1 < depth:
            nxt = parent_weights[f"expand.{j + 1}.weight"].data
            zeros = np.zeros((nxt.shape[0], channels, 1, 1))
            weights[f"expand.{j + 1}.weight"] = Tensor(np.concatenate([nxt, zeros], axis=1), requires_grad=True)
        else:
            # new channels pass through fresh depthwise taps and are read with zero weights
            dw = parent_weights["dw.weight"].data
            extra_dw = fan_in_uniform((channels,) + dw.shape[1:], rng)
            weights["dw.weight"] = Tensor(np.concatenate([dw, extra_dw], axis=0), requires_grad=True)
            pw = parent_weights["pw.weight"].data
            weights["pw.weight"] = Tensor(np.concatenate([pw, np.zeros((pw.shape[0], channels, 1, 1))], axis=1),
                                          requires_grad=True)

    elif move == INSERT:
        depth = len(spec.mult)
        in_width = spec.mult[-1] * channels if spec.mult else channels
        weights[f"expand.{depth}.weight"] = Tensor(fan_in_uniform((channels, in_width, 1, 1), rng),
                                                   requires_grad=True)
        # the depthwise stage now sees `channels` inputs; keep the leading ones
        weights["dw.weight"] = Tensor(parent_weights["dw.weight"].data[:channels].copy(), requires_grad=True)
        weights["pw.weight"] = Tensor(parent_weights["pw.weight"].data[:, :channels].copy(), requires_grad=True)

    # dilation moves reuse every tensor unchanged
    return child, dict(sorted(weights.items(), key=lambda kv: _layer_order(kv[0])))


def _layer_order(name: str) -> tuple:
    head = name.split(".")[0]
    rank = {"expand": 0, "dw": 1, "pw": 2, "affine": 3, "fr": 4}.get(head, 5)
    index = int(name.split(".")[1]) if head in ("expand", "fr") else 0
    return rank, index, name
