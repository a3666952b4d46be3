"""Stacking cells into a classifier: stem, preprocessing, cells, heads."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..space import IDENTITY, CandidateSpec, Operation, factorized_reduction, fan_in_uniform, fresh_weights
from ..tensor import Tensor, conv2d, global_avg_pool, linear, relu, sample_norm, scale_samples
from .graph import NORMAL, REDUCTION, CellGraph, EdgeKey, WeightStore, cell_forward


def reduction_positions(cells: int) -> tuple[int, int]:
    """Reduction cells sit at the first and second thirds of the stack."""
    if cells < 3:
        raise ValueError("a network needs at least 3 cells")
    return cells // 3, 2 * cells // 3


def auxiliary_position(cells: int) -> int:
    return 2 * cells // 3


@dataclass(frozen=True)
class CellSlot:
    position: int
    kind: str
    channels: int
    # how each input is aligned: "conv1x1" or "reduce" (factorized, when the resolution is higher)
    prev_mode: str
    prev_prev_mode: str
    prev_channels: int
    prev_prev_channels: int


def plan_layout(cells: int, init_channels: int) -> list[CellSlot]:
    reductions = set(reduction_positions(cells))
    slots = []
    # (channels, resolution level) of the stem, then of each cell output
    outputs = [(init_channels, 0)]
    channels = init_channels
    for i in range(cells):
        kind = REDUCTION if i in reductions else NORMAL
        if kind == REDUCTION:
            channels *= 2
        prev = outputs[-1]
        prev_prev = outputs[-2] if len(outputs) > 1 else outputs[-1]

        def mode(src):
            return "reduce" if src[1] < prev[1] else "conv1x1"

        slots.append(CellSlot(i, kind, channels, mode(prev), mode(prev_prev), prev[0], prev_prev[0]))
        outputs.append((channels, prev[1] + (kind == REDUCTION)))
    return slots


class Network:
    """Classifier assembled from a normal and a reduction :class:`CellGraph`.

    Every cell of a kind reads the same graph (pools and architecture
    weights). Candidate weights live in ``store`` and are shared by all
    cells of the same kind and width.
    """

    def __init__(self, normal: CellGraph, reduction: CellGraph, cells: int = 8, init_channels: int = 16,
                 classes: int = 10, in_channels: int = 3, store: Optional[WeightStore] = None,
                 rng: Optional[np.random.Generator] = None, auxiliary: bool = False, affine: bool = True):
        if normal.kind != NORMAL or reduction.kind != REDUCTION:
            raise ValueError("expected a normal and a reduction cell graph")
        if init_channels < 1 or classes < 2 or in_channels < 1:
            raise ValueError("invalid network sizes")
        self.normal, self.reduction = normal, reduction
        self.cells, self.init_channels, self.classes = cells, init_channels, classes
        self.layout = plan_layout(cells, init_channels)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.store = store if store is not None else WeightStore()
        self.affine = affine
        self.auxiliary = auxiliary
        self.drop_path_prob = 0.0
        self.training = False

        rng_ = self.rng
        fixed: dict[str, Tensor] = {}
        fixed["stem.weight"] = Tensor(fan_in_uniform((init_channels, in_channels, 3, 3), rng_), requires_grad=True)
        for slot in self.layout:
            for which, mode, src in (("prev", slot.prev_mode, slot.prev_channels),
                                     ("prev_prev", slot.prev_prev_mode, slot.prev_prev_channels)):
                base = f"cell{slot.position}.pre_{which}"
                if mode == "conv1x1":
                    fixed[f"{base}.weight"] = Tensor(fan_in_uniform((slot.channels, src, 1, 1), rng_),
                                                     requires_grad=True)
                elif mode == "reduce":
                    half = slot.channels // 2
                    fixed[f"{base}.0.weight"] = Tensor(fan_in_uniform((half, src, 1, 1), rng_), requires_grad=True)
                    fixed[f"{base}.1.weight"] = Tensor(fan_in_uniform((slot.channels - half, src, 1, 1), rng_),
                                                       requires_grad=True)
        last = self.layout[-1].channels
        fixed["head.weight"] = Tensor(fan_in_uniform((classes, last), rng_), requires_grad=True)
        fixed["head.bias"] = Tensor(np.zeros(classes), requires_grad=True)
        if auxiliary:
            aux_c = self.layout[auxiliary_position(cells)].channels
            fixed["aux.weight"] = Tensor(fan_in_uniform((classes, aux_c), rng_), requires_grad=True)
            fixed["aux.bias"] = Tensor(np.zeros(classes), requires_grad=True)
        self.fixed = fixed
        self.ops: dict[tuple[int, EdgeKey, str], Operation] = {}
        self.sync()

    # ------------------------------------------------------------------ weights

    def graph_for(self, kind: str) -> CellGraph:
        return self.normal if kind == NORMAL else self.reduction

    def sync(self) -> None:
        """(Re)bind operations to the graphs' current pools, initialising missing weights."""
        ops = {}
        for slot in self.layout:
            graph = self.graph_for(slot.kind)
            for key, pool in graph.edges.items():
                stride = 2 if slot.kind == REDUCTION and key[1] < 2 else 1
                for spec in pool.candidates:
                    weights = self.store.get(slot.kind, slot.channels, key, spec)
                    if weights is None:
                        weights = fresh_weights(spec, slot.channels, stride, self.rng, self.affine)
                        self.store.put(slot.kind, slot.channels, key, spec, weights)
                    ops[(slot.position, key, spec.canonical())] = Operation(spec, slot.channels, stride, weights)
        self.ops = ops
        live = {self.store.key(self.layout[p].kind, self.layout[p].channels, k, op.spec)
                for (p, k, _), op in ops.items()}
        self.store.retain(live)

    def candidate_weights(self, kind: str, channels: int, key: EdgeKey, spec: CandidateSpec):
        return self.store.get(kind, channels, key, spec)

    def weight_parameters(self) -> list[Tensor]:
        params = list(self.fixed.values())
        for _, weights in sorted(self.store.items(), key=lambda kv: kv[0]):
            params.extend(t for _, t in sorted(weights.items()))
        return params

    def alpha_parameters(self) -> list[Tensor]:
        return self.normal.alpha_parameters() + self.reduction.alpha_parameters()

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.weight_parameters()))

    def train(self, mode: bool = True) -> "Network":
        self.training = mode
        return self

    def eval(self) -> "Network":
        return self.train(False)

    # ------------------------------------------------------------------ forward

    def _align(self, x: Tensor, slot: CellSlot, which: str, mode: str) -> Tensor:
        """ReLU, 1x1 conv (or factorized reduction), then per-sample normalisation."""
        base = f"cell{slot.position}.pre_{which}"
        if mode == "conv1x1":
            h = conv2d(relu(x), self.fixed[f"{base}.weight"])
        else:
            h = factorized_reduction(x, self.fixed[f"{base}.0.weight"], self.fixed[f"{base}.1.weight"])
        return sample_norm(h)

    def _edge_operation(self, slot: CellSlot):
        drop = self.training and self.drop_path_prob > 0

        def resolve(key: EdgeKey, spec: CandidateSpec):
            op = self.ops[(slot.position, key, spec.canonical())]
            if not drop or spec.kind == IDENTITY:
                return op

            def dropped(x: Tensor) -> Tensor:
                from ..data.augment import drop_path_mask
                out = op(x)
                keep, scale = drop_path_mask(self.drop_path_prob, self.rng, size=out.shape[0])
                return scale_samples(out, keep * scale)

            return dropped

        return resolve

    def forward(self, x: Tensor):
        """Logits, or ``(logits, aux_logits)`` when the auxiliary head is active in training."""
        stem = conv2d(x, self.fixed["stem.weight"])
        prev_prev, prev = stem, stem
        aux_logits = None
        aux_at = auxiliary_position(self.cells)
        for slot in self.layout:
            a = self._align(prev, slot, "prev", slot.prev_mode)
            b = self._align(prev_prev, slot, "prev_prev", slot.prev_prev_mode)
            out = cell_forward(self.graph_for(slot.kind), a, b, self._edge_operation(slot))
            prev_prev, prev = prev, out
            if self.auxiliary and self.training and slot.position == aux_at:
                aux_logits = linear(global_avg_pool(relu(out)), self.fixed["aux.weight"], self.fixed["aux.bias"])
        logits = linear(global_avg_pool(prev), self.fixed["head.weight"], self.fixed["head.bias"])
        if aux_logits is not None:
            return logits, aux_logits
        return logits

    __call__ = forward

    # ------------------------------------------------------------------ state

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"fixed|{k}": v.data for k, v in self.fixed.items()}
        out.update({f"store|{k}": v for k, v in self.store.to_arrays().items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        fixed = {k.split("|", 1)[1]: v for k, v in arrays.items() if k.startswith("fixed|")}
        if set(fixed) != set(self.fixed):
            raise ValueError("checkpoint does not match the network layout")
        for k, v in fixed.items():
            if self.fixed[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}")
            self.fixed[k] = Tensor(np.array(v, dtype=np.float64), requires_grad=True)
        self.store = WeightStore.from_arrays(
            {k.split("|", 1)[1]: v for k, v in arrays.items() if k.startswith("store|")})
        self.sync()


def build_proxy_network(normal: CellGraph, reduction: CellGraph, cells: int = 8, init_channels: int = 16,
                        classes: int = 10, **kwargs) -> Network:
    return Network(normal, reduction, cells, init_channels, classes, **kwargs)
