"""Cell DAGs whose edges carry softmax-weighted candidate pools."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..space import CandidateSpec, Operation, OperationWeights, instantiate, parse_spec
from ..tensor import Tensor, mul, softmax, weighted_sum

NORMAL = "normal"
REDUCTION = "reduction"
EdgeKey = tuple[int, int]  # (target node j, source i); 0 = prev-prev cell, 1 = prev cell


def edge_id(key: EdgeKey) -> str:
    return f"{key[0]}<-{key[1]}"


def parse_edge_id(text: str) -> EdgeKey:
    j, i = text.split("<-")
    return int(j), int(i)


@dataclass
class EdgePool:
    """Candidates living on one edge, their architecture weights and every spec ever seen there."""

    candidates: list[CandidateSpec]
    alphas: Tensor = None
    history: set[str] = field(default_factory=set)

    def __post_init__(self):
        self.candidates = list(self.candidates)
        names = [c.canonical() for c in self.candidates]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate candidates on edge: {names}")
        if self.alphas is None:
            self.alphas = Tensor(np.zeros(len(self.candidates)), requires_grad=True)
        elif not isinstance(self.alphas, Tensor):
            self.alphas = Tensor(np.asarray(self.alphas, dtype=np.float64), requires_grad=True)
        if self.alphas.shape != (len(self.candidates),):
            raise ValueError("one alpha per candidate required")
        self.history = set(self.history) | set(names)

    def __len__(self) -> int:
        return len(self.candidates)

    def names(self) -> list[str]:
        return [c.canonical() for c in self.candidates]

    def probabilities(self) -> np.ndarray:
        return softmax(self.alphas.data).data

    def reset_alphas(self) -> None:
        self.alphas = Tensor(np.zeros(len(self.candidates)), requires_grad=True)

    def replace_candidates(self, candidates: Sequence[CandidateSpec], alphas: Optional[np.ndarray] = None) -> None:
        pool = EdgePool(list(candidates), alphas, self.history)
        self.candidates, self.alphas, self.history = pool.candidates, pool.alphas, pool.history

    def copy(self) -> "EdgePool":
        return EdgePool(list(self.candidates), self.alphas.data.copy(), set(self.history))

    def to_dict(self) -> dict:
        return {"candidates": self.names(), "alphas": [float(a) for a in self.alphas.data],
                "history": sorted(self.history)}

    @classmethod
    def from_dict(cls, d: dict) -> "EdgePool":
        return cls([parse_spec(s) for s in d["candidates"]], np.array(d["alphas"], dtype=np.float64),
                   set(d["history"]))


class CellGraph:
    """A cell of ``nodes`` intermediate nodes over two cell inputs."""

    def __init__(self, kind: str = NORMAL, nodes: int = 4, edges: Optional[dict] = None,
                 initial: Optional[Callable[[], list[CandidateSpec]]] = None):
        if kind not in (NORMAL, REDUCTION):
            raise ValueError(f"cell kind must be {NORMAL!r} or {REDUCTION!r}")
        if nodes < 1:
            raise ValueError("a cell needs at least one node")
        self.kind = kind
        self.nodes = nodes
        if edges is None:
            from ..space import initial_candidates
            make = initial or initial_candidates
            edges = {(j, i): EdgePool(make()) for j in range(2, nodes + 2) for i in range(j)}
        self.edges: dict[EdgeKey, EdgePool] = dict(sorted(edges.items()))
        for (j, i) in self.edges:
            if not (2 <= j < nodes + 2 and 0 <= i < j):
                raise ValueError(f"edge {edge_id((j, i))} does not fit a {nodes}-node cell")

    @property
    def node_ids(self) -> range:
        return range(2, self.nodes + 2)

    def incoming(self, j: int) -> list[EdgeKey]:
        return [key for key in self.edges if key[0] == j]

    def is_finalized(self) -> bool:
        return all(len(self.incoming(j)) == 2 for j in self.node_ids) and all(
            len(p) == 1 for p in self.edges.values())

    def is_fully_connected(self) -> bool:
        return all(len(self.incoming(j)) == j for j in self.node_ids)

    def alpha_parameters(self) -> list[Tensor]:
        return [p.alphas for p in self.edges.values()]

    def reset_alphas(self) -> None:
        for pool in self.edges.values():
            pool.reset_alphas()

    def candidates(self) -> list[CandidateSpec]:
        return [c for p in self.edges.values() for c in p.candidates]

    def copy(self) -> "CellGraph":
        return CellGraph(self.kind, self.nodes, {k: p.copy() for k, p in self.edges.items()})

    def to_dict(self) -> dict:
        return {"kind": self.kind, "nodes": self.nodes,
                "edges": {edge_id(k): p.to_dict() for k, p in self.edges.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "CellGraph":
        edges = {parse_edge_id(k): EdgePool.from_dict(v) for k, v in d["edges"].items()}
        return cls(d["kind"], int(d["nodes"]), edges)

    def __eq__(self, other) -> bool:
        return isinstance(other, CellGraph) and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"CellGraph({self.kind}, nodes={self.nodes}, edges={len(self.edges)})"


def mixed_edge_forward(pool: EdgePool, x: Tensor, operations: Sequence[Callable[[Tensor], Tensor]]) -> Tensor:
    """Softmax(alpha)-weighted sum of every candidate's output on ``x``."""
    if len(pool) == 0:
        raise ValueError("cannot evaluate an empty candidate pool")
    if len(operations) != len(pool):
        raise ValueError("one operation per candidate required")
    outputs = [op(x) for op in operations]
    return weighted_sum(outputs, softmax(pool.alphas))


def _default_operations(cell: CellGraph, channels: int):
    def make(key: EdgeKey, spec: CandidateSpec) -> Operation:
        stride = 2 if cell.kind == REDUCTION and key[1] < 2 else 1
        return instantiate(spec, channels, stride, seed=0)
    return make


def cell_forward(cell: CellGraph, input_prev: Tensor, input_prev_prev: Tensor,
                 operations: Optional[Callable[[EdgeKey, CandidateSpec], Callable]] = None) -> Tensor:
    """Node j sums its mixed edges; the cell returns the mean of all node outputs.

    ``operations(edge, spec)`` supplies the callable for each candidate; by
    default fresh operations are built (enough for weight-free candidates).
    """
    if input_prev.shape != input_prev_prev.shape:
        raise ValueError(f"cell inputs disagree: {input_prev.shape} vs {input_prev_prev.shape}")
    ops = operations or _default_operations(cell, input_prev.shape[1])
    states = {0: input_prev_prev, 1: input_prev}
    for j in cell.node_ids:
        total = None
        for key in cell.incoming(j):
            pool = cell.edges[key]
            out = mixed_edge_forward(pool, states[key[1]], [ops(key, spec) for spec in pool.candidates])
            total = out if total is None else total + out
        if total is None:
            raise ValueError(f"node {j} has no incoming edges")
        states[j] = total
    result = states[2]
    for j in list(cell.node_ids)[1:]:
        result = result + states[j]
    return mul(result, 1.0 / cell.nodes)


def finalize_cell(cell: CellGraph, inputs_per_node: int = 2) -> CellGraph:
    """Keep the strongest incoming edges per node and the argmax candidate on each.

    Edge strength is the largest softmax weight in its pool; ties go to the
    lower source index, candidate ties to the earlier candidate.
    """
    edges = {}
    for j in cell.node_ids:
        incoming = cell.incoming(j)
        if len(incoming) < inputs_per_node:
            raise ValueError(f"node {j} has {len(incoming)} incoming edges, needs {inputs_per_node}")
        for key in incoming:
            if len(cell.edges[key]) == 0:
                raise ValueError(f"edge {edge_id(key)} has an empty pool")
        ranked = sorted(incoming, key=lambda k: (-cell.edges[k].probabilities().max(), k[1]))
        for key in sorted(ranked[:inputs_per_node]):
            pool = cell.edges[key]
            best = int(np.argmax(pool.alphas.data))
            edges[key] = EdgePool([pool.candidates[best]], np.zeros(1), set(pool.history))
    return CellGraph(cell.kind, cell.nodes, edges)


def finalize(normal: CellGraph, reduction: CellGraph) -> tuple[CellGraph, CellGraph]:
    return finalize_cell(normal), finalize_cell(reduction)


def count_configurations(nodes: int, candidates: int) -> int:
    """Exact number of finalized cells: prod_{n=2}^{M+1} C(n, 2) * K^2."""
    if nodes < 1 or candidates < 1:
        raise ValueError("need at least one node and one candidate")
    total = 1
    for n in range(2, nodes + 2):
        total *= comb(n, 2) * candidates ** 2
    return total


class WeightStore:
    """Persistent candidate weights keyed by (cell kind, cell width, edge, spec string)."""

    def __init__(self):
        self._weights: dict[tuple[str, int, str, str], OperationWeights] = {}

    @staticmethod
    def key(kind: str, width: int, edge: EdgeKey, spec: CandidateSpec) -> tuple[str, int, str, str]:
        return kind, int(width), edge_id(edge), spec.canonical()

    def get(self, kind, width, edge, spec) -> Optional[OperationWeights]:
        return self._weights.get(self.key(kind, width, edge, spec))

    def put(self, kind, width, edge, spec, weights: OperationWeights) -> None:
        self._weights[self.key(kind, width, edge, spec)] = weights

    def __contains__(self, key) -> bool:
        return key in self._weights

    def __len__(self) -> int:
        return len(self._weights)

    def keys(self):
        return list(self._weights)

    def items(self):
        return list(self._weights.items())

    def retain(self, keep: Iterable[tuple[str, int, str, str]]) -> None:
        keep = set(keep)
        self._weights = {k: v for k, v in self._weights.items() if k in keep}

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for (kind, pos, edge, spec), weights in sorted(self._weights.items()):
            for name, t in weights.items():
                out[f"{kind}|{pos}|{edge}|{spec}|{name}"] = t.data
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "WeightStore":
        store = cls()
        for flat, arr in arrays.items():
            kind, pos, edge, spec, name = flat.split("|")
            store._weights.setdefault((kind, int(pos), edge, spec), {})[name] = Tensor(
                np.array(arr, dtype=np.float64), requires_grad=True)
        return store
