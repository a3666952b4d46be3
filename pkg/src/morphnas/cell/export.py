"""Cell descriptions as JSON and Graphviz dot text."""
from __future__ import annotations

import json
from pathlib import Path

from .graph import CellGraph, edge_id


def _node_name(i: int) -> str:
    return {0: "c_{k-2}", 1: "c_{k-1}"}.get(i, f"B{i - 1}")


def cell_description(cell: CellGraph) -> dict:
    return {
        "kind": cell.kind,
        "nodes": [_node_name(j) for j in cell.node_ids],
        "edges": [
            {"id": edge_id(key), "target": _node_name(key[0]), "source": _node_name(key[1]),
             "candidates": pool.names(), "alphas": [float(a) for a in pool.alphas.data]}
            for key, pool in cell.edges.items()
        ],
        "output": "mean",
        "graph": cell.to_dict(),
    }


def to_dot(cell: CellGraph) -> str:
    lines = [f'digraph "{cell.kind}" {{', "  rankdir=LR;",
             '  node [style=filled, shape=rect, fontsize=12];']
    lines.append('  "c_{k-2}" [fillcolor=darkseagreen2];')
    lines.append('  "c_{k-1}" [fillcolor=darkseagreen2];')
    for j in cell.node_ids:
        lines.append(f'  "{_node_name(j)}" [fillcolor=lightblue];')
    for key, pool in cell.edges.items():
        label = "\\n".join(pool.names())
        lines.append(f'  "{_node_name(key[1])}" -> "{_node_name(key[0])}" [label="{label}"];')
    lines.append('  "c_{k}" [fillcolor=palegoldenrod, label="c_{k} (mean)"];')
    for j in cell.node_ids:
        lines.append(f'  "{_node_name(j)}" -> "c_{{k}}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_cell(cell: CellGraph, directory, stem: str) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    json_path = directory / f"{stem}.json"
    dot_path = directory / f"{stem}.dot"
    json_path.write_text(json.dumps(cell_description(cell), indent=2, sort_keys=True) + "\n")
    dot_path.write_text(to_dot(cell))
    return json_path, dot_path


def read_cell(path) -> CellGraph:
    return CellGraph.from_dict(json.loads(Path(path).read_text())["graph"])
