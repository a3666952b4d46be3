"""Search-curve statistics and their CSV export."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .cell import CellGraph
from .space import group_similarity

EPOCH_FILE = "epochs.csv"
CYCLE_FILE = "cycles.csv"
TIMING_FILE = "timing.csv"


@dataclass
class EpochRecord:
    epoch: int
    cycle: int
    phase: str  # "grace" or "joint"
    train_acc: float
    val_acc: float
    batch_size: int
    lr: float
    skip_ratio: float
    pool_ratio: float
    conv_ratio: float
    mean_similarity: float


@dataclass
class CycleRecord:
    cycle: int
    epochs: int
    candidates: int
    skip_ratio: float
    pool_ratio: float
    conv_ratio: float
    mean_similarity_normal: float
    mean_similarity_reduction: float
    exhausted_edges: int


@dataclass
class TimingRecord:
    cycle: int
    epoch: int
    seconds: float


@dataclass
class CycleMetrics:
    epochs: list = field(default_factory=list)
    cycles: list = field(default_factory=list)
    timing: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"epochs": [vars(r) for r in self.epochs], "cycles": [vars(r) for r in self.cycles]}

    @classmethod
    def from_dict(cls, d: dict) -> "CycleMetrics":
        return cls([EpochRecord(**r) for r in d["epochs"]], [CycleRecord(**r) for r in d["cycles"]])


def op_kind_ratios(*cells: CellGraph) -> tuple[float, float, float]:
    """Fraction of (identity, pooling, convolution) candidates over every edge of ``cells``."""
    counts = {"id": 0, "pool": 0, "conv": 0}
    for cell in cells:
        for spec in cell.candidates():
            counts[spec.family] += 1
    total = sum(counts.values())
    if total == 0:
        raise ValueError("no candidates to count")
    return counts["id"] / total, counts["pool"] / total, counts["conv"] / total


def cell_similarity(cell: CellGraph) -> float:
    """Mean pairwise similarity over the union (with multiplicity) of all edge pools."""
    specs = cell.candidates()
    if len(specs) < 2:
        raise ValueError("similarity needs at least two candidates")
    return group_similarity(specs)


# ---------------------------------------------------------------- CSV

def _columns(record_type) -> list[str]:
    return [f.name for f in fields(record_type)]


def _format(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _write(path: Path, record_type, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_columns(record_type))
        for row in rows:
            writer.writerow([_format(getattr(row, c)) for c in _columns(record_type)])


def _read(path: Path, record_type) -> list:
    types = {f.name: f.type for f in fields(record_type)}
    casts = {"int": int, "float": float, "str": str}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is not None and reader.fieldnames != _columns(record_type):
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [record_type(**{k: casts[types[k]](v) for k, v in row.items()}) for row in reader]


def export_curves(metrics: CycleMetrics, directory, timing: bool = True) -> list[Path]:
    """Write epochs.csv and cycles.csv (and the wall-clock timing.csv) into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / EPOCH_FILE, directory / CYCLE_FILE]
    _write(paths[0], EpochRecord, metrics.epochs)
    _write(paths[1], CycleRecord, metrics.cycles)
    if timing:
        paths.append(directory / TIMING_FILE)
        _write(paths[2], TimingRecord, metrics.timing)
    return paths


def load_curves(directory) -> CycleMetrics:
    directory = Path(directory)
    timing: Optional[list] = None
    if (directory / TIMING_FILE).exists():
        timing = _read(directory / TIMING_FILE, TimingRecord)
    return CycleMetrics(_read(directory / EPOCH_FILE, EpochRecord), _read(directory / CYCLE_FILE, CycleRecord),
                        timing or [])
