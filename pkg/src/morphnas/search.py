"""The prune-and-replace search loop over cycles of training."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .batching import REPLACEMENT, TRAIN_STEP, BatchPolicy, MemoryModel, estimate_memory_model, governor_step
from .cell import NORMAL, REDUCTION, CellGraph, EdgePool, Network, finalize, write_cell
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import AugmentConfig, LabeledImageSet, augment
from .metrics import CycleMetrics, CycleRecord, EpochRecord, TimingRecord, cell_similarity, export_curves, op_kind_ratios
from .space import SpaceConstraints, apply_morph, available_morphs, initial_candidates, morph_spec, preset
from .tensor import SGD, Adam, CosineRestartSchedule, softmax
from .training import batch_loss, evaluate

log = logging.getLogger(__name__)

DEFAULT_RETRIES = 25


class ScheduleError(ValueError):
    """Inconsistent cycle schedule or candidate pools."""


@dataclass(frozen=True)
class CycleSpec:
    epochs: int
    grace_epochs: int
    morphisms: int
    candidates: int

    def __post_init__(self):
        if self.epochs < 1 or self.candidates < 1 or self.morphisms < 0 or self.grace_epochs < 0:
            raise ScheduleError(f"invalid cycle {self}")
        if self.grace_epochs > self.epochs:
            raise ScheduleError(f"grace epochs exceed epochs in {self}")
        if self.morphisms > self.candidates:
            raise ScheduleError(f"more morphisms than candidates in {self}")

    @property
    def keep(self) -> int:
        """Survivors of the prune step so that insertion restores the candidate target."""
        return self.candidates - self.morphisms


DEFAULT_EPOCHS = (15, 15, 10, 10, 10, 10, 10, 10, 10)
DEFAULT_GRACE = (5, 5, 3, 3, 3, 3, 3, 3, 3)
DEFAULT_MORPHISMS = (3, 3, 3, 3, 3, 0, 0, 0, 0)
DEFAULT_CANDIDATES = (6, 6, 6, 6, 6, 4, 3, 2, 1)


@dataclass(frozen=True)
class CycleSchedule:
    cycles: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "cycles", tuple(self.cycles))
        if not self.cycles:
            raise ScheduleError("a schedule needs at least one cycle")
        last_growth = max((i for i, c in enumerate(self.cycles) if c.morphisms > 0), default=-1)
        tail = [c.candidates for c in self.cycles[last_growth + 1:]]
        if any(b > a for a, b in zip(tail, tail[1:])):
            raise ScheduleError("candidate targets must not grow once morphing has stopped")

    @classmethod
    def from_lists(cls, epochs, grace, morphisms, candidates) -> "CycleSchedule":
        rows = [epochs, grace, morphisms, candidates]
        if len({len(r) for r in rows}) != 1:
            raise ScheduleError("schedule rows differ in length")
        return cls(tuple(CycleSpec(*map(int, vals)) for vals in zip(*rows)))

    @classmethod
    def default(cls) -> "CycleSchedule":
        return cls.from_lists(DEFAULT_EPOCHS, DEFAULT_GRACE, DEFAULT_MORPHISMS, DEFAULT_CANDIDATES)

    def with_epochs(self, epochs: Sequence[int], grace: Sequence[int]) -> "CycleSchedule":
        return CycleSchedule.from_lists(epochs, grace, [c.morphisms for c in self.cycles],
                                        [c.candidates for c in self.cycles])

    def __len__(self) -> int:
        return len(self.cycles)

    def __getitem__(self, i) -> CycleSpec:
        return self.cycles[i]

    @property
    def total_epochs(self) -> int:
        return sum(c.epochs for c in self.cycles)

    def rows(self) -> dict:
        return {k: [getattr(c, k) for c in self.cycles] for k in ("epochs", "grace_epochs", "morphisms", "candidates")}


# ---------------------------------------------------------------- per-edge steps

def prune_edge(pool: EdgePool, keep: int, is_final_prune: bool) -> EdgePool:
    """Keep the ``keep`` best candidates by alpha, retaining a convolution unless finalizing."""
    if not 1 <= keep <= len(pool):
        raise ValueError(f"keep={keep} outside [1, {len(pool)}]")
    alphas = pool.alphas.data
    ranked = sorted(range(len(pool)), key=lambda i: (-alphas[i], i))
    kept = ranked[:keep]
    convs = [i for i in ranked if pool.candidates[i].is_conv]
    if not is_final_prune and convs and not any(pool.candidates[i].is_conv for i in kept):
        kept[-1] = convs[0]
    kept.sort()
    return EdgePool([pool.candidates[i] for i in kept], alphas[kept].copy(), set(pool.history))


@dataclass
class ReplaceReport:
    children: list = field(default_factory=list)  # (parent, action, child) triples
    reused: int = 0  # children already in the history, accepted after the retry budget ran out
    missing: int = 0  # slots left empty

    @property
    def exhausted(self) -> bool:
        return self.missing > 0


def _propose(parents: list, probs: np.ndarray, constraints: SpaceConstraints, rng):
    parent = parents[int(rng.choice(len(parents), p=probs))]
    actions = available_morphs(parent, constraints)
    action = actions[int(rng.integers(len(actions)))]
    return parent, action, morph_spec(parent, action)


def _fill_slot(parents, probs, candidates, history, constraints, rng, retries):
    """(proposal, reused) for one child slot, or (None, False)."""
    present = {c.canonical() for c in candidates}
    fallback = None
    for _ in range(retries):
        proposal = _propose(parents, probs, constraints, rng)
        name = proposal[2].canonical()
        if name not in history:
            return proposal, False
        if fallback is None and name not in present:
            fallback = proposal
    return fallback, fallback is not None


def replace_edge(pool: EdgePool, n_children: int, constraints: SpaceConstraints, store=None,
                 rng: Optional[np.random.Generator] = None, locations: Sequence[tuple] = (),
                 retries: int = DEFAULT_RETRIES) -> tuple[EdgePool, ReplaceReport]:
    """Add up to ``n_children`` morphed children, sampling parents by softmax over alphas.

    Each child slot proposes up to ``retries`` morphs of the surviving
    convolutions and takes the first spec the edge has never held. Failing
    that it accepts a previously held spec that is not in the pool, and as
    a last resort morphs one of this step's children instead. Slots that
    still find nothing stay empty and are reported. ``locations`` lists the
    (kind, width, edge) store slots whose parent weights are morphed into
    the child's.
    """
    rng = rng if rng is not None else np.random.default_rng()
    report = ReplaceReport()
    candidates = list(pool.candidates)
    history = set(pool.history)
    if n_children > 0:
        morphable = [i for i, c in enumerate(candidates) if c.is_conv and available_morphs(c, constraints)]
        if not morphable:
            raise ScheduleError(f"no morphable candidate among {pool.names()}")
        parents = [candidates[i] for i in morphable]
        probs = softmax(pool.alphas.data[morphable]).data
        for _ in range(n_children):
            chosen, reused = _fill_slot(parents, probs, candidates, history, constraints, rng, retries)
            if chosen is None:
                offspring = [c for _, _, c in report.children if available_morphs(c, constraints)]
                if offspring:
                    uniform = np.full(len(offspring), 1.0 / len(offspring))
                    chosen, reused = _fill_slot(offspring, uniform, candidates, history, constraints, rng, retries)
            if chosen is None:
                report.missing += 1
                log.warning("edge %s: no new child found in %d attempts", pool.names(), retries)
                continue
            report.reused += reused
            parent, action, child = chosen
            for kind, width, edge in locations:
                parent_weights = store.get(kind, width, edge, parent)
                if parent_weights is None:
                    raise ScheduleError(f"no stored weights for parent {parent} at {kind}/{width}/{edge}")
                store.put(kind, width, edge, child, apply_morph(parent, action, parent_weights, rng)[1])
            candidates.append(child)
            history.add(child.canonical())
            report.children.append((parent, action, child))
    out = EdgePool(candidates, None, history)
    return out, report


# ---------------------------------------------------------------- configuration and state

@dataclass(frozen=True)
class SearchConfig:
    constraints: SpaceConstraints = field(default_factory=lambda: preset("DL"))
    schedule: CycleSchedule = field(default_factory=CycleSchedule.default)
    nodes: int = 4
    cells: int = 8
    init_channels: int = 16
    lr_max: float = 0.025
    lr_min: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 3e-4
    alpha_lr: float = 6e-4
    alpha_betas: tuple = (0.5, 0.999)
    alpha_weight_decay: float = 1e-3
    policy: BatchPolicy = field(default_factory=lambda: BatchPolicy(16, 16, 64, 5))
    capacity_units: float = 2.5e8
    threshold_fraction: float = 0.95
    augment: bool = True
    retries: int = DEFAULT_RETRIES
    seed: int = 0


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


@dataclass
class SearchState:
    """Everything needed to continue a search from a cycle boundary."""

    config: SearchConfig
    normal: CellGraph
    reduction: CellGraph
    network: Network
    rng: np.random.Generator
    classes: int
    image_shape: tuple
    cycle: int = 0
    epoch: int = 0
    batch_size: int = 0
    metrics: CycleMetrics = field(default_factory=CycleMetrics)
    final_alphas: Optional[dict] = None  # pre-prune pools of the last cycle
    finalized: Optional[tuple] = None

    @classmethod
    def fresh(cls, config: SearchConfig, classes: int, image_shape: tuple) -> "SearchState":
        rng = np.random.default_rng(config.seed)
        normal, reduction = CellGraph(NORMAL, config.nodes), CellGraph(REDUCTION, config.nodes)
        net = Network(normal, reduction, config.cells, config.init_channels, classes,
                      in_channels=image_shape[0], rng=rng)
        return cls(config, normal, reduction, net, rng, classes, tuple(image_shape),
                   batch_size=config.policy.b_min)

    @property
    def done(self) -> bool:
        return self.finalized is not None

    def payload(self) -> dict:
        return {
            "cycle": self.cycle, "epoch": self.epoch, "batch_size": self.batch_size,
            "classes": self.classes, "image_shape": list(self.image_shape),
            "normal": self.normal.to_dict(), "reduction": self.reduction.to_dict(),
            "rng": _rng_state(self.rng), "metrics": self.metrics.to_dict(),
            "final_alphas": self.final_alphas,
            "finalized": None if self.finalized is None else [c.to_dict() for c in self.finalized],
        }

    def save(self, path) -> Path:
        return save_checkpoint(path, self.payload(), self.network.state_arrays())

    @classmethod
    def load(cls, path, config: SearchConfig) -> "SearchState":
        payload, arrays = load_checkpoint(path)
        try:
            normal = CellGraph.from_dict(payload["normal"])
            reduction = CellGraph.from_dict(payload["reduction"])
            rng = np.random.default_rng()
            rng.bit_generator.state = payload["rng"]
            classes, shape = int(payload["classes"]), tuple(payload["image_shape"])
            net = Network(normal, reduction, config.cells, config.init_channels, classes,
                          in_channels=shape[0], rng=np.random.default_rng(0))
            net.load_state_arrays(arrays)
            net.rng = rng
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: checkpoint does not match the configuration ({exc})") from exc
        finalized = payload.get("finalized")
        return cls(config, normal, reduction, net, rng, classes, shape, int(payload["cycle"]),
                   int(payload["epoch"]), int(payload["batch_size"]), CycleMetrics.from_dict(payload["metrics"]),
                   payload.get("final_alphas"),
                   None if finalized is None else tuple(CellGraph.from_dict(c) for c in finalized))


@dataclass
class SearchResult:
    normal: CellGraph
    reduction: CellGraph
    metrics: CycleMetrics
    state: SearchState


# ---------------------------------------------------------------- the loop

def _edge_locations(state: SearchState, kind: str, edge) -> list[tuple]:
    widths = sorted({s.channels for s in state.network.layout if s.kind == kind})
    return [(kind, w, edge) for w in widths]


def _memory_model(state: SearchState) -> MemoryModel:
    c = state.config
    return estimate_memory_model(state.network, state.image_shape, c.capacity_units, c.threshold_fraction)


def _search_augment(config: SearchConfig, data: LabeledImageSet) -> AugmentConfig:
    aug = AugmentConfig.for_dataset(data, cutout_size=None)
    return aug if config.augment else aug.evaluation()


def _run_cycle(state: SearchState, weight_half: LabeledImageSet, alpha_half: LabeledImageSet,
               aug: AugmentConfig, progress: Optional[Callable[[str], None]]) -> None:
    cfg, spec = state.config, state.config.schedule[state.cycle]
    net = state.network
    state.normal.reset_alphas()
    state.reduction.reset_alphas()
    weights = SGD(net.weight_parameters(), cfg.lr_max, cfg.momentum, cfg.weight_decay)
    alphas = Adam(net.alpha_parameters(), cfg.alpha_lr, tuple(cfg.alpha_betas), weight_decay=cfg.alpha_weight_decay)
    lr_schedule = CosineRestartSchedule(cfg.lr_max, cfg.lr_min, spec.epochs)
    memory = _memory_model(state)
    state.batch_size = governor_step(state.batch_size, 0, REPLACEMENT, cfg.policy, memory)
    skip, pool, conv = op_kind_ratios(state.normal, state.reduction)
    sim = float(np.mean([cell_similarity(state.normal), cell_similarity(state.reduction)]))
    steps = 0
    n_w, n_a = len(weight_half), len(alpha_half)
    for e in range(spec.epochs):
        started = time.perf_counter()
        grace = e < spec.grace_epochs
        order_w, order_a = state.rng.permutation(n_w), state.rng.permutation(n_a)
        pos, correct, lr = 0, 0, cfg.lr_max
        net.train()
        while pos < n_w:
            b = state.batch_size
            idx_w = order_w[pos:pos + b]
            lr = lr_schedule.lr_at((e + pos / n_w) / spec.epochs)
            if not grace:
                idx_a = order_a[np.arange(pos, pos + len(idx_w)) % n_a]
                alphas.zero_grad()
                weights.zero_grad()
                loss, _ = batch_loss(net, augment(alpha_half.images[idx_a], aug, state.rng), alpha_half.labels[idx_a])
                loss.backward()
                alphas.step()
            weights.zero_grad()
            alphas.zero_grad()
            loss, logits = batch_loss(net, augment(weight_half.images[idx_w], aug, state.rng),
                                      weight_half.labels[idx_w])
            loss.backward()
            weights.step(lr)
            alphas.zero_grad()
            correct += int(np.sum(np.argmax(logits.data, axis=1) == weight_half.labels[idx_w]))
            pos += len(idx_w)
            steps += 1
            state.batch_size = governor_step(state.batch_size, steps, TRAIN_STEP, cfg.policy, memory)
        net.eval()
        val = evaluate(net, alpha_half, aug)
        record = EpochRecord(state.epoch, state.cycle, "grace" if grace else "joint", correct / n_w, val,
                             state.batch_size, lr, skip, pool, conv, sim)
        state.metrics.epochs.append(record)
        state.metrics.timing.append(TimingRecord(state.cycle, state.epoch, time.perf_counter() - started))
        state.epoch += 1
        if progress:
            progress(f"cycle {state.cycle} epoch {e + 1}/{spec.epochs} {record.phase} "
                     f"train {record.train_acc:.3f} val {val:.3f} batch {state.batch_size} lr {lr:.4f}")


def _prune_and_replace(state: SearchState) -> int:
    cfg = state.config
    spec = cfg.schedule[state.cycle]
    final = state.cycle == len(cfg.schedule) - 1
    exhausted = 0
    if final:
        state.final_alphas = {"normal": state.normal.to_dict(), "reduction": state.reduction.to_dict()}
    for cell in (state.normal, state.reduction):
        for key, pool in list(cell.edges.items()):
            keep = spec.keep
            if keep > len(pool):
                log.warning("cycle %d edge %s/%s: pool has %d candidates, fewer than keep=%d",
                            state.cycle, cell.kind, key, len(pool), keep)
                keep = len(pool)
            pruned = prune_edge(pool, max(keep, 1), final)
            grown, report = replace_edge(pruned, spec.morphisms, cfg.constraints, state.network.store,
                                         state.rng, _edge_locations(state, cell.kind, key), cfg.retries)
            if report.exhausted:
                exhausted += 1
                log.warning("cycle %d edge %s/%s: %d of %d children missing", state.cycle, cell.kind, key,
                            report.missing, spec.morphisms)
            cell.edges[key] = grown
    state.network.sync()
    return exhausted


def _record_cycle(state: SearchState, exhausted: int) -> None:
    spec = state.config.schedule[state.cycle]
    skip, pool, conv = op_kind_ratios(state.normal, state.reduction)
    sims = []
    for cell in (state.normal, state.reduction):
        sims.append(cell_similarity(cell) if len(cell.candidates()) >= 2 else 1.0)
    state.metrics.cycles.append(CycleRecord(state.cycle, spec.epochs, spec.candidates, skip, pool, conv,
                                            sims[0], sims[1], exhausted))


def checkpoint_path(run_dir, cycle: Optional[int] = None) -> Path:
    base = Path(run_dir) / "checkpoints"
    return base / ("latest.json" if cycle is None else f"cycle_{cycle:02d}.json")


def write_outputs(state: SearchState, run_dir) -> None:
    run_dir = Path(run_dir)
    export_curves(state.metrics, run_dir / "metrics")
    if state.finalized is not None:
        for cell in state.finalized:
            write_cell(cell, run_dir / "final", cell.kind)


def run_search(config: SearchConfig, weight_half: LabeledImageSet, alpha_half: LabeledImageSet,
               run_dir=None, resume: bool = False, progress: Optional[Callable[[str], None]] = None,
               stop_after: Optional[int] = None) -> SearchResult:
    """Run every remaining cycle; with ``run_dir``, checkpoint and export after each cycle.

    ``stop_after`` ends the call after that many cycles (a later ``resume``
    continues bit-identically).
    """
    if len(weight_half) == 0 or len(alpha_half) == 0:
        raise ValueError("both data halves must be non-empty")
    if weight_half.class_count != alpha_half.class_count:
        raise ValueError("data halves disagree on the class count")
    if config.schedule[0].keep > len(initial_candidates()):
        raise ScheduleError("first cycle keeps more candidates than the initial pool holds")
    shape = weight_half.images.shape[1:]
    state = None
    if resume and run_dir is not None and checkpoint_path(run_dir).exists():
        state = SearchState.load(checkpoint_path(run_dir), config)
    if state is None:
        state = SearchState.fresh(config, weight_half.class_count, shape)
    aug = _search_augment(config, concat_halves(weight_half, alpha_half))
    ran = 0
    while state.cycle < len(config.schedule) and (stop_after is None or ran < stop_after):
        _run_cycle(state, weight_half, alpha_half, aug, progress)
        exhausted = _prune_and_replace(state)
        _record_cycle(state, exhausted)
        if run_dir is not None:
            for cell in (state.normal, state.reduction):
                write_cell(cell, Path(run_dir) / "cells", f"cycle_{state.cycle:02d}_{cell.kind}")
        state.cycle += 1
        ran += 1
        if state.cycle == len(config.schedule):
            pre = state.final_alphas
            state.finalized = finalize(CellGraph.from_dict(pre["normal"]), CellGraph.from_dict(pre["reduction"]))
        if run_dir is not None:
            state.save(checkpoint_path(run_dir, state.cycle - 1))
            state.save(checkpoint_path(run_dir))
            write_outputs(state, run_dir)
    if state.finalized is None:
        return SearchResult(None, None, state.metrics, state)
    return SearchResult(state.finalized[0], state.finalized[1], state.metrics, state)


def concat_halves(a: LabeledImageSet, b: LabeledImageSet) -> LabeledImageSet:
    return LabeledImageSet(np.concatenate([a.images, b.images]), np.concatenate([a.labels, b.labels]),
                           a.class_count)
