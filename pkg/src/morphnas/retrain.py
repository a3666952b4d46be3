"""Retraining finalized cells from scratch, plus a fixed convolutional baseline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cell import NORMAL, REDUCTION, CellGraph, Network
from .data import AugmentConfig, LabeledImageSet, drop_path_probability
from .space import fan_in_uniform
from .tensor import SGD, Tensor, conv2d, global_avg_pool, linear, max_pool2d, relu
from .training import evaluate, train_epoch

log = logging.getLogger(__name__)

LONG_RUN_CELLS = 20
LONG_RUN_CHANNELS = 36


class CellMismatchError(ValueError):
    """Cells are not a finalized normal/reduction pair."""


@dataclass(frozen=True)
class RetrainConfig:
    cells: int = 8
    init_channels: int = 16
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.025
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 3e-4
    aux_weight: float = 0.4
    drop_path_max: float = 0.3
    cutout_size: Optional[int] = None  # None: half the image side
    seed: int = 0

    @property
    def long_running(self) -> bool:
        return self.cells >= LONG_RUN_CELLS or self.init_channels >= LONG_RUN_CHANNELS


@dataclass
class RetrainReport:
    test_acc: float
    train_acc: list = field(default_factory=list)
    parameters: int = 0


def cosine(lr_max: float, lr_min: float, fraction: float) -> float:
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + np.cos(np.pi * fraction))


def check_cells(normal: CellGraph, reduction: CellGraph) -> None:
    if normal.kind != NORMAL or reduction.kind != REDUCTION:
        raise CellMismatchError("expected a normal cell and a reduction cell")
    for cell in (normal, reduction):
        if not cell.is_finalized():
            raise CellMismatchError(f"the {cell.kind} cell is not finalized")
    if normal.nodes != reduction.nodes:
        raise CellMismatchError("normal and reduction cells differ in node count")


def build_eval_network(normal: CellGraph, reduction: CellGraph, classes: int, config: RetrainConfig,
                       in_channels: int = 3, rng=None) -> Network:
    check_cells(normal, reduction)
    return Network(normal.copy(), reduction.copy(), config.cells, config.init_channels, classes,
                   in_channels=in_channels, rng=rng, auxiliary=config.aux_weight > 0)


def _fit(model, params, train: LabeledImageSet, test: LabeledImageSet, config: RetrainConfig, rng,
         on_epoch: Optional[Callable[[int], None]] = None, aux_weight: float = 0.0,
         progress: Optional[Callable[[str], None]] = None, cutout: bool = True) -> RetrainReport:
    side = train.images.shape[-1]
    aug = AugmentConfig.for_dataset(
        train, cutout_size=(config.cutout_size or side // 2) if cutout else None)
    opt = SGD(params, config.lr, config.momentum, config.weight_decay)
    report = RetrainReport(0.0)
    for e in range(config.epochs):
        if on_epoch:
            on_epoch(e)
        lr_for = lambda f, e=e: cosine(config.lr, config.lr_min, (e + f) / config.epochs)
        if hasattr(model, "train"):
            model.train()
        acc = train_epoch(model, opt, train, aug, config.batch_size, rng, lr_for, aux_weight)
        report.train_acc.append(acc)
        if progress:
            progress(f"epoch {e + 1}/{config.epochs} train {acc:.3f}")
    if hasattr(model, "eval"):
        model.eval()
    report.test_acc = evaluate(model, test, aug)
    report.parameters = int(sum(p.size for p in params))
    return report


def retrain(normal: CellGraph, reduction: CellGraph, train: LabeledImageSet, test: LabeledImageSet,
            config: RetrainConfig = RetrainConfig(), progress: Optional[Callable[[str], None]] = None
            ) -> RetrainReport:
    """Train the evaluation network built from the cells; report test accuracy."""
    if config.long_running:
        log.warning("%d cells x %d channels is a long-running configuration on numpy", config.cells,
                    config.init_channels)
    rng = np.random.default_rng(config.seed)
    net = build_eval_network(normal, reduction, train.class_count, config, train.images.shape[1], rng)

    def schedule_drop_path(e: int) -> None:
        net.drop_path_prob = drop_path_probability(e, config.epochs, config.drop_path_max)

    return _fit(net, net.weight_parameters(), train, test, config, rng, schedule_drop_path,
                config.aux_weight, progress)


class ConvBaseline:
    """conv3x3 -> ReLU -> max-pool/2 -> conv3x3 -> ReLU -> global pool -> linear."""

    def __init__(self, classes: int, in_channels: int = 3, width: int = 16, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w1 = Tensor(fan_in_uniform((width, in_channels, 3, 3), rng), requires_grad=True)
        self.w2 = Tensor(fan_in_uniform((2 * width, width, 3, 3), rng), requires_grad=True)
        self.w3 = Tensor(fan_in_uniform((classes, 2 * width), rng), requires_grad=True)
        self.bias = Tensor(np.zeros(classes), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.w2, self.w3, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        h = max_pool2d(relu(conv2d(x, self.w1)), 3, 2)
        h = relu(conv2d(h, self.w2))
        return linear(global_avg_pool(h), self.w3, self.bias)


def train_baseline(train: LabeledImageSet, test: LabeledImageSet, config: RetrainConfig = RetrainConfig(),
                   width: int = 16) -> RetrainReport:
    """Reference accuracy under the same optimizer, schedule and augmentation."""
    rng = np.random.default_rng(config.seed)
    model = ConvBaseline(train.class_count, train.images.shape[1], width, rng)
    return _fit(model, model.parameters(), train, test, config, rng)
