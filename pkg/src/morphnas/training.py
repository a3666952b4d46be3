"""Shared training and evaluation loops."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .data import AugmentConfig, LabeledImageSet, augment, batch_indices
from .tensor import Tensor, cross_entropy, no_grad


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def predict(model: Callable, data: LabeledImageSet, config: AugmentConfig, batch_size: int = 64) -> np.ndarray:
    """Logits of ``model`` on normalised, unaugmented images."""
    plain = config.evaluation()
    outs = []
    with no_grad():
        for idx in batch_indices(len(data), batch_size):
            out = model(Tensor(augment(data.images[idx], plain)))
            outs.append((out[0] if isinstance(out, tuple) else out).data)
    return np.concatenate(outs)


def evaluate(model: Callable, data: LabeledImageSet, config: AugmentConfig, batch_size: int = 64) -> float:
    return accuracy(predict(model, data, config, batch_size), data.labels)


def batch_loss(model: Callable, images: np.ndarray, labels: np.ndarray, aux_weight: float = 0.0):
    """Cross-entropy (plus weighted auxiliary loss) and the main logits."""
    out = model(Tensor(images))
    if isinstance(out, tuple):
        logits, aux = out
        loss = cross_entropy(logits, labels)
        if aux_weight:
            loss = loss + cross_entropy(aux, labels) * aux_weight
        return loss, logits
    return cross_entropy(out, labels), out


def train_epoch(model: Callable, optimizer, data: LabeledImageSet, config: AugmentConfig, batch_size: int,
                rng: np.random.Generator, lr_for: Optional[Callable[[float], float]] = None,
                aux_weight: float = 0.0) -> float:
    """One pass over ``data``; returns training accuracy on the augmented batches."""
    correct = 0
    batches = list(batch_indices(len(data), batch_size, rng))
    for b, idx in enumerate(batches):
        x = augment(data.images[idx], config, rng)
        optimizer.zero_grad()
        loss, logits = batch_loss(model, x, data.labels[idx], aux_weight)
        loss.backward()
        optimizer.step(lr_for(b / len(batches)) if lr_for else None)
        correct += int(np.sum(np.argmax(logits.data, axis=1) == data.labels[idx]))
    return correct / len(data)
