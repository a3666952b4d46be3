"""Training-time augmentation and drop-path sampling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import LabeledImageSet

MAX_DROP_PATH = 0.3


@dataclass(frozen=True)
class AugmentConfig:
    mean: tuple = (0.0, 0.0, 0.0)
    std: tuple = (1.0, 1.0, 1.0)
    flip_probability: float = 0.5
    pad_to: int = 20
    crop_to: int = 16
    cutout_size: Optional[int] = 8

    def __post_init__(self):
        if self.crop_to > self.pad_to:
            raise ValueError("crop_to must not exceed pad_to")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip_probability must lie in [0, 1]")
        if len(self.mean) != len(self.std) or any(s <= 0 for s in self.std):
            raise ValueError("need one positive std per mean")
        if self.cutout_size is not None and self.cutout_size < 0:
            raise ValueError("cutout_size must be non-negative")

    @classmethod
    def for_dataset(cls, data: LabeledImageSet, **kwargs) -> "AugmentConfig":
        """Normalisation statistics measured on ``data``; image size sets crop_to/pad_to defaults."""
        mean, std = channel_stats(data.images)
        size = data.images.shape[-1]
        kwargs.setdefault("crop_to", size)
        kwargs.setdefault("pad_to", size + size // 4)
        kwargs.setdefault("cutout_size", size // 2)
        return cls(tuple(mean), tuple(std), **kwargs)

    def evaluation(self) -> "AugmentConfig":
        """Same normalisation, no random transforms."""
        return AugmentConfig(self.mean, self.std, 0.0, self.crop_to, self.crop_to, None)


def channel_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = images.mean(axis=(0, 2, 3))
    std = images.std(axis=(0, 2, 3))
    return mean, np.where(std > 0, std, 1.0)


def normalize(images: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64)[None, :, None, None]
    std = np.asarray(std, dtype=np.float64)[None, :, None, None]
    return (images - mean) / std


def pad_and_crop(images: np.ndarray, pad_to: int, crop_to: int, offsets: np.ndarray) -> np.ndarray:
    """Zero-pad centred to ``pad_to`` then crop ``crop_to`` at per-image (row, col) ``offsets``."""
    n, c, h, w = images.shape
    before = (pad_to - h) // 2, (pad_to - w) // 2
    padded = np.zeros((n, c, max(pad_to, h), max(pad_to, w)))
    padded[:, :, before[0]:before[0] + h, before[1]:before[1] + w] = images
    out = np.empty((n, c, crop_to, crop_to))
    for i, (r, s) in enumerate(offsets):
        out[i] = padded[i, :, r:r + crop_to, s:s + crop_to]
    return out


def cutout(images: np.ndarray, size: int, centers: np.ndarray) -> np.ndarray:
    """Zero a ``size`` square around each (row, col) centre, clipped at the borders."""
    out = images.copy()
    h, w = images.shape[-2:]
    for i, (cy, cx) in enumerate(centers):
        y0, y1 = max(0, cy - size // 2), min(h, cy - size // 2 + size)
        x0, x1 = max(0, cx - size // 2), min(w, cx - size // 2 + size)
        out[i, :, y0:y1, x0:x1] = 0.0
    return out


def augment(images: np.ndarray, config: AugmentConfig, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """normalize -> maybe flip -> zero pad -> random crop -> maybe cutout."""
    rng = rng if rng is not None else np.random.default_rng()
    x = normalize(images, config.mean, config.std)
    n = len(x)
    if config.flip_probability > 0:
        flip = rng.random(n) < config.flip_probability
        x = np.where(flip[:, None, None, None], x[..., ::-1], x)
    if config.pad_to != x.shape[-1] or config.crop_to != x.shape[-1]:
        span = config.pad_to - config.crop_to + 1
        x = pad_and_crop(x, config.pad_to, config.crop_to, rng.integers(0, span, size=(n, 2)))
    if config.cutout_size:
        x = cutout(x, config.cutout_size, rng.integers(0, x.shape[-1], size=(n, 2)))
    return x


def drop_path_probability(epoch: int, epochs: int, maximum: float = MAX_DROP_PATH) -> float:
    """Linear ramp from 0 at epoch 0 to ``maximum`` at the final epoch."""
    if epochs < 1 or not 0 <= epoch <= epochs:
        raise ValueError("epoch must lie in [0, epochs]")
    return maximum * epoch / epochs


def drop_path_mask(probability: float, rng: np.random.Generator, size=None):
    """Keep decision(s) and the 1/(1-p) rescale for kept paths."""
    if not 0.0 <= probability < 1.0:
        raise ValueError("drop-path probability must lie in [0, 1)")
    scale = 1.0 / (1.0 - probability)
    if probability == 0.0:
        keep = True if size is None else np.ones(size)
        return keep, scale
    draw = rng.random(size)
    keep = bool(draw >= probability) if size is None else (draw >= probability).astype(np.float64)
    return keep, scale
