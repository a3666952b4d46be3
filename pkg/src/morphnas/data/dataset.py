"""Labeled image sets, the CIFAR-10 binary layout, synthetic textures and splits."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

RECORD_BYTES = 3073
CIFAR_SHAPE = (3, 32, 32)
CIFAR_CLASSES = 10


class DataFormatError(ValueError):
    """Raised for malformed dataset files."""


@dataclass
class LabeledImageSet:
    images: np.ndarray  # N x C x H x W, values in [0, 1]
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError("images must be N x C x H x W")
        if len(self.images) == 0:
            raise ValueError("an image set needs at least one image")
        if self.labels.shape != (len(self.images),):
            raise ValueError("one label per image required")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "LabeledImageSet":
        indices = np.asarray(indices)
        return LabeledImageSet(self.images[indices], self.labels[indices], self.class_count)


# ---------------------------------------------------------------- CIFAR-10 binary

def decode_records(raw: bytes, source: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    if len(raw) == 0 or len(raw) % RECORD_BYTES:
        raise DataFormatError(f"{source}: length {len(raw)} is not a positive multiple of {RECORD_BYTES}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_CLASSES)
    if len(bad):
        raise DataFormatError(f"{source}: record {int(bad[0])} has label {int(labels[bad[0]])} > 9")
    return records[:, 1:].reshape(-1, *CIFAR_SHAPE), labels


def load_cifar10_binary(files: Union[str, Path, Sequence[Union[str, Path]]]) -> LabeledImageSet:
    """Read one or more files of 1 label byte + 3072 channel-major pixel bytes per record."""
    if isinstance(files, (str, Path)):
        files = [files]
    pixels, labels = [], []
    for f in files:
        p, l = decode_records(Path(f).read_bytes(), str(f))
        pixels.append(p)
        labels.append(l)
    if not pixels:
        raise DataFormatError("no files given")
    return LabeledImageSet(np.concatenate(pixels) / 255.0, np.concatenate(labels), CIFAR_CLASSES)


def encode_records(data: LabeledImageSet) -> bytes:
    if data.images.shape[1:] != CIFAR_SHAPE:
        raise DataFormatError(f"the binary layout needs 3x32x32 images, got {data.images.shape[1:]}")
    if data.labels.max() >= CIFAR_CLASSES:
        raise DataFormatError("the binary layout stores labels 0..9 only")
    pixels = np.round(np.clip(data.images, 0.0, 1.0) * 255.0).astype(np.uint8).reshape(len(data), -1)
    records = np.concatenate([data.labels.astype(np.uint8)[:, None], pixels], axis=1)
    return records.tobytes()


def write_cifar10_binary(data: LabeledImageSet, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_bytes(encode_records(data))
    return path


# ---------------------------------------------------------------- synthetic textures

def _texture(pattern: int, size: int, period: float, phase: np.ndarray) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    w = 2 * np.pi / period
    if pattern == 0:  # horizontal stripes
        s = np.sin(w * (y + phase[0]))
    elif pattern == 1:  # vertical stripes
        s = np.sin(w * (x + phase[1]))
    elif pattern == 2:  # checkerboard
        s = np.sin(w * (y + phase[0])) * np.sin(w * (x + phase[1]))
    else:  # diagonal cross-hatch
        s = np.sin(w * (x + y + phase[0]) / np.sqrt(2)) * np.sin(w * (x - y + phase[1]) / np.sqrt(2))
    return (s > 0).astype(np.float64)


def synthetic_dataset(classes: int = 4, n: int = 512, size: int = 16, seed=0,
                      noise: float = 0.15) -> LabeledImageSet:
    """Balanced, deterministic texture classes.

    Class ``c`` draws pattern ``c % 4`` in frequency band ``c // 4`` with a
    random phase and random foreground/background colours, so no single
    pixel (or linear mix of pixels) identifies the class.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    if n < 1 or size < 4:
        raise ValueError("need n >= 1 and size >= 4")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)
    images = np.empty((n, 3, size, size))
    for idx, c in enumerate(labels):
        band = int(c) // 4
        period = rng.uniform(3.0, 5.0) + 3.0 * band
        pattern = _texture(int(c) % 4, size, period, rng.uniform(0, period, size=2))
        fg, bg = rng.uniform(0.55, 1.0, 3), rng.uniform(0.0, 0.45, 3)
        if rng.random() < 0.5:
            fg, bg = bg, fg
        img = bg[:, None, None] + (fg - bg)[:, None, None] * pattern[None]
        images[idx] = np.clip(img + rng.normal(0.0, noise, img.shape), 0.0, 1.0)
    return LabeledImageSet(images, labels, classes)


# ---------------------------------------------------------------- splits and batches

def split_half(data: LabeledImageSet, seed=0) -> tuple[LabeledImageSet, LabeledImageSet]:
    """Disjoint, label-stratified halves; the first gets the extra sample when N is odd."""
    if len(data) < 2:
        raise ValueError("need at least two samples to split")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(data.labels == c)) for c in range(data.class_count)])
    first, second = np.sort(order[0::2]), np.sort(order[1::2])
    return data.subset(first), data.subset(second)


def stratified_split(data: LabeledImageSet, fraction: float, seed=0) -> tuple[LabeledImageSet, LabeledImageSet]:
    """Hold out roughly ``fraction`` of every class (used for train/test splits)."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    keep, held = [], []
    for c in range(data.class_count):
        idx = rng.permutation(np.flatnonzero(data.labels == c))
        k = int(round(len(idx) * fraction))
        held.append(idx[:k])
        keep.append(idx[k:])
    return data.subset(np.sort(np.concatenate(keep))), data.subset(np.sort(np.concatenate(held)))


def batch_indices(n: int, batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator[np.ndarray]:
    """Shuffled (or sequential when ``rng`` is None) index batches covering all ``n`` samples."""
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def concat_sets(sets: Iterable[LabeledImageSet]) -> LabeledImageSet:
    sets = list(sets)
    return LabeledImageSet(np.concatenate([s.images for s in sets]), np.concatenate([s.labels for s in sets]),
                           max(s.class_count for s in sets))
