"""Pairwise and group similarity between candidate operations.

Within a family the score is ``(1 + matched) / (1 + n)``. Pools compare
(pool mode, kernel), n = 2; convolutions compare (kernel, dilation,
expansion), n = 3, where the expansion term is fractional: the shared-prefix
length of the two ``mult`` sequences over the longer length.
"""
from __future__ import annotations

from itertools import combinations
from typing import Sequence

from .specs import CandidateSpec


def expansion_match(a: tuple[int, ...], b: tuple[int, ...]) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    prefix = 0
    for x, y in zip(a, b):
        if x != y:
            break
        prefix += 1
    return prefix / longest


def similarity(a: CandidateSpec, b: CandidateSpec) -> float:
    if a.family != b.family:
        return 0.0
    if a.family == "id":
        return 1.0
    if a.family == "pool":
        matched = (a.kind == b.kind) + (a.kernel == b.kernel)
        return (1 + matched) / 3
    matched = (a.kernel == b.kernel) + (a.dilation == b.dilation) + expansion_match(a.mult, b.mult)
    return (1 + matched) / 4


def group_similarity(specs: Sequence[CandidateSpec]) -> float:
    """Mean similarity over all unordered pairs."""
    if len(specs) < 2:
        raise ValueError("group similarity needs at least two candidates")
    pairs = list(combinations(specs, 2))
    return sum(similarity(a, b) for a, b in pairs) / len(pairs)
