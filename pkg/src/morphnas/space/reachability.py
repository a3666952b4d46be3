"""Breadth-first enumeration of the convolution specs a root can be morphed into."""
from __future__ import annotations

from collections import deque
from typing import Optional

from .morphs import available_morphs, morph_spec
from .specs import PRESET_REFERENCE_TOTALS, PRESETS, CandidateSpec, SpaceConstraints, sep_conv


def reachable_set(root: CandidateSpec, constraints: SpaceConstraints,
                  budget: Optional[int] = None) -> set[CandidateSpec]:
    """Specs within ``budget`` morph steps of ``root`` (root included).

    Specs combining kernel 1 with dilation > 1 are never produced by a legal
    morph, so the closure excludes them by construction.
    """
    budget = constraints.morph_step_budget if budget is None else budget
    if budget < 0:
        raise ValueError("budget must be non-negative")
    depth = {root: 0}
    queue = deque([root])
    while queue:
        spec = queue.popleft()
        if depth[spec] == budget:
            continue
        for action in available_morphs(spec, constraints):
            child = morph_spec(spec, action)
            if child not in depth:
                depth[child] = depth[spec] + 1
                queue.append(child)
    return {s for s in depth if not (s.is_conv and s.kernel == 1 and s.dilation > 1)}


def morph_distances(root: CandidateSpec, constraints: SpaceConstraints, budget: int) -> dict[CandidateSpec, int]:
    """Minimum number of morphs from ``root`` to every spec reachable within ``budget``."""
    depth = {root: 0}
    queue = deque([root])
    while queue:
        spec = queue.popleft()
        if depth[spec] == budget:
            continue
        for action in available_morphs(spec, constraints):
            child = morph_spec(spec, action)
            if child not in depth:
                depth[child] = depth[spec] + 1
                queue.append(child)
    return depth


def preset_report(name: str, budget: Optional[int] = None, root: Optional[CandidateSpec] = None) -> dict:
    """Counts under both kernel-step semantics next to the reference total."""
    base = PRESETS[name]
    root = root or sep_conv(3, 1, ())
    counts = {}
    listings = {}
    for semantics in ("adjacent", "jump"):
        specs = reachable_set(root, base.with_kernel_step(semantics), budget)
        counts[semantics] = len(specs)
        listings[semantics] = sorted(s.canonical() for s in specs)
    return {"preset": name, "budget": base.morph_step_budget if budget is None else budget,
            "reference_total": PRESET_REFERENCE_TOTALS[name], "counts": counts, "specs": listings}
