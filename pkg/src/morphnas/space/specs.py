"""Candidate operation descriptions and their canonical string form.

Grammar of the canonical form (used for logs, weight-store keys and exports)::

    identity := "id"
    pool     := ("max" | "avg") "_k" INT
    conv     := "conv_k" INT "_d" INT "_m[" [INT ("," INT)*] "]"
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

IDENTITY = "identity"
MAX_POOL = "max-pool"
AVG_POOL = "avg-pool"
SEP_CONV = "sep-conv"
KINDS = (IDENTITY, MAX_POOL, AVG_POOL, SEP_CONV)

_CONV_RE = re.compile(r"conv_k(\d+)_d(\d+)_m\[((?:\d+(?:,\d+)*)?)\]")
_POOL_RE = re.compile(r"(max|avg)_k(\d+)")


@dataclass(frozen=True, order=True)
class CandidateSpec:
    kind: str
    kernel: Optional[int] = None
    dilation: Optional[int] = None
    mult: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown candidate kind {self.kind!r}")
        object.__setattr__(self, "mult", tuple(int(m) for m in self.mult))
        if self.kind == IDENTITY:
            if self.kernel is not None or self.dilation is not None or self.mult:
                raise ValueError("identity takes no kernel, dilation or expansion")
            return
        if self.kernel is None or self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be a positive odd int, got {self.kernel}")
        if self.kind in (MAX_POOL, AVG_POOL):
            if self.dilation is not None or self.mult:
                raise ValueError("pools take no dilation or expansion")
            return
        if self.dilation is None or self.dilation < 1:
            raise ValueError(f"dilation must be positive, got {self.dilation}")
        if any(m < 1 for m in self.mult):
            raise ValueError(f"expansion multiples must be >= 1, got {self.mult}")

    @property
    def family(self) -> str:
        """Coarse type used by ratios and similarity: ``id``, ``pool`` or ``conv``."""
        if self.kind == IDENTITY:
            return "id"
        if self.kind == SEP_CONV:
            return "conv"
        return "pool"

    @property
    def is_conv(self) -> bool:
        return self.kind == SEP_CONV

    def canonical(self) -> str:
        if self.kind == IDENTITY:
            return "id"
        if self.kind == MAX_POOL:
            return f"max_k{self.kernel}"
        if self.kind == AVG_POOL:
            return f"avg_k{self.kernel}"
        return f"conv_k{self.kernel}_d{self.dilation}_m[{','.join(map(str, self.mult))}]"

    def __str__(self) -> str:
        return self.canonical()

    def replace(self, **changes) -> "CandidateSpec":
        values = {"kind": self.kind, "kernel": self.kernel, "dilation": self.dilation, "mult": self.mult}
        values.update(changes)
        return CandidateSpec(**values)


def parse_spec(text: str) -> CandidateSpec:
    """Inverse of :meth:`CandidateSpec.canonical`; rejects anything non-canonical."""
    if text == "id":
        return CandidateSpec(IDENTITY)
    m = _POOL_RE.fullmatch(text)
    if m:
        spec = CandidateSpec(MAX_POOL if m.group(1) == "max" else AVG_POOL, int(m.group(2)))
    else:
        m = _CONV_RE.fullmatch(text)
        if not m:
            raise ValueError(f"not a canonical candidate string: {text!r}")
        mult = tuple(int(v) for v in m.group(3).split(",")) if m.group(3) else ()
        spec = CandidateSpec(SEP_CONV, int(m.group(1)), int(m.group(2)), mult)
    if spec.canonical() != text:
        # leading zeros and similar spellings are not canonical
        raise ValueError(f"not a canonical candidate string: {text!r}")
    return spec


def identity() -> CandidateSpec:
    return CandidateSpec(IDENTITY)


def max_pool(kernel: int = 3) -> CandidateSpec:
    return CandidateSpec(MAX_POOL, kernel)


def avg_pool(kernel: int = 3) -> CandidateSpec:
    return CandidateSpec(AVG_POOL, kernel)


def sep_conv(kernel: int = 3, dilation: int = 1, mult=()) -> CandidateSpec:
    return CandidateSpec(SEP_CONV, kernel, dilation, tuple(mult))


def initial_candidates() -> list[CandidateSpec]:
    """The starting pool of every edge: two poolings, identity, one plain 3x3 separable conv."""
    return [max_pool(3), avg_pool(3), identity(), sep_conv(3, 1, ())]


@dataclass(frozen=True)
class SpaceConstraints:
    """Bounds on how far a convolution candidate may be morphed.

    ``None`` for the expansion bounds means unbounded. ``kernel_step`` picks
    the kernel-morph semantics: ``"adjacent"`` moves one odd size at a time,
    ``"jump"`` may move to any other allowed odd size in one step.
    """

    kernel_min: int = 3
    kernel_max: int = 7
    dilation_min: int = 1
    dilation_max: int = 2
    max_expansion_depth: Optional[int] = 1
    max_expansion_width: Optional[int] = 1
    morph_step_budget: int = 5
    kernel_step: str = "adjacent"

    def __post_init__(self):
        if self.kernel_min % 2 == 0 or self.kernel_max % 2 == 0 or not 1 <= self.kernel_min <= self.kernel_max:
            raise ValueError("kernel bounds must be odd with 1 <= min <= max")
        if not 1 <= self.dilation_min <= self.dilation_max:
            raise ValueError("dilation bounds must satisfy 1 <= min <= max")
        for bound in (self.max_expansion_depth, self.max_expansion_width):
            if bound is not None and bound < 0:
                raise ValueError("expansion bounds must be non-negative")
        if self.morph_step_budget < 0:
            raise ValueError("morph_step_budget must be non-negative")
        if self.kernel_step not in ("adjacent", "jump"):
            raise ValueError(f"kernel_step must be 'adjacent' or 'jump', got {self.kernel_step!r}")

    def with_kernel_step(self, kernel_step: str) -> "SpaceConstraints":
        return SpaceConstraints(self.kernel_min, self.kernel_max, self.dilation_min, self.dilation_max,
                                self.max_expansion_depth, self.max_expansion_width,
                                self.morph_step_budget, kernel_step)

    def allows(self, spec: CandidateSpec) -> bool:
        """Whether a conv spec lies inside the box (pools and identity always do)."""
        if not spec.is_conv:
            return True
        if not (self.kernel_min <= spec.kernel <= self.kernel_max):
            return False
        if not (self.dilation_min <= spec.dilation <= self.dilation_max):
            return False
        if spec.kernel == 1 and spec.dilation > 1:
            return False  # a dilated 1x1 kernel is the undilated one
        if self.max_expansion_depth is not None and len(spec.mult) > self.max_expansion_depth:
            return False
        if self.max_expansion_width is not None and any(m > self.max_expansion_width for m in spec.mult):
            return False
        return True


PRESETS = {
    "DL": SpaceConstraints(3, 7, 1, 2, 1, 1),
    "DR": SpaceConstraints(1, 7, 1, 2, 1, 5),
    "UR": SpaceConstraints(1, 7, 1, 2, None, None),
}

# Totals printed for the three presets, used as reference values by the tooling.
PRESET_REFERENCE_TOTALS = {"DL": 12, "DR": 36, "UR": 80}


def preset(name: str) -> SpaceConstraints:
    try:
        return PRESETS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown constraint preset {name!r}; choose from {sorted(PRESETS)}") from None
