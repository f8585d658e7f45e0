"""MCAR amputation under the monotone and non-monotone pattern sets."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import MissingnessPattern, TwoWaveDataset, patterns
from .errors import UnreachableTarget
from .numerics import RngStream


@dataclass(frozen=True)
class AmputationPlan:
    """Incomplete patterns share one probability; the rest goes to complete rows."""

    kind: str
    patterns: tuple[MissingnessPattern, ...]
    per_pattern_probability: float
    complete_probability: float

    def __post_init__(self):
        total = self.complete_probability + len(self.patterns) * self.per_pattern_probability
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"plan probabilities sum to {total}")
        if not (0 <= self.per_pattern_probability <= 1 and 0 <= self.complete_probability <= 1):
            raise ValueError("plan probabilities must lie in [0, 1]")

    def probabilities(self) -> np.ndarray:
        """Complete pattern first, then incomplete patterns in table order."""
        return np.array([self.complete_probability] + [self.per_pattern_probability] * len(self.patterns))

    def expected_missing_fraction(self, n_columns: int = 4) -> float:
        return self.per_pattern_probability * sum(p.n_missing for p in self.patterns) / n_columns

    def describe(self) -> str:
        lines = [f"amputation plan ({self.kind})", f"  x1 y1 x2 y2  probability"]
        lines.append(f"  1  1  1  1   {self.complete_probability:.6f}")
        for p in self.patterns:
            flags = "  ".join(str(int(p.observed[c])) for c in ("x1", "y1", "x2", "y2"))
            lines.append(f"  {flags}   {self.per_pattern_probability:.6f}")
        lines.append(f"  expected missing-cell fraction {self.expected_missing_fraction():.4f}")
        return "\n".join(lines)


def calibrate(kind: str, target_cell_rate: float = 0.20, n_columns: int = 4) -> AmputationPlan:
    """Solve ``p * (sum of missing cells over incomplete patterns) / n_columns = rate``."""
    incomplete = tuple(p for p in patterns(kind) if not p.is_complete)
    if target_cell_rate < 0:
        raise UnreachableTarget("missing-cell rate must be non-negative")
    missing_cells = sum(p.n_missing for p in incomplete)
    # exact arithmetic for clean values like 4/35
    rate = Fraction(target_cell_rate).limit_denominator(10**9)
    p = rate * n_columns / missing_cells
    complete = 1 - len(incomplete) * p
    if complete < 0:
        ceiling = Fraction(missing_cells, len(incomplete) * n_columns)
        raise UnreachableTarget(
            f"{kind}: target {target_cell_rate} exceeds the reachable maximum {float(ceiling):.4f}"
        )
    return AmputationPlan(kind, incomplete, float(p), float(complete))


def amputate(d: TwoWaveDataset, plan: AmputationPlan, rng: RngStream) -> TwoWaveDataset:
    """Assign each row a pattern with one uniform draw and mask accordingly."""
    if not d.is_complete:
        raise ValueError("amputation expects a fully observed dataset")
    cum = np.cumsum(plan.probabilities())
    u = rng.generator.random(d.n)
    choice = np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)
    flags = np.vstack(
        [np.ones(d.p, dtype=bool)] + [p.flags(d.names) for p in plan.patterns]
    )
    values, _ = d.raw()
    return TwoWaveDataset(d.schema, values, flags[choice])
