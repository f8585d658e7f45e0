"""Re-imputation, nested imputation and appended imputation of two-wave data.

Random streams are laid out so that nested and appended runs with the same
base stream share every draw: stage 1 chain ``k`` uses ``rng.child(1, k)``
and stage 2 chain ``l`` of nest ``k`` uses ``rng.child(2, k, l)``.  Appended
imputation is therefore exactly the first member of each nest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

from .data import CompletedCollection, TwoWaveDataset
from .imputer import DEFAULT_DONORS, DEFAULT_ITERATIONS, ImputationSpec, impute_chains
from .numerics import IMPUTATION_RIDGE, RngStream

Kind = Literal["reimpute", "nested", "appended"]
STRATEGIES: tuple[str, ...] = ("reimpute", "nested", "appended")


@dataclass(frozen=True)
class StrategyConfig:
    kind: Kind
    m: int = 5
    m1: int = 5
    m2: int = 5
    method: str = "norm"
    iterations: int = DEFAULT_ITERATIONS
    donors: int = DEFAULT_DONORS
    ridge: float = IMPUTATION_RIDGE

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.kind == "appended":
            object.__setattr__(self, "m2", 1)
        if self.kind == "nested" and self.m2 < 2:
            raise ValueError("nested imputation needs m2 >= 2; use appended for m2 = 1")
        if min(self.m, self.m1, self.m2, self.iterations) < 1:
            raise ValueError("m, m1, m2 and iterations must be positive")

    @property
    def n_datasets(self) -> int:
        return self.m if self.kind == "reimpute" else self.m1 * self.m2


def _incomplete(d: TwoWaveDataset, names: Sequence[str]) -> list[str]:
    mask = d.mask
    return [c for c in names if not mask[:, d.schema.index(c)].all()]


def _spec(targets, predictors: dict, cfg: StrategyConfig, methods: dict | None, m: int) -> ImputationSpec:
    method = methods or {}
    return ImputationSpec(
        tuple(targets),
        predictors,
        {t: method.get(t, cfg.method) for t in targets},
        iterations=cfg.iterations,
        m=m,
        donors=cfg.donors,
        ridge=cfg.ridge,
    )


def reimpute_spec(d: TwoWaveDataset, cfg: StrategyConfig, methods=None) -> ImputationSpec:
    """Impute every incomplete column from every other column of both waves."""
    columns = d.names
    targets = _incomplete(d, columns)
    return _spec(targets, {t: [c for c in columns if c != t] for t in targets}, cfg, methods, cfg.m)


def stage_specs(d: TwoWaveDataset, cfg: StrategyConfig, methods=None):
    """(stage-1 spec on the t1 block, stage-2 spec for t2 targets on all columns)."""
    columns = d.names
    t1 = [c for c in columns if c in d.schema.wave_names("t1")]
    t2 = [c for c in columns if c in d.schema.wave_names("t2")]
    s1_targets = _incomplete(d, t1)
    s2_targets = _incomplete(d, t2)
    s1 = _spec(s1_targets, {t: [c for c in t1 if c != t] for t in s1_targets}, cfg, methods, cfg.m1)
    s2 = _spec(s2_targets, {t: [c for c in columns if c != t] for t in s2_targets}, cfg, methods, cfg.m2)
    return s1, s2


def run_reimpute(d: TwoWaveDataset, cfg: StrategyConfig, rng: RngStream, methods=None) -> CompletedCollection:
    """Chain ``c`` draws from ``rng.child(c)``."""
    spec = reimpute_spec(d, cfg, methods)
    streams = [rng.child(c) for c in range(cfg.m)]
    return CompletedCollection(("flat", cfg.m), impute_chains(d, spec, streams))


def stage_one(d: TwoWaveDataset, cfg: StrategyConfig, rng: RngStream, methods=None) -> list[TwoWaveDataset]:
    """m1 completions of the t1 block; t2 columns are not looked at."""
    s1, _ = stage_specs(d, cfg, methods)
    t1 = d.select(d.schema.wave_names("t1"))
    return impute_chains(t1, s1, [rng.child(1, k) for k in range(cfg.m1)])


def run_staged(d: TwoWaveDataset, cfg: StrategyConfig, rng: RngStream, methods=None) -> CompletedCollection:
    """Nested (m1 x m2) or appended (flat m1) imputation.

    Stage 1 imputes the t1 block from t1 columns only.  Each completed t1
    block is joined to the original incomplete t2 block and the t2 targets
    are imputed m2 times with all columns as predictors.
    """
    if cfg.kind == "reimpute":
        raise ValueError("run_staged handles nested and appended imputation")
    _, s2 = stage_specs(d, cfg, methods)
    t1_blocks = stage_one(d, cfg, rng, methods)
    source, mask = d.raw()
    nests = []
    for k, block in enumerate(t1_blocks):
        values = source.copy()
        for c in block.names:
            values[:, d.schema.index(c)] = block.column(c)
        partial_mask = mask.copy()
        partial_mask[:, [d.schema.index(c) for c in block.names]] = True
        partial = TwoWaveDataset(d.schema, values, partial_mask)
        nests.append(impute_chains(partial, s2, [rng.child(2, k, l) for l in range(cfg.m2)]))
    if cfg.kind == "appended":
        return CompletedCollection(("flat", cfg.m1), [nest[0] for nest in nests])
    return CompletedCollection(("nested", cfg.m1, cfg.m2), nests)


def run_strategy(d: TwoWaveDataset, cfg: StrategyConfig, rng: RngStream, methods=None) -> CompletedCollection:
    if cfg.kind == "reimpute":
        return run_reimpute(d, cfg, rng, methods)
    return run_staged(d, cfg, rng, methods)
