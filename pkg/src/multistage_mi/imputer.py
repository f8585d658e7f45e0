"""Bayesian linear regression and predictive mean matching inside chained equations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _backend
from ._sweep_py import NORM, PMM, norm_core, pmm_core
from .data import CompletedCollection, TwoWaveDataset
from .errors import EmptyColumn, SchemaError, TooFewObserved
from .numerics import IMPUTATION_RIDGE, RngStream

METHODS = {"norm": NORM, "pmm": PMM}
DEFAULT_ITERATIONS = 10
DEFAULT_DONORS = 5

__all__ = [
    "ImputationSpec",
    "norm_draw",
    "pmm_draw",
    "norm_core",
    "pmm_core",
    "chained_impute",
]


@dataclass(frozen=True)
class ImputationSpec:
    targets: tuple[str, ...]
    predictors: Mapping[str, tuple[str, ...]]
    method: Mapping[str, str] = field(default_factory=dict)
    iterations: int = DEFAULT_ITERATIONS
    m: int = 5
    donors: int = DEFAULT_DONORS
    ridge: float = IMPUTATION_RIDGE

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "predictors", {t: tuple(self.predictors.get(t, ())) for t in self.targets})
        object.__setattr__(self, "method", {t: self.method.get(t, "norm") for t in self.targets})
        for t in self.targets:
            if t in self.predictors[t]:
                raise SchemaError(f"target {t!r} listed among its own predictors")
            if self.method[t] not in METHODS:
                raise SchemaError(f"unknown imputation method {self.method[t]!r} for {t!r}")
        if self.iterations < 1 or self.m < 1 or self.donors < 1:
            raise ValueError("iterations, m and donors must be positive")

    @classmethod
    def all_others(cls, targets: Sequence[str], columns: Sequence[str], method: str = "norm", **kw) -> "ImputationSpec":
        """Every other listed column predicts each target."""
        preds = {t: tuple(c for c in columns if c != t) for t in targets}
        return cls(tuple(targets), preds, {t: method for t in targets}, **kw)

    def check(self, d: TwoWaveDataset) -> None:
        names = set(d.names)
        for t in self.targets:
            missing = [c for c in (t, *self.predictors[t]) if c not in names]
            if missing:
                raise SchemaError(f"columns {missing} not in dataset")
        mask = d.mask
        for t in self.targets:
            for c in self.predictors[t]:
                if c not in self.targets and not mask[:, d.schema.index(c)].all():
                    raise SchemaError(f"predictor {c!r} has missing values but is not imputed")


def norm_draw(x_obs, y_obs, x_mis, rng: RngStream, ridge: float = IMPUTATION_RIDGE) -> np.ndarray:
    """Impute ``x_mis`` rows from a posterior draw of the normal linear model.

    Draws ``g ~ chi2(n_obs - q - 1)``, sets ``sigma*^2 = SSE / g``, draws
    ``beta* = beta_hat + sigma* chol(V) z`` and returns
    ``x_mis beta* + sigma* eps``.
    """
    x_obs, y_obs, x_mis = _as_design(x_obs, y_obs, x_mis)
    q = x_obs.shape[1]
    if x_obs.shape[0] < q + 3:
        raise TooFewObserved(f"{x_obs.shape[0]} observed rows for {q} predictors")
    gen = rng.generator
    g = gen.chisquare(x_obs.shape[0] - q - 1)
    z = gen.standard_normal(q + 1)
    eps = gen.standard_normal(x_mis.shape[0])
    return norm_core(x_obs, y_obs, x_mis, g, z, eps, ridge)


def pmm_draw(x_obs, y_obs, x_mis, rng: RngStream, donors: int = DEFAULT_DONORS, ridge: float = IMPUTATION_RIDGE) -> np.ndarray:
    """Impute by borrowing observed values from the ``donors`` closest predicted means."""
    x_obs, y_obs, x_mis = _as_design(x_obs, y_obs, x_mis)
    q = x_obs.shape[1]
    if x_obs.shape[0] < max(donors, q + 3):
        raise TooFewObserved(f"{x_obs.shape[0]} observed rows for {q} predictors and {donors} donors")
    gen = rng.generator
    g = gen.chisquare(x_obs.shape[0] - q - 1)
    z = gen.standard_normal(q + 1)
    u = gen.random(x_mis.shape[0])
    return pmm_core(x_obs, y_obs, x_mis, g, z, u, donors, ridge)


def _as_design(x_obs, y_obs, x_mis):
    x_obs = np.asarray(x_obs, dtype=np.float64)
    x_mis = np.asarray(x_mis, dtype=np.float64)
    if x_obs.ndim == 1:
        x_obs = x_obs[:, None]
    if x_mis.ndim == 1:
        x_mis = x_mis.reshape(-1, x_obs.shape[1])
    return x_obs, np.asarray(y_obs, dtype=np.float64), x_mis


class _ChainPlan:
    """Index arrays handed to the sweep kernel for one dataset/spec pair."""

    def __init__(self, d: TwoWaveDataset, spec: ImputationSpec):
        spec.check(d)
        values, mask = d.raw()
        self.values = values
        self.observed = np.ascontiguousarray(mask, dtype=np.uint8)
        self.targets = np.array([d.schema.index(t) for t in spec.targets], dtype=np.int64)
        preds = [[d.schema.index(c) for c in spec.predictors[t]] for t in spec.targets]
        self.pred_ptr = np.cumsum([0] + [len(p) for p in preds]).astype(np.int64)
        flat = [i for p in preds for i in p]
        self.pred_idx = np.array(flat or [0], dtype=np.int64)
        self.methods = np.array([METHODS[spec.method[t]] for t in spec.targets], dtype=np.int64)
        self.n_obs = mask[:, self.targets].sum(axis=0)
        self.q = np.diff(self.pred_ptr)
        self.mis_rows = [np.flatnonzero(~mask[:, t]) for t in self.targets]
        self.obs_rows = [np.flatnonzero(mask[:, t]) for t in self.targets]
        for t, n_obs, q, method in zip(spec.targets, self.n_obs, self.q, self.methods):
            if n_obs == 0:
                raise EmptyColumn(f"column {t!r} has no observed values")
            need = q + 3 if method == NORM else max(q + 3, spec.donors)
            if n_obs < need:
                raise TooFewObserved(f"column {t!r}: {n_obs} observed rows, need {need}")
        self.n_mis_max = max([len(r) for r in self.mis_rows] + [1])
        self.any_pmm = bool(np.any(self.methods == PMM))


def _run_one_chain(plan: _ChainPlan, spec: ImputationSpec, rng: RngStream, run_chain) -> np.ndarray:
    gen = rng.generator
    work = np.array(plan.values, dtype=np.float64, order="C")
    # start from random draws of each target's observed values
    for j, t in enumerate(plan.targets):
        mis = plan.mis_rows[j]
        if len(mis):
            donors = plan.obs_rows[j][gen.integers(0, len(plan.obs_rows[j]), size=len(mis))]
            work[mis, t] = work[donors, t]
    iters, nt = spec.iterations, len(plan.targets)
    df = (plan.n_obs - plan.q - 1).astype(np.float64)
    chi2 = np.ascontiguousarray(gen.chisquare(df[None, :], size=(iters, nt)))
    z = gen.standard_normal((iters, nt, int(plan.q.max()) + 1))
    noise = gen.standard_normal((iters, nt, plan.n_mis_max))
    if plan.any_pmm:
        u = gen.random((iters, nt, plan.n_mis_max))
        noise[:, plan.methods == PMM, :] = u[:, plan.methods == PMM, :]
    run_chain(
        work, plan.observed, plan.targets, plan.pred_ptr, plan.pred_idx, plan.methods,
        int(spec.donors), float(spec.ridge), chi2, z, noise,
    )
    return work


def impute_chains(d: TwoWaveDataset, spec: ImputationSpec, streams: Sequence[RngStream], run_chain=None) -> list[TwoWaveDataset]:
    """One completed copy of ``d`` per stream."""
    if d.is_complete:
        return [d for _ in streams]
    run_chain = run_chain or _backend.run_chain
    plan = _ChainPlan(d, spec)
    out = []
    for s in streams:
        filled = _run_one_chain(plan, spec, s, run_chain)
        out.append(TwoWaveDataset(d.schema, filled))
    return out


def chained_impute(d: TwoWaveDataset, spec: ImputationSpec, rng: RngStream, run_chain=None) -> CompletedCollection:
    """``spec.m`` independent chains; chain ``c`` draws from ``rng.child(c)``.

    ``run_chain`` overrides the kernel (mainly to compare backends).
    """
    streams = [rng.child(c) for c in range(spec.m)]
    return CompletedCollection(("flat", spec.m), impute_chains(d, spec, streams, run_chain))
