"""Combining rules for independent and two-level nested imputations.

Flat (m datasets)::

    Qbar = mean(Q_k)            Ubar = mean(U_k)
    B    = sum (Q_k - Qbar)^2 / (m - 1)
    T    = Ubar + (1 + 1/m) B
    1/nu = [(1 + 1/m) B / T]^2 / (m - 1)

Nested (m1 nests of m2)::

    Qbar_k = mean over nest k
    W      = sum_k sum_l (Q_kl - Qbar_k)^2 / (m1 (m2 - 1))
    B      = m2 / (m1 - 1) * sum_k (Qbar_k - Qbar)^2
    T      = Ubar + (1/m2)(1 + 1/m1) B + (1 - 1/m2) W
    1/nu   = [(1/m2)(1 + 1/m1) B / T]^2 / (m1 - 1)
           + [(1 - 1/m2) W / T]^2 / (m1 (m2 - 1))

For m2 = 1 the W terms are taken as 0, so nested pooling reduces to the
flat rules.  nu is ``inf`` when both variance components vanish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TooFewDatasets
from .numerics import t_quantile

LEVEL = 0.95


@dataclass(frozen=True)
class EstimateGrid:
    """Per-dataset estimates ``q_hat`` and sampling variances ``u_bar``.

    Flat grids are 1-d arrays of length m; nested grids are (m1, m2).
    """

    q_hat: np.ndarray
    u_bar: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q_hat, dtype=np.float64)
        u = np.asarray(self.u_bar, dtype=np.float64)
        if q.shape != u.shape or q.ndim not in (1, 2) or q.size == 0:
            raise ValueError(f"estimate and variance grids must match (got {q.shape} vs {u.shape})")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(u))):
            raise ValueError("grid has non-finite entries")
        if np.any(u < 0):
            raise ValueError("sampling variances must be non-negative")
        object.__setattr__(self, "q_hat", q)
        object.__setattr__(self, "u_bar", u)

    @property
    def nested(self) -> bool:
        return self.q_hat.ndim == 2

    @property
    def shape(self) -> tuple:
        return ("nested", *self.q_hat.shape) if self.nested else ("flat", self.q_hat.shape[0])


@dataclass(frozen=True)
class PooledResult:
    q_bar: float
    u_bar: float
    b: float
    w: float
    t: float
    nu: float
    ci_low: float
    ci_high: float

    @property
    def ci_width(self) -> float:
        return self.ci_high - self.ci_low

    @property
    def se(self) -> float:
        return math.sqrt(self.t)

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("q_bar", "u_bar", "b", "w", "t", "nu", "ci_low", "ci_high")}


def _nu(terms: list[tuple[float, float]], t: float) -> float:
    """``terms`` are (variance component, its df) pairs."""
    inv = 0.0
    for comp, df in terms:
        if comp > 0:
            inv += (comp / t) ** 2 / df
    return math.inf if inv == 0.0 else 1.0 / inv


def _finish(q_bar, u_bar, b, w, t, nu, level) -> PooledResult:
    low, high = _interval(q_bar, t, nu, level)
    return PooledResult(float(q_bar), float(u_bar), float(b), float(w), float(t), float(nu), low, high)


def _interval(q_bar: float, t: float, nu: float, level: float) -> tuple[float, float]:
    if t <= 0:
        return float(q_bar), float(q_bar)
    half = t_quantile((1 + level) / 2, nu) * math.sqrt(t)
    return float(q_bar - half), float(q_bar + half)


def _centred_mean(q: np.ndarray, axis=None):
    # shifting by one entry keeps the mean exact when all estimates agree
    ref = q.flat[0] if axis is None else q[:, :1]
    out = (q - ref).mean(axis=axis)
    return ref + out if axis is None else ref[:, 0] + out


def pool_flat(g: EstimateGrid, level: float = LEVEL) -> PooledResult:
    q = g.q_hat.reshape(-1)
    u = g.u_bar.reshape(-1)
    m = q.size
    if m < 2:
        raise TooFewDatasets(f"pooling needs at least 2 datasets, got {m}")
    q_bar = _centred_mean(q)
    u_bar = u.mean()
    b = float(((q - q_bar) ** 2).sum() / (m - 1))
    between = (1 + 1 / m) * b
    t = u_bar + between
    return _finish(q_bar, u_bar, b, 0.0, t, _nu([(between, m - 1)], t), level)


def pool_nested(g: EstimateGrid, level: float = LEVEL) -> PooledResult:
    q = g.q_hat if g.nested else g.q_hat[:, None]
    u = g.u_bar if g.nested else g.u_bar[:, None]
    m1, m2 = q.shape
    if m1 < 2:
        raise TooFewDatasets(f"nested pooling needs at least 2 nests, got {m1}")
    q_bar = _centred_mean(q)
    u_bar = u.mean()
    nest_means = _centred_mean(q, axis=1)
    b = float(m2 * ((nest_means - q_bar) ** 2).sum() / (m1 - 1))
    w = float(((q - nest_means[:, None]) ** 2).sum() / (m1 * (m2 - 1))) if m2 > 1 else 0.0
    between = (1 / m2) * (1 + 1 / m1) * b
    within = (1 - 1 / m2) * w
    t = u_bar + between + within
    terms = [(between, m1 - 1)]
    if m2 > 1:
        terms.append((within, m1 * (m2 - 1)))
    return _finish(q_bar, u_bar, b, w, t, _nu(terms, t), level)


def pool(g: EstimateGrid, level: float = LEVEL) -> PooledResult:
    return pool_nested(g, level) if g.nested else pool_flat(g, level)


def confidence_interval(r: PooledResult, level: float = LEVEL) -> tuple[float, float]:
    """``Qbar +- t_{(1+level)/2, nu} sqrt(T)``; normal quantile when nu is infinite."""
    return _interval(r.q_bar, r.t, r.nu, level)
