"""Small dense linear algebra, distribution helpers and keyed random streams.

Everything here works on the 4-20 dimensional problems that show up in the
simulation; nothing is tuned for large matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import NotPositiveDefinite, SingularDesign

PIVOT_TOL = 1e-12
REPAIR_FLOOR = 1e-4
IMPUTATION_RIDGE = 1e-5


class RngStream:
    """Random stream identified by ``(master_seed, path)``.

    Two streams with the same seed and path produce the same draws; streams
    with different paths are statistically independent.  The generator is a
    PCG64 seeded through :class:`numpy.random.SeedSequence` with the path as
    its ``spawn_key``, which is exactly what ``SeedSequence.spawn`` does, so
    children never collide with each other or with the root.

    The identity is immutable; the underlying generator state advances as
    draws are taken, so a stream should be owned by one consumer.
    """

    __slots__ = ("_seed", "_path", "_gen")

    def __init__(self, master_seed: int, path: tuple[int, ...] | list[int] = ()):
        seed = int(master_seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {master_seed}")
        path = tuple(int(p) for p in path)
        if any(p < 0 for p in path):
            raise ValueError(f"path entries must be non-negative, got {path}")
        self._seed = seed
        self._path = path
        self._gen: np.random.Generator | None = None

    @property
    def master_seed(self) -> int:
        return self._seed

    @property
    def path(self) -> tuple[int, ...]:
        return self._path

    def child(self, *index: int) -> "RngStream":
        """Return a fresh stream whose path extends this one."""
        return RngStream(self._seed, self._path + tuple(index))

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(self._seed, spawn_key=self._path)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self._seed}, path={self._path})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RngStream):
            return NotImplemented
        return (self._seed, self._path) == (other._seed, other._path)

    def __hash__(self) -> int:
        return hash((self._seed, self._path))


def _as_symmetric(a, tol: float = 1e-12) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=tol):
        raise ValueError("matrix is not symmetric")
    return a


def is_correlation_matrix(a) -> bool:
    a = np.asarray(a, dtype=np.float64)
    return (
        a.ndim == 2
        and a.shape[0] == a.shape[1]
        and np.allclose(a, a.T, rtol=0.0, atol=1e-12)
        and bool(np.all(np.diag(a) == 1.0))
        and bool(np.all(np.abs(a) <= 1.0))
    )


def cholesky(a, tol: float = PIVOT_TOL) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == a``.

    Raises :class:`NotPositiveDefinite` when any pivot (``L[j, j] ** 2``) is
    at or below ``tol``.
    """
    a = _as_symmetric(a)
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > tol:
            raise NotPositiveDefinite(f"pivot {j} is {pivot:.3g} (<= {tol:g})")
        L[j, j] = math.sqrt(pivot)
        if j + 1 < n:
            L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def nearest_pd_repair(a, floor: float = REPAIR_FLOOR, max_iter: int = 500) -> np.ndarray:
    """Clip eigenvalues at ``floor`` and rescale back to a unit diagonal.

    Rescaling can push the smallest eigenvalue slightly under ``floor`` again,
    so clip-and-rescale is repeated until it holds.  Inputs that already meet
    the floor are returned unchanged, which makes the repair idempotent.
    """
    a = _as_symmetric(a)
    out = a.copy()
    for _ in range(max_iter):
        w, v = np.linalg.eigh(out)
        if w[0] >= floor * (1.0 - 1e-9):
            return out
        out = (v * np.maximum(w, floor)) @ v.T
        d = np.sqrt(np.diag(out))
        out = out / np.outer(d, d)
        out = 0.5 * (out + out.T)
        np.fill_diagonal(out, 1.0)
    raise RuntimeError(f"eigenvalue repair did not converge in {max_iter} iterations")


def sample_mvn(corr, n: int, rng: RngStream) -> np.ndarray:
    """Draw ``n`` rows from a zero-mean normal with covariance ``corr``."""
    if n < 1:
        raise ValueError("n must be positive")
    L = cholesky(corr)
    z = rng.generator.standard_normal((n, L.shape[0]))
    return z @ L.T


@dataclass(frozen=True)
class OlsFit:
    coefficients: np.ndarray
    residual_variance: float
    xtx_inverse: np.ndarray
    residual_df: int
    coefficient_variances: np.ndarray = field(repr=False)


def _design(predictors: np.ndarray) -> np.ndarray:
    x = np.asarray(predictors, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return np.column_stack([np.ones(x.shape[0]), x])


def ridged_inverse(xtx: np.ndarray, ridge: float) -> np.ndarray:
    """Inverse of ``xtx + ridge * diag(xtx)``.

    The cross-product matrix is scaled to unit diagonal before factorising,
    so the pivot threshold acts on standardized cross-products.
    """
    d = np.sqrt(np.diag(xtx))
    if np.any(d == 0):
        raise SingularDesign("design has an all-zero column")
    c = xtx / np.outer(d, d)
    c[np.diag_indices_from(c)] += ridge
    try:
        L = cholesky(c)
    except NotPositiveDefinite as exc:
        raise SingularDesign(f"collinear design ({exc})") from None
    Linv = np.linalg.solve(L, np.eye(L.shape[0]))
    cinv = Linv.T @ Linv
    return cinv / np.outer(d, d)


def ols_fit(predictors, outcome, ridge: float = 0.0) -> OlsFit:
    """Least squares of ``outcome`` on an intercept plus ``predictors``."""
    x = _design(predictors)
    y = np.asarray(outcome, dtype=np.float64)
    n, k = x.shape
    if n <= k:
        raise SingularDesign(f"need more than {k} rows, got {n}")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    xtx = x.T @ x
    v = ridged_inverse(xtx, ridge)
    beta = v @ (x.T @ y)
    resid = y - x @ beta
    df = n - k
    sigma2 = float(resid @ resid) / df
    return OlsFit(
        coefficients=beta,
        residual_variance=sigma2,
        xtx_inverse=v,
        residual_df=df,
        coefficient_variances=sigma2 * np.diag(v),
    )


def draw_chi_square(df: int, rng: RngStream) -> float:
    if not df >= 1:
        raise ValueError(f"chi-square df must be >= 1, got {df}")
    return float(rng.generator.chisquare(df))


def draw_std_normal(rng: RngStream) -> float:
    return float(rng.generator.standard_normal())


def t_quantile(p: float, df: float) -> float:
    """Quantile of Student's t; ``df = inf`` gives the normal quantile."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must be in (0, 1), got {p}")
    if not df > 0:
        raise ValueError(f"df must be positive, got {df}")
    if math.isinf(df):
        return float(special.ndtri(p))
    return float(special.stdtrit(df, p))
