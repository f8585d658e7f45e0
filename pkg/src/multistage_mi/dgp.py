"""Correlation scenarios, population truths and sample generation."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data import TwoWaveDataset, WaveSchema
from .numerics import (
    REPAIR_FLOOR,
    NotPositiveDefinite,
    RngStream,
    cholesky,
    nearest_pd_repair,
    sample_mvn,
)

log = logging.getLogger(__name__)

RHO_LEVELS = (0.1, 0.3, 0.5, 0.7)
SCENARIO_IDS = tuple(range(1, 17))
# Cross-lag correlations (y1-x2 and x1-y2) lowered in the last scenario.
SCENARIO16_CROSS_LAG = 0.66
VARIABLES = ("x1", "y1", "x2", "y2")


@dataclass(frozen=True)
class CorrelationScenario:
    id: int
    rho_within: float
    rho_between: float
    rho_cross_lag: float
    matrix: np.ndarray
    printed_matrix: np.ndarray
    repaired: bool

    @property
    def label(self) -> str:
        return f"scenario {self.id} (within={self.rho_within}, between={self.rho_between})"


@dataclass(frozen=True)
class PopulationTruth:
    means: np.ndarray
    coefficients: np.ndarray  # b0, b_x1, b_y1, b_x2

    def as_dict(self) -> dict[str, float]:
        out = {f"mu_{v}": float(m) for v, m in zip(VARIABLES, self.means)}
        for name, b in zip(("b0", "b_x1", "b_y1", "b_x2"), self.coefficients):
            out[name] = float(b)
        return out


def correlation_matrix(rho_within: float, rho_between: float, rho_cross_lag: float | None = None) -> np.ndarray:
    """4x4 matrix in (x1, y1, x2, y2) order."""
    cross = rho_between if rho_cross_lag is None else rho_cross_lag
    s = np.eye(4)
    s[0, 1] = s[1, 0] = rho_within
    s[2, 3] = s[3, 2] = rho_within
    s[0, 2] = s[2, 0] = rho_between  # x1-x2
    s[1, 3] = s[3, 1] = rho_between  # y1-y2
    s[1, 2] = s[2, 1] = cross  # y1-x2
    s[0, 3] = s[3, 0] = cross  # x1-y2
    return s


@lru_cache(maxsize=None)
def scenario(id: int) -> CorrelationScenario:
    """Scenario ``id`` (1-16); rows run over rho_within, then rho_between."""
    if id not in SCENARIO_IDS:
        raise ValueError(f"scenario id must be in 1..16, got {id}")
    within = RHO_LEVELS[(id - 1) // 4]
    between = RHO_LEVELS[(id - 1) % 4]
    cross = SCENARIO16_CROSS_LAG if id == 16 else between
    printed = correlation_matrix(within, between, cross)
    try:
        cholesky(printed)
        matrix, repaired = printed, False
    except NotPositiveDefinite:
        matrix, repaired = nearest_pd_repair(printed, REPAIR_FLOOR), True
        log.warning(
            "scenario %d: printed correlation matrix is not positive definite; "
            "using eigenvalue-clipped repair (min eigenvalue %.3g -> %.3g)",
            id,
            np.linalg.eigvalsh(printed)[0],
            np.linalg.eigvalsh(matrix)[0],
        )
    printed.flags.writeable = False
    matrix.flags.writeable = False
    return CorrelationScenario(id, within, between, cross, matrix, printed, repaired)


def population_truth(s: CorrelationScenario) -> PopulationTruth:
    """Regression of y2 on (x1, y1, x2) implied by the generating matrix."""
    sigma = np.asarray(s.matrix)
    slopes = np.linalg.solve(sigma[:3, :3], sigma[:3, 3])
    return PopulationTruth(means=np.zeros(4), coefficients=np.concatenate([[0.0], slopes]))


def generate(s: CorrelationScenario, n: int, rng: RngStream) -> TwoWaveDataset:
    values = sample_mvn(s.matrix, n, rng)
    return TwoWaveDataset(WaveSchema.simulation(), values)


def scenarios_csv(ids=SCENARIO_IDS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["id", "rho_within", "rho_between", "rho_cross_lag", "repaired", "truth_b_x1", "truth_b_y1", "truth_b_x2"]
    )
    for i in ids:
        s = scenario(i)
        b = population_truth(s).coefficients
        w.writerow([s.id, s.rho_within, s.rho_between, s.rho_cross_lag, str(s.repaired).lower()] + [repr(float(x)) for x in b[1:]])
    return buf.getvalue()
