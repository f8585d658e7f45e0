"""Monte Carlo grid: generate, amputate, impute, analyse, pool, summarise."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import amputation, dgp
from .data import CompletedCollection, TwoWaveDataset
from .errors import MultistageMIError, RunFailed, SingularDesign
from .numerics import RngStream
from .pooling import EstimateGrid, PooledResult, pool_flat, pool_nested
from .strategies import STRATEGIES, StrategyConfig, run_reimpute, run_staged

log = logging.getLogger(__name__)

PARAMETERS = ("b0", "b_x1", "b_y1", "b_x2", "mu_x1", "mu_y1", "mu_x2", "mu_y2")
COEFFICIENTS = PARAMETERS[:4]
MEANS = PARAMETERS[4:]
KINDS = ("monotone", "nonmonotone")
MAX_FAILURE_SHARE = 0.01
DEFAULT_N = 425
DEFAULT_REPS = 500

_KIND_CODE = {k: i for i, k in enumerate(KINDS)}


def _fit_arrays(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analysis model on a stack of complete (n, 4) arrays in (x1, y1, x2, y2) order.

    Returns estimates and sampling variances, each of shape (D, 8).
    """
    D, n, _ = x.shape
    if n <= 5:
        raise ValueError("analysis model needs more than 5 rows")
    design = np.empty((D, n, 4))
    design[:, :, 0] = 1.0
    design[:, :, 1:] = x[:, :, :3]
    y = x[:, :, 3]
    xtx = np.einsum("dni,dnj->dij", design, design)
    scale = np.sqrt(np.einsum("dii->di", xtx))
    c = xtx / (scale[:, :, None] * scale[:, None, :])
    try:
        L = np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        raise SingularDesign("analysis design is collinear") from None
    if np.any(np.einsum("dii->di", L) ** 2 <= 1e-12):
        raise SingularDesign("analysis design is collinear")
    cinv = np.linalg.inv(c)
    inv = cinv / (scale[:, :, None] * scale[:, None, :])
    beta = np.einsum("dij,dj->di", inv, np.einsum("dni,dn->di", design, y))
    resid = y - np.einsum("dni,di->dn", design, beta)
    sigma2 = (resid**2).sum(axis=1) / (n - 4)
    coef_var = sigma2[:, None] * np.einsum("dii->di", inv)
    means = x.mean(axis=1)
    mean_var = x.var(axis=1, ddof=1) / n
    return np.hstack([beta, means]), np.hstack([coef_var, mean_var])


def fit_analysis(d: TwoWaveDataset) -> dict[str, tuple[float, float]]:
    """OLS of y2 on (x1, y1, x2) with intercept, plus the four variable means.

    Each entry is ``(estimate, sampling variance)``; coefficient variances are
    ``sigma^2 diag((X'X)^-1)`` and mean variances ``s^2 / n``.
    """
    arr = d.select(dgp.VARIABLES).to_array()
    est, var = _fit_arrays(arr[None])
    return {p: (float(est[0, i]), float(var[0, i])) for i, p in enumerate(PARAMETERS)}


def pool_collection(c: CompletedCollection) -> dict[str, PooledResult]:
    arrays = np.stack([d.select(dgp.VARIABLES).to_array() for d in c.members()])
    est, var = _fit_arrays(arrays)
    if c.nested:
        m1, m2 = c.shape[1:]
        est, var = est.reshape(m1, m2, -1), var.reshape(m1, m2, -1)
        pooler = pool_nested
    else:
        pooler = pool_flat
    return {p: pooler(EstimateGrid(est[..., i], var[..., i])) for i, p in enumerate(PARAMETERS)}


@dataclass(frozen=True)
class ReplicationResult:
    scenario: int
    missingness: str
    strategy: str
    replication: int
    pooled: dict  # parameter -> PooledResult


@dataclass(frozen=True)
class SimulationSettings:
    n: int = DEFAULT_N
    reps: int = DEFAULT_REPS
    m: int = 5
    m1: int = 5
    m2: int = 5
    iterations: int = 10
    method: str = "norm"
    missing_rate: float = 0.20
    donors: int = 5

    def strategy_config(self, kind: str) -> StrategyConfig:
        return StrategyConfig(
            kind, m=self.m, m1=self.m1, m2=self.m2, method=self.method, iterations=self.iterations, donors=self.donors
        )


def replication_stream(seed: int, scenario: int, kind: str, rep: int) -> RngStream:
    """Children: 0 generate, 1 amputate, 2 re-imputation, 3 nested/appended."""
    return RngStream(seed, (scenario, _KIND_CODE[kind], rep))


def replicate(
    scenario: int,
    kind: str,
    strategies: Sequence[str],
    rep: int,
    seed: int,
    settings: SimulationSettings = SimulationSettings(),
) -> list[ReplicationResult]:
    """One replication of every requested strategy on shared incomplete data."""
    s = dgp.scenario(scenario)
    root = replication_stream(seed, scenario, kind, rep)
    full = dgp.generate(s, settings.n, root.child(0))
    plan = amputation.calibrate(kind, settings.missing_rate)
    data = amputation.amputate(full, plan, root.child(1))
    collections: dict[str, CompletedCollection] = {}
    if "reimpute" in strategies:
        collections["reimpute"] = run_reimpute(data, settings.strategy_config("reimpute"), root.child(2))
    if "nested" in strategies:
        nested = run_staged(data, settings.strategy_config("nested"), root.child(3))
        collections["nested"] = nested
        if "appended" in strategies:
            # same streams, so appended is the first member of every nest
            collections["appended"] = CompletedCollection(("flat", settings.m1), [nest[0] for nest in nested.datasets])
    elif "appended" in strategies:
        collections["appended"] = run_staged(data, settings.strategy_config("appended"), root.child(3))
    return [
        ReplicationResult(scenario, kind, st, rep, pool_collection(collections[st]))
        for st in STRATEGIES
        if st in strategies
    ]


@dataclass
class CellRun:
    scenario: int
    missingness: str
    strategy: str
    results: list = field(default_factory=list)
    failures: int = 0
    errors: list = field(default_factory=list)


def run_grid(
    scenarios: Iterable[int] = dgp.SCENARIO_IDS,
    kinds: Iterable[str] = KINDS,
    strategies: Iterable[str] = STRATEGIES,
    seed: int = 0,
    settings: SimulationSettings = SimulationSettings(),
    threads: int = 1,
    progress=None,
) -> list[CellRun]:
    """Run every (scenario, missingness, strategy) cell for ``settings.reps`` replications.

    Work units are (scenario, missingness, replication); results are gathered
    in submission order, so output does not depend on ``threads``.
    """
    scenarios, kinds = list(scenarios), list(kinds)
    strategies = [s for s in STRATEGIES if s in set(strategies)]
    tasks = [(sc, k, r) for sc in scenarios for k in kinds for r in range(settings.reps)]

    def work(task):
        sc, k, r = task
        try:
            return replicate(sc, k, strategies, r, seed, settings)
        except MultistageMIError as exc:
            return exc

    cells = {(sc, k, st): CellRun(sc, k, st) for sc in scenarios for k in kinds for st in strategies}
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = pool.map(work, tasks)
            _collect(tasks, outcomes, cells, strategies, progress)
    else:
        _collect(tasks, map(work, tasks), cells, strategies, progress)
    out = list(cells.values())
    for cell in out:
        if cell.failures > MAX_FAILURE_SHARE * settings.reps:
            raise RunFailed(
                f"scenario {cell.scenario} {cell.missingness} {cell.strategy}: "
                f"{cell.failures} of {settings.reps} replications failed ({cell.errors[:3]})"
            )
    return out


def _collect(tasks, outcomes, cells, strategies, progress):
    for i, (task, outcome) in enumerate(zip(tasks, outcomes)):
        sc, k, r = task
        if isinstance(outcome, Exception):
            log.warning("scenario %d %s replication %d failed: %s", sc, k, r, outcome)
            for st in strategies:
                cells[(sc, k, st)].failures += 1
                cells[(sc, k, st)].errors.append(f"replication {r}: {outcome}")
        else:
            for res in outcome:
                cells[(sc, k, res.strategy)].results.append(res)
        if progress is not None:
            progress(i + 1, len(tasks))


def run_cell(
    scenario: int,
    kind: str,
    cfg: StrategyConfig,
    reps: int,
    n: int = DEFAULT_N,
    seed: int = 0,
    threads: int = 1,
) -> CellRun:
    settings = SimulationSettings(
        n=n, reps=reps, m=cfg.m, m1=cfg.m1, m2=cfg.m2, iterations=cfg.iterations, method=cfg.method, donors=cfg.donors
    )
    (cell,) = run_grid([scenario], [kind], [cfg.kind], seed, settings, threads)
    return cell


@dataclass(frozen=True)
class SummaryRow:
    scenario: int
    missingness: str
    strategy: str
    parameter: str
    truth: float
    mean_estimate: float
    bias: float
    coverage_pct: float
    mean_ci_width: float
    replications: int
    failures: int


SUMMARY_COLUMNS = tuple(SummaryRow.__dataclass_fields__)


def truths(scenario: int) -> dict[str, float]:
    return dgp.population_truth(dgp.scenario(scenario)).as_dict()


def summarize(results: Sequence[ReplicationResult], truth: dict[str, float], failures: int = 0) -> list[SummaryRow]:
    """Bias, coverage (%) and mean interval width per parameter."""
    if not results:
        raise ValueError("nothing to summarise")
    first = results[0]
    rows = []
    for p in PARAMETERS:
        pooled = [r.pooled[p] for r in results]
        est = np.array([x.q_bar for x in pooled])
        lo = np.array([x.ci_low for x in pooled])
        hi = np.array([x.ci_high for x in pooled])
        tv = truth[p]
        rows.append(
            SummaryRow(
                scenario=first.scenario,
                missingness=first.missingness,
                strategy=first.strategy,
                parameter=p,
                truth=float(tv),
                mean_estimate=float(est.mean()),
                bias=float(est.mean() - tv),
                coverage_pct=float(100.0 * np.mean((lo <= tv) & (tv <= hi))),
                mean_ci_width=float((hi - lo).mean()),
                replications=len(results),
                failures=failures,
            )
        )
    return rows


def summarize_grid(cells: Sequence[CellRun]) -> list[SummaryRow]:
    rows = []
    for cell in cells:
        rows.extend(summarize(cell.results, truths(cell.scenario), cell.failures))
    return rows


def relative_efficiency(a: Sequence[SummaryRow], b: Sequence[SummaryRow], parameter: str | Sequence[str]) -> float:
    """Mean CI width of ``a`` over that of ``b`` for matching cells.

    ``parameter`` may be a list, in which case widths are averaged over all
    matching rows before taking the ratio.
    """
    params = {parameter} if isinstance(parameter, str) else set(parameter)
    wa = {(r.scenario, r.missingness, r.parameter): r.mean_ci_width for r in a if r.parameter in params}
    wb = {(r.scenario, r.missingness, r.parameter): r.mean_ci_width for r in b if r.parameter in params}
    keys = sorted(set(wa) & set(wb))
    if not keys:
        raise ValueError("no matching cells to compare")
    return float(np.mean([wa[k] for k in keys]) / np.mean([wb[k] for k in keys]))


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else str(x)
    return str(x)


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def read_summary_csv(text: str) -> list[SummaryRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(
            SummaryRow(
                scenario=int(rec["scenario"]),
                missingness=rec["missingness"],
                strategy=rec["strategy"],
                parameter=rec["parameter"],
                truth=float(rec["truth"]),
                mean_estimate=float(rec["mean_estimate"]),
                bias=float(rec["bias"]),
                coverage_pct=float(rec["coverage_pct"]),
                mean_ci_width=float(rec["mean_ci_width"]),
                replications=int(rec["replications"]),
                failures=int(rec["failures"]),
            )
        )
    return rows


def figure_csv(rows: Sequence[SummaryRow]) -> str:
    """Long format: bias and coverage by (rho_within, rho_between) for plotting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["missingness", "strategy", "parameter", "scenario", "rho_within", "rho_between", "metric", "value"])
    for r in rows:
        s = dgp.scenario(r.scenario)
        for metric in ("bias", "coverage_pct"):
            w.writerow([r.missingness, r.strategy, r.parameter, r.scenario, s.rho_within, s.rho_between, metric, _fmt(getattr(r, metric))])
    return buf.getvalue()


def check_summary(rows: Sequence[SummaryRow]) -> list[str]:
    """Validity checks that hold for every cell regardless of regime.

    Monotone cells: |bias(b_y1)| <= 0.03 and coverage in [91.5, 98.5].
    Re-imputation cells: b_y1 coverage in [91.5, 98.5].
    All cells: |bias(mean)| <= 0.02 and mean coverage in [91.5, 98.5].
    """
    problems = []
    for r in rows:
        tag = f"scenario {r.scenario} {r.missingness} {r.strategy} {r.parameter}"
        in_band = 91.5 <= r.coverage_pct <= 98.5
        if r.parameter == "b_y1" and r.missingness == "monotone":
            if abs(r.bias) > 0.03:
                problems.append(f"{tag}: |bias| {abs(r.bias):.4f} > 0.03")
            if not in_band:
                problems.append(f"{tag}: coverage {r.coverage_pct:.1f} outside [91.5, 98.5]")
        elif r.parameter == "b_y1" and r.strategy == "reimpute" and not in_band:
            problems.append(f"{tag}: coverage {r.coverage_pct:.1f} outside [91.5, 98.5]")
        if r.parameter in MEANS:
            if abs(r.bias) > 0.02:
                problems.append(f"{tag}: |bias| {abs(r.bias):.4f} > 0.02")
            if not in_band:
                problems.append(f"{tag}: coverage {r.coverage_pct:.1f} outside [91.5, 98.5]")
    return problems
