"""Acceptance suite.

Criteria 4 to 9 share one run of the full default grid (16 scenarios, both
missingness kinds, three strategies, 500 replications, n = 425) made through
the command line; a second run with more threads checks determinism.  The
two runs take roughly a quarter of an hour on one core.
"""

import math

import numpy as np
import pytest

from multistage_mi import cli, dgp, harness
from multistage_mi.data import TwoWaveDataset, WaveSchema
from multistage_mi.imputer import ImputationSpec, chained_impute
from multistage_mi.numerics import RngStream, ols_fit
from multistage_mi.pooling import EstimateGrid, pool, pool_flat, pool_nested

SEED = 20240611
BAND = (91.5, 98.5)
FIELDS = ("q_bar", "u_bar", "b", "w", "t", "nu", "ci_low", "ci_high")

pytestmark = pytest.mark.acceptance


def report(lines, number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    lines.append(line)
    print(line)
    return ok


def in_band(x):
    return BAND[0] <= x <= BAND[1]


@pytest.fixture(scope="session")
def grid_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("grid")
    out = {}
    for threads in (1, 2):
        target = base / f"threads{threads}"
        code = cli.main(["simulate", "--seed", str(SEED), "--threads", str(threads), "--output", str(target)])
        assert code == 0, f"simulate with {threads} thread(s) exited {code}"
        out[threads] = target
    return out


@pytest.fixture(scope="session")
def summary(grid_runs):
    return harness.read_summary_csv((grid_runs[1] / "summary.csv").read_text())


def select(rows, **kw):
    return [r for r in rows if all(getattr(r, k) == v for k, v in kw.items())]


def test_criterion_1_pooling_hand_oracle(acceptance_report):
    flat = pool(EstimateGrid(np.array([1.0, 2, 3]), np.ones(3)))
    nested = pool(EstimateGrid(np.array([[1.0, 2], [3, 4]]), np.full((2, 2), 0.5)))
    nu_nested = 1 / (0.64 + 1 / 450)
    errs = [abs(flat.t - 7 / 3), abs(flat.nu - 6.125), abs(nested.t - 3.75), abs(nested.nu - nu_nested)]
    ok = max(errs) <= 1e-9 and round(nested.nu, 3) == 1.557
    report(acceptance_report, 1, ok, f"flat T={flat.t:.12g} nu={flat.nu:.12g}; nested T={nested.t:.12g} nu={nested.nu:.6g}; max err {max(errs):.1e}")
    assert ok


def test_criterion_2_reduction_identity(acceptance_report):
    g = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(1000):
        m = int(g.integers(2, 40))
        q = g.normal(size=m) * g.exponential(2) + g.normal(0, 5)
        u = g.exponential(size=m) * g.exponential(1)
        a = pool_nested(EstimateGrid(q[:, None], u[:, None]))
        b = pool_flat(EstimateGrid(q, u))
        for f in FIELDS:
            x, y = getattr(a, f), getattr(b, f)
            if math.isinf(x) or math.isinf(y):
                worst = max(worst, 0.0 if x == y else math.inf)
            else:
                worst = max(worst, abs(x - y))
    ok = worst <= 1e-12
    report(acceptance_report, 2, ok, f"1000 grids, max field difference {worst:.2e}")
    assert ok


def test_criterion_3_truth_cross_check(acceptance_report):
    expected = {1: 0.08, 6: 0.19, 11: 0.25, 16: 0.35}
    got = {i: dgp.population_truth(dgp.scenario(i)).coefficients[2] for i in expected}
    table_ok = all(round(got[i], 2) == expected[i] for i in expected)
    worst = 0.0
    for sid in dgp.SCENARIO_IDS:
        s = dgp.scenario(sid)
        x = dgp.generate(s, 10**6, RngStream(SEED, (99, sid))).to_array()
        fit = ols_fit(x[:, :3], x[:, 3])
        worst = max(worst, float(np.max(np.abs(fit.coefficients - dgp.population_truth(s).coefficients))))
    ok = table_ok and worst <= 0.01
    shown = ", ".join(f"s{i}={got[i]:.4f}" for i in expected)
    report(acceptance_report, 3, ok, f"b_y1 {shown}; empirical 1e6-sample max deviation {worst:.4f}")
    assert ok


def test_criterion_4_monotone_validity(summary, acceptance_report):
    rows = select(summary, missingness="monotone", parameter="b_y1")
    assert len(rows) == 48
    bad = [r for r in rows if abs(r.bias) > 0.03 or not in_band(r.coverage_pct)]
    worst_bias = max(abs(r.bias) for r in rows)
    cov = [r.coverage_pct for r in rows]
    detail = f"48 cells, max |bias| {worst_bias:.4f}, coverage {min(cov):.1f}-{max(cov):.1f}"
    if bad:
        detail += "; violations: " + "; ".join(f"s{r.scenario} {r.strategy} bias {r.bias:.3f} cov {r.coverage_pct}" for r in bad)
    report(acceptance_report, 4, not bad, detail)
    assert not bad


def test_criterion_5_nonmonotone_reimpute_validity(summary, acceptance_report):
    rows = [r for r in select(summary, missingness="nonmonotone", strategy="reimpute") if r.parameter in harness.COEFFICIENTS]
    assert len(rows) == 64
    bad = [r for r in rows if not in_band(r.coverage_pct)]
    cov = [r.coverage_pct for r in rows]
    detail = f"64 coefficient cells, coverage {min(cov):.1f}-{max(cov):.1f}, max |bias| {max(abs(r.bias) for r in rows):.4f}"
    if bad:
        detail += "; violations: " + "; ".join(f"s{r.scenario} {r.parameter} {r.coverage_pct}" for r in bad)
    report(acceptance_report, 5, not bad, detail)
    assert not bad


def test_criterion_6_nonmonotone_regime_split(summary, acceptance_report):
    cov = {(r.scenario, r.strategy): r.coverage_pct for r in select(summary, missingness="nonmonotone", parameter="b_y1")}
    problems = []
    for sid in (13, 14, 15):
        for st in ("nested", "appended"):
            if cov[(sid, st)] < 93:
                problems.append(f"s{sid} {st} {cov[(sid, st)]} < 93")
    for sid in (3, 4, 8):
        for st in ("nested", "appended"):
            if cov[(sid, st)] > 60:
                problems.append(f"s{sid} {st} {cov[(sid, st)]} > 60")
    gaps = {sid: abs(cov[(sid, "nested")] - cov[(sid, "appended")]) for sid in dgp.SCENARIO_IDS}
    problems += [f"s{sid} nested-appended gap {g:.1f} > 6" for sid, g in gaps.items() if g > 6]
    high = " ".join(f"{cov[(s, 'nested')]:.1f}/{cov[(s, 'appended')]:.1f}" for s in (13, 14, 15))
    low = " ".join(f"{cov[(s, 'nested')]:.1f}/{cov[(s, 'appended')]:.1f}" for s in (3, 4, 8))
    detail = f"s13-15 NI/AI {high}; s3,4,8 NI/AI {low}; max gap {max(gaps.values()):.1f}"
    if problems:
        detail += "; violations: " + "; ".join(problems)
    report(acceptance_report, 6, not problems, detail)
    assert not problems


def test_criterion_7_mean_validity(summary, acceptance_report):
    rows = [r for r in summary if r.parameter in harness.MEANS]
    assert len(rows) == 16 * 2 * 3 * 4
    bad = [r for r in rows if abs(r.bias) > 0.02 or not in_band(r.coverage_pct)]
    cov = [r.coverage_pct for r in rows]
    detail = f"{len(rows)} cells, max |bias| {max(abs(r.bias) for r in rows):.4f}, coverage {min(cov):.1f}-{max(cov):.1f}"
    if bad:
        detail += "; violations: " + "; ".join(f"s{r.scenario} {r.missingness} {r.strategy} {r.parameter} {r.bias:.3f}/{r.coverage_pct}" for r in bad)
    report(acceptance_report, 7, not bad, detail)
    assert not bad


def test_criterion_8_efficiency_ordering(summary, acceptance_report):
    nonmono = select(summary, missingness="nonmonotone")
    ni = select(nonmono, strategy="nested")
    ri = select(nonmono, strategy="reimpute")
    ai = select(nonmono, strategy="appended")
    vs_ri = {p: harness.relative_efficiency(ni, ri, p) for p in harness.COEFFICIENTS}
    vs_ai = {p: harness.relative_efficiency(ni, ai, p) for p in harness.COEFFICIENTS}
    ok = all(0.85 <= v <= 1.00 for v in (*vs_ri.values(), *vs_ai.values()))
    fmt = lambda d: " ".join(f"{p}={v:.3f}" for p, v in d.items())
    report(acceptance_report, 8, ok, f"nested/reimpute {fmt(vs_ri)}; nested/appended {fmt(vs_ai)}")
    assert ok


def test_criterion_9_determinism(grid_runs, acceptance_report):
    a = (grid_runs[1] / "summary.csv").read_bytes()
    b = (grid_runs[2] / "summary.csv").read_bytes()
    rows = a.decode().count("\n") - 1
    ok = a == b and rows == 16 * 2 * 3 * 8
    report(acceptance_report, 9, ok, f"threads 1 vs 2: summary.csv {'identical' if a == b else 'DIFFERENT'} ({rows} rows)")
    assert ok


def test_criterion_10_imputer_self_consistency(acceptance_report):
    schema = WaveSchema.simulation()
    names = schema.names
    spec = ImputationSpec.all_others(["y2"], names, m=50)
    covered = 0
    trials = 200
    for t in range(trials):
        root = RngStream(SEED, (10, t))
        full = dgp.generate(dgp.scenario(11), harness.DEFAULT_N, root.child(0))
        values = full.to_array()
        mask = np.ones(values.shape, dtype=bool)
        mask[:, 3] = root.child(1).generator.random(full.n) >= 0.20
        d = TwoWaveDataset(schema, values, mask)
        c = chained_impute(d, spec, root.child(2))
        est = np.array([m.column("y2").mean() for m in c.members()])
        var = np.array([m.column("y2").var(ddof=1) / m.n for m in c.members()])
        r = pool_flat(EstimateGrid(est, var))
        covered += abs(r.q_bar - values[:, 3].mean()) <= 3 * r.se
    rate = covered / trials
    ok = rate >= 0.95
    report(acceptance_report, 10, ok, f"{covered}/{trials} trials within 3 pooled SEs ({100 * rate:.1f}%)")
    assert ok
