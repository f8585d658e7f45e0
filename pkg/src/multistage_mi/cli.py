"""Command line entry point: ``simulate``, ``apply`` and ``pool``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines (keys are :class:`RunConfig` field names), then flags.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import sys
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dgp, harness
from ._backend import BACKEND
from .data import Column, TwoWaveDataset, WaveSchema, monotone_missing_share, read_csv, write_csv
from .errors import EmptyColumn, MultistageMIError, SchemaError
from .numerics import RngStream, ols_fit
from .pooling import EstimateGrid, PooledResult, pool_flat, pool_nested
from .strategies import STRATEGIES, StrategyConfig, run_strategy

log = logging.getLogger("multistage_mi")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_ERROR = 2


class ConfigError(MultistageMIError, ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str = "simulate"
    scenarios: list = field(default_factory=lambda: list(dgp.SCENARIO_IDS))
    missingness: list = field(default_factory=lambda: list(harness.KINDS))
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    n: int = harness.DEFAULT_N
    reps: int = harness.DEFAULT_REPS
    m: int = 5
    m1: int = 5
    m2: int = 5
    iterations: int = 10
    seed: int | None = None
    method: str = "norm"
    donors: int = 5
    missing_rate: float = 0.20
    threads: int = 1
    level: float = 0.95
    input: str | None = None
    output: str | None = None
    schema: str | None = None
    outcome: str | None = None
    predictors: list = field(default_factory=list)
    export_dir: str | None = None
    check: bool = False

    def validate(self) -> None:
        bad = [s for s in self.scenarios if s not in dgp.SCENARIO_IDS]
        if bad:
            raise ConfigError(f"--scenarios: ids must be in 1..16, got {bad}")
        bad = [k for k in self.missingness if k not in harness.KINDS]
        if bad:
            raise ConfigError(f"--missingness: unknown kinds {bad}")
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ConfigError(f"--strategies: unknown strategies {bad}")
        for name in ("n", "reps", "m", "m1", "m2", "iterations", "donors", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"--{name.replace('_', '-')} must be positive")
        if "nested" in self.strategies and self.m2 < 2:
            raise ConfigError("--m2 must be at least 2 for nested imputation (appended always uses m2 = 1)")
        if self.method not in ("norm", "pmm"):
            raise ConfigError(f"--method must be norm or pmm, got {self.method!r}")
        if not 0 < self.level < 1:
            raise ConfigError("--level must be in (0, 1)")
        if not 0 <= self.missing_rate < 1:
            raise ConfigError("--missing-rate must be in [0, 1)")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")


def _int_list(text: str) -> list[int]:
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _str_list(text: str) -> list[str]:
    return [p.strip() for p in str(text).split(",") if p.strip()]


def _bool(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_CONVERTERS = {
    "scenarios": _int_list,
    "missingness": _str_list,
    "strategies": _str_list,
    "predictors": _str_list,
    "check": _bool,
    "missing_rate": float,
    "level": float,
    "method": str,
    "input": str,
    "output": str,
    "schema": str,
    "outcome": str,
    "export_dir": str,
}


def _convert(key: str, value):
    conv = _CONVERTERS.get(key, int)
    return conv(value)


def read_config_file(path: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    names = {f.name for f in dataclasses.fields(RunConfig)} - {"subcommand"}
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in names:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multistage-mi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="key = value settings file (flags win)")
        p.add_argument("--seed", type=int)
        p.add_argument("--m", type=int, help="imputations for re-imputation")
        p.add_argument("--m1", type=int, help="stage-1 imputations (nested/appended)")
        p.add_argument("--m2", type=int, help="stage-2 imputations per nest (nested)")
        p.add_argument("--iterations", type=int, help="chained-equation sweeps")
        p.add_argument("--method", choices=("norm", "pmm"))
        p.add_argument("--donors", type=int, help="PMM donor pool size")
        p.add_argument("--strategies", type=_str_list, help="comma list of reimpute,nested,appended")
        p.add_argument("--output", help="output directory (simulate) or file (apply, pool)")
        p.add_argument("-v", "--verbose", action="store_true")

    sim = sub.add_parser("simulate", help="run the Monte Carlo grid")
    common(sim)
    sim.add_argument("--scenarios", type=_int_list, help="e.g. 1,2,5-8")
    sim.add_argument("--missingness", type=_str_list, help="monotone,nonmonotone")
    sim.add_argument("--n", type=int, help="sample size per replication")
    sim.add_argument("--reps", type=int, help="replications per cell")
    sim.add_argument("--missing-rate", dest="missing_rate", type=float)
    sim.add_argument("--threads", type=int)
    sim.add_argument("--check", action="store_true", default=None, help="exit 1 on validity-threshold violations")

    app = sub.add_parser("apply", help="impute a user CSV with all strategies and pool a linear model")
    common(app)
    app.add_argument("--input", help="data CSV (NA marks missing)")
    app.add_argument("--schema", help="CSV with columns column,wave,role[,method]")
    app.add_argument("--outcome")
    app.add_argument("--predictors", type=_str_list)
    app.add_argument("--level", type=float)
    app.add_argument("--export-dir", dest="export_dir", help="write every completed dataset here")

    pl = sub.add_parser("pool", help="pool per-dataset estimates from a CSV")
    pl.add_argument("--config")
    pl.add_argument("--input", help="CSV with nest,dataset,estimate,variance[,parameter]")
    pl.add_argument("--output")
    pl.add_argument("--level", type=float)
    pl.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(subcommand=args.subcommand)
    if args.subcommand == "apply":
        cfg.method = "pmm"
    settings = read_config_file(args.config) if getattr(args, "config", None) else {}
    for f in dataclasses.fields(RunConfig):
        if f.name == "subcommand":
            continue
        flag = getattr(args, f.name, None)
        if flag is not None:
            settings[f.name] = flag
    for key, value in settings.items():
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


# simulate -------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise ConfigError("simulate requires --seed (or 'seed' in the config file)")
    out = Path(cfg.output or "simulation-output")
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    try:
        settings = harness.SimulationSettings(
            n=cfg.n, reps=cfg.reps, m=cfg.m, m1=cfg.m1, m2=cfg.m2,
            iterations=cfg.iterations, method=cfg.method, missing_rate=cfg.missing_rate, donors=cfg.donors,
        )
        log.info("backend=%s seed=%d scenarios=%s missingness=%s strategies=%s", BACKEND, cfg.seed,
                 cfg.scenarios, cfg.missingness, cfg.strategies)
        log.info("settings: %s", settings)
        for sid in cfg.scenarios:
            s = dgp.scenario(sid)
            if s.repaired:
                log.warning("scenario %d uses a repaired correlation matrix (see scenarios.csv)", sid)
        (out / "scenarios.csv").write_text(dgp.scenarios_csv(cfg.scenarios), encoding="utf-8")
        started = time.perf_counter()
        cells = harness.run_grid(cfg.scenarios, cfg.missingness, cfg.strategies, cfg.seed, settings, cfg.threads)
        rows = harness.summarize_grid(cells)
        (out / "summary.csv").write_text(harness.summary_csv(rows), encoding="utf-8")
        (out / "figure.csv").write_text(harness.figure_csv(rows), encoding="utf-8")
        failures = sum(c.failures for c in cells)
        log.info("finished %d cells in %.1fs (%d failed replications)", len(cells),
                 time.perf_counter() - started, failures)
        if cfg.check:
            problems = harness.check_summary(rows)
            for p in problems:
                log.error("check: %s", p)
            if problems:
                return EXIT_CHECK_FAILED
        return EXIT_OK
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()


# apply ----------------------------------------------------------------------


@dataclass(frozen=True)
class ApplyColumn:
    name: str
    wave: str
    role: str  # id | predictor | impute
    method: str | None = None


ROLES = ("id", "predictor", "impute")


def read_schema(path: str) -> list[ApplyColumn]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"column", "wave", "role"}
        if not reader.fieldnames or not need <= set(reader.fieldnames):
            raise SchemaError(f"{path}: schema needs columns {sorted(need)}")
        cols = []
        for i, rec in enumerate(reader, 2):
            role = rec["role"].strip().replace("predictor-only", "predictor")
            if role not in ROLES:
                raise SchemaError(f"{path}:{i}: role must be one of {ROLES}, got {role!r}")
            wave = rec["wave"].strip()
            if wave not in ("t1", "t2"):
                raise SchemaError(f"{path}:{i}: wave must be t1 or t2, got {wave!r}")
            method = (rec.get("method") or "").strip() or None
            if method not in (None, "norm", "pmm"):
                raise SchemaError(f"{path}:{i}: method must be norm or pmm, got {method!r}")
            cols.append(ApplyColumn(rec["column"].strip(), wave, role, method))
    return cols


def prepare_apply_data(data: TwoWaveDataset, schema: list[ApplyColumn], strategies) -> tuple[TwoWaveDataset, dict]:
    """Drop id columns, attach wave tags, and check roles against the data."""
    by_name = {c.name: c for c in schema}
    missing = [n for n in data.names if n not in by_name]
    if missing:
        raise SchemaError(f"columns {missing} are not described in the schema")
    extra = [c.name for c in schema if c.name not in data.names]
    if extra:
        raise SchemaError(f"schema columns {extra} are not in the data")
    keep = [n for n in data.names if by_name[n].role != "id"]
    values, mask = data.raw()
    idx = [data.names.index(n) for n in keep]
    cols = tuple(Column(n, by_name[n].wave, by_name[n].role == "impute") for n in keep)
    d = TwoWaveDataset(WaveSchema(cols), values[:, idx], mask[:, idx])
    for n in keep:
        j = d.schema.index(n)
        if not d.mask[:, j].any():
            raise EmptyColumn(f"column {n!r} has no observed values")
        if by_name[n].role == "predictor" and not d.mask[:, j].all():
            raise SchemaError(f"predictor-only column {n!r} has missing values; give it role 'impute'")
    if any(s != "reimpute" for s in strategies):
        targets = [c for c in cols if c.incomplete]
        if not any(c.wave == "t1" for c in targets) or not any(c.wave == "t2" for c in targets):
            raise SchemaError("staged strategies need at least one t1 and one t2 'impute' column")
    methods = {c.name: c.method for c in schema if c.method and c.name in keep}
    return d, methods


def pool_linear_model(collection, outcome: str, predictors: list[str], level: float) -> dict[str, PooledResult]:
    est, var = [], []
    for d in collection.members():
        fit = ols_fit(np.column_stack([d.column(p) for p in predictors]), d.column(outcome))
        est.append(fit.coefficients)
        var.append(fit.coefficient_variances)
    est, var = np.array(est), np.array(var)
    terms = ["(intercept)"] + list(predictors)
    if collection.nested:
        m1, m2 = collection.shape[1:]
        return {t: pool_nested(EstimateGrid(est[:, i].reshape(m1, m2), var[:, i].reshape(m1, m2)), level)
                for i, t in enumerate(terms)}
    return {t: pool_flat(EstimateGrid(est[:, i], var[:, i]), level) for i, t in enumerate(terms)}


APPLY_COLUMNS = ("strategy", "term", "estimate", "se", "ci_low", "ci_high", "ci_width", "df", "datasets")


def run_apply(data: TwoWaveDataset, schema: list[ApplyColumn], cfg: RunConfig) -> tuple[list[dict], dict]:
    """Impute with each strategy and pool ``outcome ~ predictors``.

    Returns table rows and the completed collections keyed by strategy.
    """
    if not cfg.outcome or not cfg.predictors:
        raise ConfigError("apply needs --outcome and --predictors")
    d, methods = prepare_apply_data(data, schema, cfg.strategies)
    for c in [cfg.outcome, *cfg.predictors]:
        if c not in d.names:
            raise SchemaError(f"model column {c!r} is not a non-id data column")
    root = RngStream(cfg.seed if cfg.seed is not None else 0)
    rows, collections = [], {}
    for st in [s for s in STRATEGIES if s in cfg.strategies]:
        scfg = StrategyConfig(st, m=cfg.m, m1=cfg.m1, m2=cfg.m2, method=cfg.method,
                              iterations=cfg.iterations, donors=cfg.donors)
        rng = root.child(2 if st == "reimpute" else 3)
        coll = run_strategy(d, scfg, rng, methods)
        collections[st] = coll
        for term, r in pool_linear_model(coll, cfg.outcome, cfg.predictors, cfg.level).items():
            rows.append({
                "strategy": st, "term": term, "estimate": r.q_bar, "se": r.se,
                "ci_low": r.ci_low, "ci_high": r.ci_high, "ci_width": r.ci_width,
                "df": r.nu, "datasets": len(coll),
            })
    return rows, collections


def _write_rows(rows: list[dict], columns, target: str | None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([harness._fmt(r[c]) for c in columns])
    if target:
        Path(target).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())


def cmd_apply(cfg: RunConfig) -> int:
    if not cfg.input or not cfg.schema:
        raise ConfigError("apply needs --input and --schema")
    schema = read_schema(cfg.schema)
    data = read_csv(cfg.input, waves={c.name: c.wave for c in schema})
    d, _ = prepare_apply_data(data, schema, cfg.strategies)
    log.info("missing cells: %d of %d; share in monotone rows: %.3f",
             int((~d.mask).sum()), d.mask.size, monotone_missing_share(d))
    rows, collections = run_apply(data, schema, cfg)
    _write_rows(rows, APPLY_COLUMNS, cfg.output)
    if cfg.export_dir:
        out = Path(cfg.export_dir)
        out.mkdir(parents=True, exist_ok=True)
        for st, coll in collections.items():
            if coll.nested:
                for k, nest in enumerate(coll.datasets, 1):
                    for l, member in enumerate(nest, 1):
                        write_csv(member, out / f"{st}_nest{k}_imp{l}.csv")
            else:
                for k, member in enumerate(coll.datasets, 1):
                    write_csv(member, out / f"{st}_imp{k}.csv")
    return EXIT_OK


# pool -----------------------------------------------------------------------

POOL_COLUMNS = ("parameter", "shape", "q_bar", "u_bar", "b", "w", "t", "nu", "ci_low", "ci_high")


def pool_table(text: str, level: float = 0.95) -> list[dict]:
    """Pool a long table of per-dataset estimates.

    A grid where every nest holds one dataset is pooled with the flat rules;
    otherwise every nest must hold the same number of datasets.
    """
    reader = csv.DictReader(io.StringIO(text))
    need = {"nest", "dataset", "estimate", "variance"}
    if not reader.fieldnames or not need <= set(reader.fieldnames):
        raise SchemaError(f"pool input needs columns {sorted(need)}")
    groups: dict = defaultdict(lambda: defaultdict(dict))
    order: list = []
    for i, rec in enumerate(reader, 2):
        param = rec.get("parameter") or "estimate"
        if param not in groups:
            order.append(param)
        try:
            nest, ds = rec["nest"].strip(), rec["dataset"].strip()
            entry = (float(rec["estimate"]), float(rec["variance"]))
        except ValueError as exc:
            raise SchemaError(f"line {i}: {exc}") from None
        if ds in groups[param][nest]:
            raise SchemaError(f"line {i}: duplicate (nest, dataset) = ({nest}, {ds})")
        groups[param][nest][ds] = entry
    rows = []
    for param in order:
        nests = list(groups[param].values())
        sizes = {len(n) for n in nests}
        if len(sizes) != 1:
            raise SchemaError(f"{param}: ragged grid, nest sizes {sorted(sizes)}")
        (m2,) = sizes
        q = np.array([[v[0] for v in n.values()] for n in nests])
        u = np.array([[v[1] for v in n.values()] for n in nests])
        if m2 == 1:
            r, shape = pool_flat(EstimateGrid(q[:, 0], u[:, 0]), level), f"flat({len(nests)})"
        else:
            r, shape = pool_nested(EstimateGrid(q, u), level), f"nested({len(nests)},{m2})"
        rows.append({"parameter": param, "shape": shape, **r.as_dict()})
    return rows


def cmd_pool(cfg: RunConfig) -> int:
    text = Path(cfg.input).read_text(encoding="utf-8") if cfg.input else sys.stdin.read()
    _write_rows(pool_table(text, cfg.level), POOL_COLUMNS, cfg.output)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root = logging.getLogger()
    root.addHandler(console)
    root.setLevel(logging.INFO)
    try:
        cfg = resolve_config(args)
        if cfg.subcommand == "simulate":
            return cmd_simulate(cfg)
        if cfg.subcommand == "apply":
            return cmd_apply(cfg)
        return cmd_pool(cfg)
    except (MultistageMIError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    finally:
        root.removeHandler(console)


if __name__ == "__main__":
    sys.exit(main())
