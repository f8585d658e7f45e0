"""Two-wave datasets, missingness masks and collections of completed copies."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import MissingCellRead, SchemaError

Wave = Literal["t1", "t2"]
MISSING_TOKEN = "NA"


@dataclass(frozen=True)
class Column:
    name: str
    wave: Wave
    incomplete: bool = True

    def __post_init__(self):
        if self.wave not in ("t1", "t2"):
            raise SchemaError(f"column {self.name!r}: wave must be 't1' or 't2', got {self.wave!r}")


@dataclass(frozen=True)
class WaveSchema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in {names}")
        if not names:
            raise SchemaError("schema has no columns")

    @classmethod
    def simulation(cls) -> "WaveSchema":
        """x1 (always observed), y1 at t1; x2, y2 at t2."""
        return cls(
            (
                Column("x1", "t1", incomplete=False),
                Column("y1", "t1"),
                Column("x2", "t2"),
                Column("y2", "t2"),
            )
        )

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown column {name!r}") from None

    def wave_names(self, wave: Wave) -> list[str]:
        return [c.name for c in self.columns if c.wave == wave]

    def subset(self, names: Sequence[str]) -> "WaveSchema":
        lookup = {c.name: c for c in self.columns}
        return WaveSchema(tuple(lookup[n] for n in names))

    def require_both_waves(self) -> None:
        if not self.wave_names("t1") or not self.wave_names("t2"):
            raise SchemaError("need at least one t1 and one t2 column")


class TwoWaveDataset:
    """Rectangular numeric data with an explicit observed-cell mask.

    ``mask[i, j]`` is True when cell ``(i, j)`` is observed.  Values stored
    under missing cells are meaningless; use :meth:`get`, :meth:`column` or
    :meth:`observed` to read data so that such reads fail loudly.  Arrays are
    read-only after construction.
    """

    __slots__ = ("schema", "_values", "_mask")

    def __init__(self, schema: WaveSchema, values, mask=None):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(schema.columns):
            raise SchemaError(
                f"values shape {values.shape} does not match {len(schema.columns)} schema columns"
            )
        if values.shape[0] < 1:
            raise SchemaError("dataset needs at least one row")
        if mask is None:
            mask = np.ones(values.shape, dtype=bool)
        else:
            mask = np.array(mask, dtype=bool)
            if mask.shape != values.shape:
                raise SchemaError(f"mask shape {mask.shape} != values shape {values.shape}")
        values[~mask] = 0.0
        if not np.all(np.isfinite(values)):
            raise ValueError("observed cells must be finite")
        values.flags.writeable = False
        mask.flags.writeable = False
        self.schema = schema
        self._values = values
        self._mask = mask

    @property
    def n(self) -> int:
        return self._values.shape[0]

    @property
    def p(self) -> int:
        return self._values.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return self._mask

    @property
    def names(self) -> list[str]:
        return self.schema.names

    @property
    def is_complete(self) -> bool:
        return bool(self._mask.all())

    def raw(self) -> tuple[np.ndarray, np.ndarray]:
        """Underlying (values, mask) arrays; missing cells hold zeros."""
        return self._values, self._mask

    def get(self, row: int, name: str) -> float:
        j = self.schema.index(name)
        if not self._mask[row, j]:
            raise MissingCellRead(f"cell ({row}, {name!r}) is missing")
        return float(self._values[row, j])

    def column(self, name: str) -> np.ndarray:
        j = self.schema.index(name)
        if not self._mask[:, j].all():
            raise MissingCellRead(f"column {name!r} has missing cells")
        return self._values[:, j]

    def observed(self, name: str) -> np.ndarray:
        j = self.schema.index(name)
        return self._values[self._mask[:, j], j]

    def to_array(self) -> np.ndarray:
        """Dense copy of a complete dataset."""
        if not self.is_complete:
            raise MissingCellRead("dataset has missing cells")
        return self._values.copy()

    def with_values(self, values: np.ndarray) -> "TwoWaveDataset":
        """Complete copy where missing cells take entries from ``values``."""
        values = np.asarray(values, dtype=np.float64)
        merged = np.where(self._mask, self._values, values)
        return TwoWaveDataset(self.schema, merged)

    def select(self, names: Sequence[str]) -> "TwoWaveDataset":
        idx = [self.schema.index(n) for n in names]
        return TwoWaveDataset(self.schema.subset(names), self._values[:, idx], self._mask[:, idx])

    def equals(self, other: "TwoWaveDataset") -> bool:
        return (
            self.schema == other.schema
            and np.array_equal(self._mask, other._mask)
            and np.array_equal(self._values, other._values)
        )

    def __repr__(self) -> str:
        return f"TwoWaveDataset(n={self.n}, columns={self.names}, missing={int((~self._mask).sum())})"


def missing_cell_fraction(d: TwoWaveDataset) -> float:
    """Share of all n*p cells that are missing."""
    return float((~d.mask).sum()) / d.mask.size


def split_waves(d: TwoWaveDataset) -> tuple[TwoWaveDataset, TwoWaveDataset]:
    return d.select(d.schema.wave_names("t1")), d.select(d.schema.wave_names("t2"))


def merge_waves(t1: TwoWaveDataset, t2: TwoWaveDataset, order: Sequence[str] | None = None) -> TwoWaveDataset:
    """Column-bind two wave blocks; ``order`` defaults to t1 columns then t2."""
    if t1.n != t2.n:
        raise SchemaError(f"row counts differ: {t1.n} vs {t2.n}")
    if set(t1.names) & set(t2.names):
        raise SchemaError("wave blocks share column names")
    schema = WaveSchema(t1.schema.columns + t2.schema.columns)
    v1, m1 = t1.raw()
    v2, m2 = t2.raw()
    merged = TwoWaveDataset(schema, np.hstack([v1, v2]), np.hstack([m1, m2]))
    if order is not None and list(order) != merged.names:
        merged = merged.select(order)
    return merged


class CompletedCollection:
    """Flat ``m`` or nested ``m1 x m2`` set of completed copies of one source."""

    __slots__ = ("shape", "datasets")

    def __init__(self, shape: tuple, datasets):
        kind = shape[0]
        if kind == "flat":
            (m,) = shape[1:]
            if len(datasets) != m:
                raise ValueError(f"flat({m}) collection got {len(datasets)} datasets")
            members = list(datasets)
        elif kind == "nested":
            m1, m2 = shape[1:]
            if len(datasets) != m1 or any(len(nest) != m2 for nest in datasets):
                raise ValueError(f"nested({m1}, {m2}) collection is ragged")
            members = [d for nest in datasets for d in nest]
        else:
            raise ValueError(f"unknown collection shape {shape!r}")
        if any(not d.is_complete for d in members):
            raise ValueError("collection members must be fully observed")
        self.shape = tuple(shape)
        self.datasets = datasets

    @property
    def nested(self) -> bool:
        return self.shape[0] == "nested"

    def members(self) -> list[TwoWaveDataset]:
        if self.nested:
            return [d for nest in self.datasets for d in nest]
        return list(self.datasets)

    def __len__(self) -> int:
        return math.prod(self.shape[1:])

    def agrees_with(self, source: TwoWaveDataset) -> bool:
        """True when every member matches ``source`` on its observed cells."""
        values, mask = source.raw()
        for d in self.members():
            if d.names != source.names:
                return False
            dv, _ = d.raw()
            if not np.array_equal(dv[mask], values[mask]):
                return False
        return True


# Table of observed (1) / missing (0) flags over (x1, y1, x2, y2).
MONOTONE_PATTERNS: tuple[tuple[int, ...], ...] = (
    (1, 1, 1, 1),
    (1, 1, 1, 0),
    (1, 1, 0, 1),
    (1, 1, 0, 0),
    (1, 0, 0, 0),
)
NONMONOTONE_PATTERNS: tuple[tuple[int, ...], ...] = MONOTONE_PATTERNS + (
    (1, 0, 1, 1),
    (1, 0, 1, 0),
    (1, 0, 0, 1),
)
PATTERN_COLUMNS = ("x1", "y1", "x2", "y2")


@dataclass(frozen=True)
class MissingnessPattern:
    observed: dict
    kind: Literal["monotone", "nonmonotone"]

    @property
    def n_missing(self) -> int:
        return sum(1 for v in self.observed.values() if not v)

    @property
    def is_complete(self) -> bool:
        return self.n_missing == 0

    def flags(self, names: Sequence[str]) -> np.ndarray:
        return np.array([bool(self.observed[n]) for n in names])

    def __str__(self) -> str:
        return " ".join(f"{k}={int(v)}" for k, v in self.observed.items())


def patterns(kind: str) -> list[MissingnessPattern]:
    if kind == "monotone":
        rows = MONOTONE_PATTERNS
    elif kind == "nonmonotone":
        rows = NONMONOTONE_PATTERNS
    else:
        raise ValueError(f"unknown missingness kind {kind!r}")
    return [MissingnessPattern(dict(zip(PATTERN_COLUMNS, map(bool, r))), kind) for r in rows]


def monotone_missing_share(d: TwoWaveDataset) -> float:
    """Share of missing cells that sit in monotone rows.

    A row is monotone when it misses only t2 values, or when it misses some
    t1 value and every t2 value.  Returns 0 for a complete dataset.
    """
    mask = d.mask
    t1 = [d.schema.index(n) for n in d.schema.wave_names("t1")]
    t2 = [d.schema.index(n) for n in d.schema.wave_names("t2")]
    miss_per_row = (~mask).sum(axis=1)
    total = miss_per_row.sum()
    if total == 0:
        return 0.0
    t1_missing = (~mask[:, t1]).any(axis=1)
    t2_all_missing = (~mask[:, t2]).all(axis=1)
    monotone = ~t1_missing | t2_all_missing
    return float(miss_per_row[monotone].sum()) / float(total)


def _format(x: float) -> str:
    return repr(float(x))


def read_csv(path_or_buffer, waves: dict | None = None, incomplete: Iterable[str] | None = None) -> TwoWaveDataset:
    """Read a CSV with a header row; ``NA`` marks a missing cell.

    ``waves`` maps column name to ``t1``/``t2`` (default: every column t1).
    """
    if isinstance(path_or_buffer, (str, Path)):
        with open(path_or_buffer, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    else:
        rows = list(csv.reader(path_or_buffer))
    if not rows:
        raise SchemaError("CSV is empty; a header row is required")
    header, body = rows[0], [r for r in rows[1:] if r]
    waves = waves or {}
    incomplete = set(header if incomplete is None else incomplete)
    schema = WaveSchema(tuple(Column(h, waves.get(h, "t1"), h in incomplete) for h in header))
    values = np.zeros((len(body), len(header)))
    mask = np.ones((len(body), len(header)), dtype=bool)
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise SchemaError(f"CSV line {i + 2}: expected {len(header)} fields, got {len(row)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == MISSING_TOKEN:
                mask[i, j] = False
            else:
                try:
                    values[i, j] = float(cell)
                except ValueError:
                    raise SchemaError(f"CSV line {i + 2}, column {header[j]!r}: not a number: {cell!r}") from None
    return TwoWaveDataset(schema, values, mask)


def write_csv(d: TwoWaveDataset, path_or_buffer=None) -> str | None:
    """Write ``d`` as CSV (``NA`` for missing cells).  Returns text if no target."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(d.names)
    values, mask = d.raw()
    for i in range(d.n):
        writer.writerow([_format(values[i, j]) if mask[i, j] else MISSING_TOKEN for j in range(d.p)])
    text = buf.getvalue()
    if path_or_buffer is None:
        return text
    if isinstance(path_or_buffer, (str, Path)):
        Path(path_or_buffer).write_text(text, encoding="utf-8")
    else:
        path_or_buffer.write(text)
    return None
