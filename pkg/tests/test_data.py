import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from multistage_mi.data import (
    Column,
    CompletedCollection,
    TwoWaveDataset,
    WaveSchema,
    merge_waves,
    missing_cell_fraction,
    monotone_missing_share,
    patterns,
    read_csv,
    split_waves,
    write_csv,
)
from multistage_mi.errors import MissingCellRead, SchemaError

SCHEMA = WaveSchema.simulation()


def small(mask=None):
    values = np.arange(12, dtype=float).reshape(3, 4)
    return TwoWaveDataset(SCHEMA, values, mask)


class TestSchema:
    def test_simulation_layout(self):
        assert SCHEMA.names == ["x1", "y1", "x2", "y2"]
        assert SCHEMA.wave_names("t1") == ["x1", "y1"]
        assert SCHEMA.wave_names("t2") == ["x2", "y2"]
        assert not SCHEMA.columns[0].incomplete

    def test_duplicates_rejected(self):
        with pytest.raises(SchemaError):
            WaveSchema((Column("a", "t1"), Column("a", "t2")))

    def test_bad_wave(self):
        with pytest.raises(SchemaError):
            Column("a", "t3")

    def test_unknown_column(self):
        with pytest.raises(SchemaError):
            SCHEMA.index("z")

    def test_require_both_waves(self):
        with pytest.raises(SchemaError):
            WaveSchema((Column("a", "t1"),)).require_both_waves()


class TestDataset:
    def test_missing_cell_read_fails(self):
        mask = np.ones((3, 4), bool)
        mask[1, 2] = False
        d = small(mask)
        assert d.get(0, "x2") == 2.0
        with pytest.raises(MissingCellRead):
            d.get(1, "x2")
        with pytest.raises(MissingCellRead):
            d.column("x2")
        with pytest.raises(MissingCellRead):
            d.to_array()
        np.testing.assert_array_equal(d.observed("x2"), [2.0, 10.0])

    def test_read_only(self):
        d = small()
        values, mask = d.raw()
        with pytest.raises(ValueError):
            values[0, 0] = 5
        with pytest.raises(ValueError):
            mask[0, 0] = False

    def test_missing_cells_zeroed(self):
        mask = np.ones((3, 4), bool)
        mask[2, 3] = False
        values, _ = small(mask).raw()
        assert values[2, 3] == 0.0

    def test_shape_checks(self):
        with pytest.raises(SchemaError):
            TwoWaveDataset(SCHEMA, np.zeros((3, 3)))
        with pytest.raises(SchemaError):
            TwoWaveDataset(SCHEMA, np.zeros((0, 4)))
        with pytest.raises(SchemaError):
            TwoWaveDataset(SCHEMA, np.zeros((3, 4)), np.ones((2, 4)))

    def test_nonfinite_observed_rejected(self):
        v = np.zeros((2, 4))
        v[0, 0] = np.nan
        with pytest.raises(ValueError):
            TwoWaveDataset(SCHEMA, v)
        mask = np.ones((2, 4), bool)
        mask[0, 0] = False
        TwoWaveDataset(SCHEMA, v, mask)

    def test_with_values_keeps_observed(self):
        mask = np.ones((3, 4), bool)
        mask[0, 1] = False
        filled = small(mask).with_values(np.full((3, 4), -1.0))
        assert filled.is_complete
        assert filled.get(0, "y1") == -1.0
        assert filled.get(1, "y1") == 5.0

    def test_missing_fraction(self):
        mask = np.ones((3, 4), bool)
        mask[0, :2] = False
        assert missing_cell_fraction(small(mask)) == pytest.approx(2 / 12)

    def test_split_merge_roundtrip(self):
        mask = np.ones((3, 4), bool)
        mask[1, 3] = False
        d = small(mask)
        t1, t2 = split_waves(d)
        assert t1.names == ["x1", "y1"] and t2.names == ["x2", "y2"]
        assert merge_waves(t1, t2).equals(d)
        assert merge_waves(t2, t1, order=d.names).equals(d)

    def test_merge_row_mismatch(self):
        with pytest.raises(SchemaError):
            merge_waves(small().select(["x1"]), TwoWaveDataset(SCHEMA.subset(["x2"]), np.zeros((2, 1))))


class TestCollection:
    def test_flat_and_nested(self):
        d = small()
        flat = CompletedCollection(("flat", 2), [d, d])
        assert len(flat) == 2 and not flat.nested
        nested = CompletedCollection(("nested", 2, 3), [[d] * 3, [d] * 3])
        assert len(nested) == 6 and nested.nested and len(nested.members()) == 6

    def test_ragged_rejected(self):
        d = small()
        with pytest.raises(ValueError):
            CompletedCollection(("nested", 2, 2), [[d, d], [d]])
        with pytest.raises(ValueError):
            CompletedCollection(("flat", 3), [d, d])

    def test_incomplete_member_rejected(self):
        mask = np.ones((3, 4), bool)
        mask[0, 0] = False
        with pytest.raises(ValueError):
            CompletedCollection(("flat", 1), [small(mask)])

    def test_agrees_with(self):
        mask = np.ones((3, 4), bool)
        mask[0, 1] = False
        src = small(mask)
        good = src.with_values(np.zeros((3, 4)))
        values = good.to_array()
        values[2, 2] += 1
        bad = TwoWaveDataset(SCHEMA, values)
        assert CompletedCollection(("flat", 1), [good]).agrees_with(src)
        assert not CompletedCollection(("flat", 1), [bad]).agrees_with(src)


class TestPatterns:
    def test_counts(self):
        mono = patterns("monotone")
        non = patterns("nonmonotone")
        assert len(mono) == 5 and len(non) == 8
        assert sum(p.n_missing for p in mono) == 7
        assert sum(p.n_missing for p in non) == 12
        assert all(p.observed["x1"] for p in non)

    def test_monotone_set_is_monotone(self):
        for p in patterns("monotone"):
            flags = p.flags(["x1", "y1", "x2", "y2"])
            t1_missing = not flags[:2].all()
            assert not t1_missing or not flags[2:].any()

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            patterns("mar")

    def test_monotone_share(self):
        mask = np.ones((4, 4), bool)
        mask[0, 3] = False  # t2 only
        mask[1, 1:] = False  # y1 + all of t2
        mask[2, 1] = False  # y1 only: non-monotone
        d = TwoWaveDataset(SCHEMA, np.zeros((4, 4)), mask)
        assert monotone_missing_share(d) == pytest.approx(4 / 5)
        assert monotone_missing_share(small()) == 0.0


class TestCsv:
    def test_roundtrip_exact(self):
        g = np.random.default_rng(3)
        mask = g.random((20, 4)) > 0.2
        d = TwoWaveDataset(SCHEMA, g.normal(size=(20, 4)), mask)
        text = write_csv(d)
        back = read_csv(io.StringIO(text), waves={"x1": "t1", "y1": "t1", "x2": "t2", "y2": "t2"})
        np.testing.assert_array_equal(back.mask, d.mask)
        np.testing.assert_array_equal(back.raw()[0], d.raw()[0])
        assert back.schema.wave_names("t2") == ["x2", "y2"]

    def test_bad_cell(self):
        with pytest.raises(SchemaError, match="line 3"):
            read_csv(io.StringIO("a,b\n1,2\n3,x\n"))

    def test_ragged_line(self):
        with pytest.raises(SchemaError):
            read_csv(io.StringIO("a,b\n1\n"))

    def test_empty(self):
        with pytest.raises(SchemaError):
            read_csv(io.StringIO(""))

    @given(arrays(np.float64, (5, 4), elements=st.floats(-1e6, 1e6)), arrays(bool, (5, 4)))
    def test_roundtrip_property(self, values, mask):
        d = TwoWaveDataset(SCHEMA, values, mask)
        back = read_csv(io.StringIO(write_csv(d)))
        np.testing.assert_array_equal(back.raw()[0], d.raw()[0])
        np.testing.assert_array_equal(back.mask, d.mask)
