import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chfsurrogate.dataset import (
    COLUMNS, SYNTH_RANGES, ChfRecord, Dataset, DataError, RowError, SchemaError, SplitSpec,
    destandardize, fit_scaler, load_chf_csv, split, split_sizes, standardize, synthetic_chf,
    write_chf_csv,
)

ROW = [0.01, 2.0, 7000.0, 2000.0, 250.0, 0.1, 300.0, 2500.0]


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_minimal_file(tmp_path):
    p = write(tmp_path, ",".join(COLUMNS) + "\n" + ",".join(map(str, ROW)) + "\n")
    d = load_chf_csv(p)
    assert len(d) == 1
    assert d.records[0] == ChfRecord(*ROW)


def test_load_maps_columns_by_header_and_skips_comments(tmp_path):
    order = list(reversed(COLUMNS))
    vals = list(reversed(ROW))
    p = write(tmp_path, "# NRC subset\n" + ",".join(order) + "\n\n" + ",".join(map(str, vals)) + "\n")
    assert np.array_equal(load_chf_csv(p).values[0], ROW)


def test_nan_cell_is_row_error(tmp_path):
    bad = ROW[:7] + ["NaN"]
    p = write(tmp_path, ",".join(COLUMNS) + "\n" + ",".join(map(str, ROW)) + "\n" + ",".join(map(str, bad)) + "\n")
    with pytest.raises(RowError) as e:
        load_chf_csv(p)
    assert e.value.row == 2


def test_non_numeric_cell(tmp_path):
    bad = ["abc"] + ROW[1:]
    p = write(tmp_path, ",".join(COLUMNS) + "\n" + ",".join(map(str, bad)) + "\n")
    with pytest.raises(RowError, match="D_m"):
        load_chf_csv(p)


def test_missing_column_named(tmp_path):
    p = write(tmp_path, ",".join(COLUMNS[:-1]) + "\n" + ",".join(map(str, ROW[:-1])) + "\n")
    with pytest.raises(SchemaError, match="CHF_kWm2"):
        load_chf_csv(p)


def test_empty_file(tmp_path):
    with pytest.raises(DataError):
        load_chf_csv(write(tmp_path, ""))


def test_invariant_violation_aborts(tmp_path):
    bad = ROW[:]
    bad[0] = -1.0
    p = write(tmp_path, ",".join(COLUMNS) + "\n" + ",".join(map(str, bad)) + "\n")
    with pytest.raises(RowError, match="D_m"):
        load_chf_csv(p)


def test_csv_round_trip_bit_exact(tmp_path):
    d = synthetic_chf(50, seed=3, noise=0.05)
    p = tmp_path / "rt.csv"
    write_chf_csv(d, p)
    assert load_chf_csv(p).equals(d)


def test_record_invariants():
    with pytest.raises(DataError):
        ChfRecord(0.01, 1.0, 100.0, -1.0, 20.0, 0.0, 10.0, 100.0)
    with pytest.raises(DataError):
        ChfRecord(0.01, 1.0, 100.0, 1.0, 20.0, 0.0, 10.0, math.inf)


def test_standardize_hand_case():
    vals = np.tile(np.array(ROW, dtype=float), (2, 1))
    vals[:, 0] = [1.0, 3.0]
    vals[:, 1:] += np.array([[0.0], [1.0]])  # give every column variance
    table, sc = standardize(vals)
    assert table[:, 0].tolist() == [-1.0, 1.0]
    assert sc.mean[0] == 2.0 and sc.std[0] == 1.0


def test_standardize_idempotent_on_normalized():
    d = synthetic_chf(200, 1)
    z, _ = standardize(d)
    z2, sc2 = standardize(z)
    np.testing.assert_allclose(z2, z, atol=1e-9)
    np.testing.assert_allclose(sc2.std, 1.0, atol=1e-9)


def test_zero_variance_named():
    vals = np.tile(np.array(ROW, dtype=float), (5, 1))
    vals[:, 7] = np.arange(5) + 100.0
    with pytest.raises(DataError, match="D_m"):
        standardize(vals)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 300), seed=st.integers(0, 10_000))
def test_standardize_round_trip(n, seed):
    d = synthetic_chf(n, seed, noise=0.02)
    z, sc = standardize(d)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-9)
    np.testing.assert_allclose(destandardize(z, sc), d.values, rtol=1e-9)


def test_split_sizes():
    assert split_sizes(10, SplitSpec(0.8, 0.1, 0.1)) == (8, 1, 1)
    # published test partition: 10% of the full NRC table is 2,458 rows
    assert split_sizes(24580, SplitSpec(0.8, 0.1, 0.1))[2] == 2458


def test_split_deterministic_and_disjoint():
    d = synthetic_chf(97, 0)
    spec = SplitSpec(0.7, 0.2, 0.1, shuffle_seed=5)
    a = split(d, spec)
    b = split(d, spec)
    for x, y in zip(a, b):
        assert x.equals(y)
    assert [len(x) for x in a] == [69, 19, 9]
    rows = np.vstack([x.values for x in a])
    assert sorted(map(tuple, rows)) == sorted(map(tuple, d.values))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(10, 400), a=st.floats(0.05, 0.9), b=st.floats(0.05, 0.9), seed=st.integers(0, 99))
def test_split_partition_property(n, a, b, seed):
    if a + b >= 0.95:
        a, b = a / 2, b / 2
    spec = SplitSpec(1.0 - a - b, a, b, shuffle_seed=seed)
    from chfsurrogate.dataset import split_indices
    tr, va, te = split_indices(n, spec)
    allidx = np.concatenate([tr, va, te])
    assert sorted(allidx.tolist()) == list(range(n))
    assert len(va) == math.floor(n * a + 1e-9) and len(te) == math.floor(n * b + 1e-9)


def test_split_rejects_bad_fractions():
    with pytest.raises(ValueError):
        SplitSpec(0.8, 0.1, 0.2)


def test_synthetic_deterministic_bytes():
    a = synthetic_chf(5, 7)
    b = synthetic_chf(5, 7)
    assert a.values.tobytes() == b.values.tobytes()


def test_synthetic_noise_free_matches_closed_form():
    d = synthetic_chf(40, 11)
    for r in d.records:
        expected = (30.0 * math.sqrt(r.mass_flux) * (1.0 + 0.5 * r.pressure_kpa / 10000.0)
                    * (1.0 - r.outlet_quality) * math.exp(-r.heated_length_m / 4.0) + 0.5 * r.inlet_enthalpy)
        assert r.chf == pytest.approx(expected, rel=1e-13)


def test_synthetic_ranges_and_invariants():
    d = synthetic_chf(500, 2, noise=0.1)
    for j, c in enumerate(COLUMNS[:7]):
        lo, hi = SYNTH_RANGES[c]
        assert d.values[:, j].min() >= lo and d.values[:, j].max() <= hi
    assert np.all(d.chf > 0)
    with pytest.raises(DataError):
        synthetic_chf(0, 1)


def test_dataset_is_immutable():
    d = synthetic_chf(3, 0)
    with pytest.raises(ValueError):
        d.values[0, 0] = 1.0


def test_scaler_fit_on_train_only():
    d = synthetic_chf(100, 4)
    tr, va, te = split(d, SplitSpec())
    sc = fit_scaler(tr)
    np.testing.assert_allclose(sc.mean, tr.values.mean(axis=0))
