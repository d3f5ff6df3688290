import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tsebct.data_model import (
    DataError,
    ObservationTable,
    build_stratum_index,
    load_table,
    summarize,
    write_table,
)

SCHEMA = {"treatment": "T", "outcome": "Y", "cell": "OD"}


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _table(cells, times=None, n_features=2, seed=0):
    rng = np.random.default_rng(seed)
    n = len(cells)
    return ObservationTable(
        features=rng.normal(size=(n, n_features)),
        treatment=rng.uniform(size=n),
        outcome=rng.normal(size=n),
        cell_label=np.array(cells, dtype=object),
        time_label=None if times is None else np.array(times, dtype=object),
    )


def test_load_five_rows(tmp_path):
    path = tmp_path / "d.csv"
    rows = [[i, 2 * i, 0.5, 1.0, "a" if i < 3 else "b"] for i in range(5)]
    _write_csv(path, ["x1", "x2", "T", "Y", "OD"], rows)
    table = load_table(path, SCHEMA)
    assert table.n == 5
    assert table.p == 2
    assert table.feature_names == ("x1", "x2")


def test_header_only_is_empty(tmp_path):
    path = tmp_path / "d.csv"
    _write_csv(path, ["x1", "T", "Y", "OD"], [])
    with pytest.raises(DataError, match="empty dataset"):
        load_table(path, SCHEMA)


def test_bad_value_names_row(tmp_path):
    path = tmp_path / "d.csv"
    rows = [[1, 0.1, 1, "a"], [2, 0.2, 1, "a"], ["abc", 0.3, 1, "b"], [4, 0.4, 1, "b"]]
    _write_csv(path, ["x1", "T", "Y", "OD"], rows)
    with pytest.raises(DataError, match="row 3"):
        load_table(path, SCHEMA)


def test_all_bad_rows_reported_together(tmp_path):
    path = tmp_path / "d.csv"
    rows = [["q", 0.1, 1, "a"], [2, 0.2, 1, "a"], [3, "zz", 1, "b"]]
    _write_csv(path, ["x1", "T", "Y", "OD"], rows)
    with pytest.raises(DataError) as exc:
        load_table(path, SCHEMA)
    assert "row 1" in str(exc.value) and "row 3" in str(exc.value)


def test_missing_column_is_named(tmp_path):
    path = tmp_path / "d.csv"
    _write_csv(path, ["x1", "Y", "OD"], [[1, 2, "a"]])
    with pytest.raises(DataError, match="missing column 'T'"):
        load_table(path, SCHEMA)


def test_stratum_index_single_label():
    idx = build_stratum_index(_table(["a", "a", "b", "b"]))
    assert idx.count == 2
    assert idx.row_assignment.tolist() == [0, 0, 1, 1]


def test_empty_strata_omitted():
    idx = build_stratum_index(_table(["a", "a", "b", "b"], times=[1, 1, 2, 2]))
    assert idx.strata == ((1, "a"), (2, "b"))


def test_small_stratum_rejected():
    with pytest.raises(DataError, match="cell=b"):
        build_stratum_index(_table(["a", "a", "b"]))


def test_numeric_labels_sort_numerically():
    idx = build_stratum_index(_table([10, 10, 9, 9]))
    assert [c for _, c in idx.strata] == [9, 10]
    assert idx.row_assignment.tolist() == [1, 1, 0, 0]


def test_summary_counts():
    t = _table(["a", "b", "a", "b"])
    s = summarize(t, build_stratum_index(t))
    assert s.stratum_sizes == (2, 2)
    assert s.stratum_count == 2


def test_summary_zero_treatment():
    t = _table(["a", "a"])
    t = ObservationTable(t.features, np.zeros(2), t.outcome, t.cell_label)
    assert summarize(t, build_stratum_index(t)).treatment_nonzero_fraction == 0.0


def test_table_is_read_only():
    t = _table(["a", "a"])
    with pytest.raises(ValueError):
        t.features[0, 0] = 1.0


def test_non_finite_rejected():
    with pytest.raises(DataError):
        ObservationTable(np.array([[np.nan]]), [0.0], [0.0], ["a"])


@given(st.integers(min_value=0, max_value=2**31))
def test_write_load_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    n = 6
    table = ObservationTable(
        features=rng.normal(size=(n, 3)) * 10.0 ** rng.integers(-8, 8, size=(n, 3)),
        treatment=rng.uniform(size=n),
        outcome=rng.normal(size=n),
        cell_label=np.array([1, 1, 2, 2, 3, 3], dtype=object),
        time_label=np.array(["m1"] * 3 + ["m2"] * 3, dtype=object),
        extra={"Y_binary": (rng.uniform(size=n) > 0.5).astype(float)},
    )
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    write_table(table, path, comment="seed=1")
    back = load_table(path, {**SCHEMA, "time": "time"}, extra_columns=["Y_binary"])
    assert np.array_equal(back.features, table.features)
    assert np.array_equal(back.treatment, table.treatment)
    assert np.array_equal(back.outcome, table.outcome)
    assert np.array_equal(back.extra["Y_binary"], table.extra["Y_binary"])
    assert back.cell_label.tolist() == table.cell_label.tolist()
    assert back.time_label.tolist() == table.time_label.tolist()


@given(st.permutations(list(range(8))))
def test_stratum_index_commutes_with_row_permutation(perm):
    labels = ["b", "a", "c", "a", "b", "c", "a", "b"]
    t = _table(labels)
    base = build_stratum_index(t).row_assignment
    permuted = build_stratum_index(t.take(np.array(perm))).row_assignment
    assert permuted.tolist() == base[np.array(perm)].tolist()
