"""Tabular dataset carrier, CSV ingestion and temporal-spatial strata."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class ObservationTable:
    """Features, continuous treatment, outcome and stratum labels for n rows.

    ``extra`` holds named numeric companion columns (binary outcome, base
    weights) that travel with the rows but are not covariates.
    """

    features: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    cell_label: np.ndarray
    time_label: Optional[np.ndarray] = None
    feature_names: tuple = ()
    extra: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        treatment = np.asarray(self.treatment, dtype=float).ravel()
        outcome = np.asarray(self.outcome, dtype=float).ravel()
        cell = np.asarray(self.cell_label).ravel()
        time = None if self.time_label is None else np.asarray(self.time_label).ravel()
        n = features.shape[0]
        if n == 0:
            raise DataError("empty dataset")
        columns = {"treatment": treatment, "outcome": outcome, "cell_label": cell}
        if time is not None:
            columns["time_label"] = time
        for name, col in columns.items():
            if col.shape[0] != n:
                raise DataError(f"column {name} has {col.shape[0]} entries, expected {n}")
        if not np.all(np.isfinite(features)):
            raise DataError("features contain non-finite values")
        if not np.all(np.isfinite(treatment)):
            raise DataError("treatment contains non-finite values")
        if not np.all(np.isfinite(outcome)):
            raise DataError("outcome contains non-finite values")
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(features.shape[1]))
        if len(names) != features.shape[1]:
            raise DataError(f"{len(names)} feature names for {features.shape[1]} feature columns")
        extra = {}
        for key, col in dict(self.extra).items():
            col = np.asarray(col, dtype=float).ravel()
            if col.shape[0] != n:
                raise DataError(f"column {key} has {col.shape[0]} entries, expected {n}")
            extra[key] = col
        for arr in (features, treatment, outcome, cell, *extra.values()):
            arr.flags.writeable = False
        if time is not None:
            time.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "treatment", treatment)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "cell_label", cell)
        object.__setattr__(self, "time_label", time)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "extra", extra)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def with_labels(self, cell_label, time_label=None) -> "ObservationTable":
        """Copy of the table with replaced stratum labels."""
        return ObservationTable(
            self.features, self.treatment, self.outcome, cell_label, time_label,
            self.feature_names, self.extra,
        )

    def take(self, rows) -> "ObservationTable":
        rows = np.asarray(rows)
        return ObservationTable(
            self.features[rows],
            self.treatment[rows],
            self.outcome[rows],
            self.cell_label[rows],
            None if self.time_label is None else self.time_label[rows],
            self.feature_names,
            {k: v[rows] for k, v in self.extra.items()},
        )


@dataclass(frozen=True)
class StratumIndex:
    """Populated (time, space) strata in lexicographic order and the row map."""

    strata: tuple
    row_assignment: np.ndarray

    @property
    def count(self) -> int:
        return len(self.strata)

    def rows(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.row_assignment == s)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.row_assignment, minlength=len(self.strata))


@dataclass(frozen=True)
class DatasetSummary:
    n: int
    p: int
    stratum_count: int
    treatment_nonzero_fraction: float
    stratum_sizes: tuple

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "p": self.p,
            "stratum_count": self.stratum_count,
            "treatment_nonzero_fraction": self.treatment_nonzero_fraction,
            "stratum_sizes": list(self.stratum_sizes),
        }


# Schema keys understood by load_table; values are CSV column names.
SCHEMA_KEYS = ("treatment", "outcome", "cell", "time", "row_id")


def _sort_key(label):
    # numeric labels sort numerically, everything else as text
    try:
        return (0, float(label), "")
    except (TypeError, ValueError):
        return (1, 0.0, str(label))


def _canonical_label(raw: str):
    try:
        value = float(raw)
    except ValueError:
        return raw
    if value.is_integer() and "." not in raw and "e" not in raw.lower():
        return int(value)
    return raw


def data_lines(fh):
    """Lines of a text file minus ``#`` provenance comments."""
    return (line for line in fh if not line.startswith("#"))


def load_table(path, schema: Mapping[str, str], extra_columns: Sequence[str] = ()) -> ObservationTable:
    """Read a comma-separated file with a header row into an ObservationTable.

    ``schema`` maps ``treatment``, ``outcome`` and ``cell`` (and optionally
    ``time`` and ``row_id``) to column names. Columns listed in
    ``extra_columns`` are kept as numeric companions; every other column is a
    feature. All unparseable rows are reported together.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    for key in ("treatment", "outcome", "cell"):
        if key not in schema:
            raise DataError(f"schema is missing the '{key}' role")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(data_lines(fh))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty dataset") from None
        body = [row for row in reader if row]
    for key, col in schema.items():
        if col not in header:
            raise DataError(f"missing column '{col}' (schema role '{key}')")
    for col in extra_columns:
        if col not in header:
            raise DataError(f"missing column '{col}'")
    if not body:
        raise DataError("empty dataset")

    label_cols = {schema["cell"]}
    if "time" in schema:
        label_cols.add(schema["time"])
    skip = label_cols | {schema.get("row_id")}
    numeric_cols = [c for c in header if c not in skip]
    feature_cols = [
        c for c in numeric_cols
        if c not in (schema["treatment"], schema["outcome"]) and c not in extra_columns
    ]
    pos = {c: i for i, c in enumerate(header)}

    values = np.empty((len(body), len(numeric_cols)))
    bad = []
    for r, row in enumerate(body):
        # row numbers are 1-based data rows (header excluded)
        if len(row) != len(header):
            bad.append(f"row {r + 1}: expected {len(header)} fields, got {len(row)}")
            continue
        for c, name in enumerate(numeric_cols):
            try:
                values[r, c] = float(row[pos[name]])
            except ValueError:
                bad.append(f"row {r + 1}: non-numeric value {row[pos[name]]!r} in column '{name}'")
                break
    if bad:
        raise DataError("unparseable rows:\n  " + "\n  ".join(bad))
    if not np.all(np.isfinite(values)):
        rows = sorted(set(np.argwhere(~np.isfinite(values))[:, 0] + 1))
        raise DataError(f"non-finite values in rows {rows}")

    col = {name: values[:, i] for i, name in enumerate(numeric_cols)}
    cell = np.array([_canonical_label(row[pos[schema["cell"]]].strip()) for row in body], dtype=object)
    time = None
    if "time" in schema:
        time = np.array([_canonical_label(row[pos[schema["time"]]].strip()) for row in body], dtype=object)
    features = np.column_stack([col[c] for c in feature_cols]) if feature_cols else np.empty((len(body), 0))
    return ObservationTable(
        features=features,
        treatment=col[schema["treatment"]],
        outcome=col[schema["outcome"]],
        cell_label=cell,
        time_label=time,
        feature_names=tuple(feature_cols),
        extra={c: col[c] for c in extra_columns},
    )


def write_table(
    table: ObservationTable, path, schema: Optional[Mapping[str, str]] = None, comment: Optional[str] = None
) -> None:
    """Write a table as CSV using 17 significant digits so reloading is exact.

    ``comment`` becomes a leading ``#`` line, which ``load_table`` skips.
    """
    schema = dict(schema or {"treatment": "T", "outcome": "Y", "cell": "OD", "time": "time"})
    header = list(table.feature_names) + [schema["treatment"], schema["outcome"]]
    header += list(table.extra)
    header.append(schema["cell"])
    if table.time_label is not None:
        header.append(schema["time"])
    numeric = np.column_stack(
        [table.features, table.treatment, table.outcome] + list(table.extra.values())
    )
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(table.n):
            row = [format(v, ".17g") for v in numeric[i]]
            row.append(str(table.cell_label[i]))
            if table.time_label is not None:
                row.append(str(table.time_label[i]))
            writer.writerow(row)


def build_stratum_index(table: ObservationTable, min_rows: int = 2) -> StratumIndex:
    """Enumerate populated (time, space) strata in lexicographic order.

    Without a time label every row belongs to the single time stratum 0.
    """
    cells = table.cell_label
    times = table.time_label if table.time_label is not None else np.zeros(table.n, dtype=int)
    keys = list(zip(times.tolist(), cells.tolist()))
    unique = sorted(set(keys), key=lambda k: (_sort_key(k[0]), _sort_key(k[1])))
    lookup = {k: s for s, k in enumerate(unique)}
    assignment = np.fromiter((lookup[k] for k in keys), dtype=np.int64, count=len(keys))
    sizes = np.bincount(assignment, minlength=len(unique))
    small = [(unique[s], int(sizes[s])) for s in np.flatnonzero(sizes < min_rows)]
    if small:
        desc = ", ".join(
            f"(time={t}, cell={c}) has {m} row{'s' if m != 1 else ''}" for (t, c), m in small
        )
        raise DataError(f"strata below the minimum of {min_rows} rows: {desc}")
    assignment.flags.writeable = False
    return StratumIndex(strata=tuple(unique), row_assignment=assignment)


def summarize(table: ObservationTable, idx: StratumIndex) -> DatasetSummary:
    sizes = idx.sizes()
    return DatasetSummary(
        n=table.n,
        p=table.p,
        stratum_count=idx.count,
        treatment_nonzero_fraction=float(np.mean(table.treatment != 0)),
        stratum_sizes=tuple(int(s) for s in sizes),
    )
