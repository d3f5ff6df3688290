"""Numerical inputs for the balancing solvers.

The constraint matrix has one column per row of data and these row groups:

* ``weight_sum``: all ones, target 1;
* ``treatment_moment``: standardised ``T, T**2, ...``, target 0;
* ``stratum_feature``: per stratum and component, the feature standardised
  within that stratum and zero on every other row, target 0;
* ``stratum_interaction``: the previous row times the first treatment
  moment, target 0.

With a single stratum this is the global decorrelation system
``sum_i w_i [x_i, t_i, t_i x_i] = 0`` plus the weight normalisation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy import sparse

from .data_model import DataError, StratumIndex

MIN_SD = 1e-8

WEIGHT_SUM = "weight_sum"
TREATMENT_MOMENT = "treatment_moment"
STRATUM_FEATURE = "stratum_feature"
STRATUM_INTERACTION = "stratum_interaction"


def standardize(v, name: str = "column") -> np.ndarray:
    """Zero mean, unit population standard deviation."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] < 2:
        raise DataError(f"cannot standardize {name}: needs at least 2 entries, got {v.shape[0]}")
    centered = v - v.mean()
    sd = np.sqrt(np.mean(centered ** 2))
    if sd < MIN_SD:
        raise DataError(f"cannot standardize {name}: zero variance")
    return centered / sd


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    component_directions: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    retained_k: int

    @property
    def p(self) -> int:
        return self.mean.shape[0]


def pca_fit(
    X, explained_threshold: float = 0.95, max_components: Optional[int] = None
) -> PcaModel:
    """Eigen-decomposition of the sample covariance of ``X``.

    Keeps the smallest k whose cumulative explained-variance ratio reaches
    ``explained_threshold``, optionally capped at ``max_components``. The
    covariance uses the ``n - 1`` divisor.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError(f"PCA needs a 2-d matrix with at least 2 rows, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("PCA input contains non-finite values")
    if not 0.0 < explained_threshold <= 1.0:
        raise ValueError(f"explained_threshold must lie in (0, 1], got {explained_threshold}")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    # deterministic sign: largest-magnitude loading of each direction is positive
    flip = np.sign(evecs[np.argmax(np.abs(evecs), axis=0), np.arange(evecs.shape[1])])
    evecs = evecs * np.where(flip == 0, 1.0, flip)
    total = evals.sum()
    if total <= 0:
        raise DataError("PCA input has zero total variance")
    ratio = evals / total
    rank = int(np.sum(evals > evals[0] * max(X.shape) * np.finfo(float).eps))
    cumulative = np.cumsum(ratio)
    k = int(np.searchsorted(cumulative, explained_threshold - 1e-12) + 1)
    k = min(k, rank, evals.shape[0])
    if max_components is not None:
        k = max(1, min(k, max_components))
    return PcaModel(
        mean=mean,
        component_directions=evecs[:, :k].T.copy(),
        explained_variance=evals[:k].copy(),
        explained_variance_ratio=ratio[:k].copy(),
        retained_k=k,
    )


def pca_transform(model: PcaModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.p:
        raise DataError(f"expected {model.p} feature columns, got shape {X.shape}")
    return (X - model.mean) @ model.component_directions.T


def treatment_moments(T, degree: int = 1) -> np.ndarray:
    """Columns ``T, T**2, ..., T**degree``, each standardised."""
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    T = np.asarray(T, dtype=float)
    return np.column_stack(
        [standardize(T ** d, name=f"treatment moment {d}") for d in range(1, degree + 1)]
    )


@dataclass(frozen=True)
class RowLabel:
    kind: str
    stratum: int = -1
    feature: int = -1
    moment: int = -1


@dataclass(frozen=True)
class BlockDesign:
    """Assembled constraint system ``C w = M`` with base weights ``Q``.

    ``g_matrix`` is stored as CSR. ``row_assignment`` (data row -> stratum)
    is kept when the design came from a stratum index so solvers can work
    block by block; stratum rows are zero outside their stratum's columns.
    """

    g_matrix: sparse.csr_matrix
    targets: np.ndarray
    base_weights: np.ndarray
    row_labels: tuple
    row_assignment: Optional[np.ndarray] = None

    def __post_init__(self):
        C = self.g_matrix
        C = C.tocsr() if sparse.issparse(C) else sparse.csr_matrix(np.atleast_2d(np.asarray(C, dtype=float)))
        object.__setattr__(self, "g_matrix", C)
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=float).ravel())
        object.__setattr__(self, "base_weights", np.asarray(self.base_weights, dtype=float).ravel())
        labels = tuple(self.row_labels) or tuple(RowLabel("constraint") for _ in range(C.shape[0]))
        object.__setattr__(self, "row_labels", labels)
        if self.targets.shape[0] != C.shape[0] or len(labels) != C.shape[0]:
            raise DataError("targets / row labels do not match the constraint rows")
        if self.base_weights.shape[0] != C.shape[1]:
            raise DataError("base weights do not match the constraint columns")

    @property
    def m(self) -> int:
        return self.g_matrix.shape[0]

    @property
    def n(self) -> int:
        return self.g_matrix.shape[1]

    def dense(self) -> np.ndarray:
        return self.g_matrix.toarray()

    def rows_of(self, kind: str) -> np.ndarray:
        return np.array([i for i, lab in enumerate(self.row_labels) if lab.kind == kind], dtype=int)

    def subset(self, rows: Sequence[int]) -> "BlockDesign":
        rows = np.asarray(rows, dtype=int)
        return BlockDesign(
            self.g_matrix[rows], self.targets[rows], self.base_weights,
            tuple(self.row_labels[i] for i in rows), self.row_assignment,
        )


def normalize_base_weights(base_weights, n: int) -> np.ndarray:
    if base_weights is None:
        return np.full(n, 1.0 / n)
    q = np.asarray(base_weights, dtype=float).ravel()
    if q.shape[0] != n:
        raise DataError(f"{q.shape[0]} base weights for {n} rows")
    if not np.all(np.isfinite(q)) or np.any(q <= 0):
        raise DataError("base weights must be finite and strictly positive")
    return q / q.sum()


def build_block_design(
    Xk,
    Tm,
    idx: StratumIndex,
    base_weights=None,
    interaction_moments: int = 1,
) -> BlockDesign:
    """Assemble the per-stratum balance constraints.

    ``interaction_moments`` > 1 adds interaction rows for the higher
    treatment moments as well (off by default).
    """
    Xk = np.asarray(Xk, dtype=float)
    Tm = np.asarray(Tm, dtype=float)
    if Tm.ndim == 1:
        Tm = Tm.reshape(-1, 1)
    n, k = Xk.shape
    d = Tm.shape[1]
    if Tm.shape[0] != n or idx.row_assignment.shape[0] != n:
        raise DataError("feature, treatment and stratum assignment row counts differ")
    if not 1 <= interaction_moments <= d:
        raise ValueError(f"interaction_moments must lie in [1, {d}]")

    # assemble in COO form: (row, column, value) triplets
    r_idx: List[np.ndarray] = []
    c_idx: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    all_cols = np.arange(n)

    def add(row: int, cols: np.ndarray, values: np.ndarray):
        r_idx.append(np.full(cols.shape[0], row))
        c_idx.append(cols)
        vals.append(values)

    targets: List[float] = [1.0]
    labels: List[RowLabel] = [RowLabel(WEIGHT_SUM)]
    add(0, all_cols, np.ones(n))
    for j in range(d):
        add(len(labels), all_cols, Tm[:, j])
        targets.append(0.0)
        labels.append(RowLabel(TREATMENT_MOMENT, moment=j))

    blocks = []
    for s in range(idx.count):
        members = idx.rows(s)
        for f in range(k):
            z = standardize(Xk[members, f], name=f"component {f} in stratum {idx.strata[s]}")
            blocks.append((s, f, members, z))
    for s, f, members, z in blocks:
        add(len(labels), members, z)
        targets.append(0.0)
        labels.append(RowLabel(STRATUM_FEATURE, stratum=s, feature=f))
    for j in range(interaction_moments):
        for s, f, members, z in blocks:
            add(len(labels), members, z * Tm[members, j])
            targets.append(0.0)
            labels.append(RowLabel(STRATUM_INTERACTION, stratum=s, feature=f, moment=j))

    C = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(r_idx), np.concatenate(c_idx))),
        shape=(len(labels), n),
    )
    return BlockDesign(
        g_matrix=C,
        targets=np.asarray(targets),
        base_weights=normalize_base_weights(base_weights, n),
        row_labels=tuple(labels),
        row_assignment=np.asarray(idx.row_assignment),
    )
