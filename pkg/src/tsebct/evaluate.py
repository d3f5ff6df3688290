"""Balance diagnostics and uplift metrics for weighting methods.

Balance is measured as the weighted Pearson correlation between every
feature and the treatment. Causal quality is measured by fitting a single
weighted model on features plus treatment (S-learner), scoring each row's
uplift at a fixed dose, and computing the area under the uplift curve on a
treated (T > 0) versus control split.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol

import numpy as np
from scipy import linalg
from scipy.special import expit
from scipy.stats import rankdata

from .data_model import DataError, ObservationTable, StratumIndex
from .synthgen import BINARY_OUTCOME


class ConvergenceError(RuntimeError):
    pass


def _check_weights(w, n: int) -> np.ndarray:
    w = np.asarray(w, dtype=float).ravel()
    if w.shape[0] != n:
        raise DataError(f"{w.shape[0]} weights for {n} rows")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise DataError("weights must be finite, non-negative and not all zero")
    return w / w.sum()


def weighted_pearson(x, y, w) -> float:
    """Weighted covariance over the product of weighted standard deviations."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = _check_weights(w, x.shape[0])
    dx = x - w @ x
    dy = y - w @ y
    vx = w @ (dx * dx)
    vy = w @ (dy * dy)
    if vx <= 0 or vy <= 0:
        raise DataError("zero weighted variance")
    r = (w @ (dx * dy)) / np.sqrt(vx * vy)
    return float(np.clip(r, -1.0, 1.0))


def _weighted_corr_columns(X, t, w) -> np.ndarray:
    dX = X - w @ X
    dt = t - w @ t
    vx = w @ (dX * dX)
    vt = w @ (dt * dt)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (w @ (dX * dt[:, None])) / np.sqrt(vx * vt)
    return np.clip(r, -1.0, 1.0)


@dataclass
class CorrelationReport:
    feature_names: tuple
    unweighted: np.ndarray
    weighted: np.ndarray
    average_absolute_unweighted: float
    average_absolute_weighted: float
    per_stratum: List[dict] = field(default_factory=list)

    @property
    def per_feature(self) -> list:
        return list(zip(self.feature_names, self.unweighted.tolist(), self.weighted.tolist()))

    def worst_stratum(self, weighted: bool = True) -> float:
        key = "average_absolute_weighted" if weighted else "average_absolute_unweighted"
        return max(s[key] for s in self.per_stratum) if self.per_stratum else float("nan")

    def to_dict(self) -> dict:
        return {
            "per_feature": [
                {"feature": f, "unweighted": u, "weighted": v} for f, u, v in self.per_feature
            ],
            "average_absolute_unweighted": self.average_absolute_unweighted,
            "average_absolute_weighted": self.average_absolute_weighted,
            "per_stratum": self.per_stratum,
        }


def correlation_report(table: ObservationTable, weights, idx: Optional[StratumIndex] = None) -> CorrelationReport:
    """Feature-treatment correlations with and without weights.

    NaN entries (a feature or the treatment constant within a stratum) are
    left out of that stratum's averages.
    """
    w = _check_weights(weights, table.n)
    uniform = np.full(table.n, 1.0 / table.n)
    X, t = table.features, table.treatment
    unw = _weighted_corr_columns(X, t, uniform)
    wtd = _weighted_corr_columns(X, t, w)
    strata = []
    if idx is not None:
        for s in range(idx.count):
            rows = idx.rows(s)
            ws = w[rows]
            if ws.sum() <= 0:
                continue
            u_s = _weighted_corr_columns(X[rows], t[rows], np.full(rows.shape[0], 1.0 / rows.shape[0]))
            w_s = _weighted_corr_columns(X[rows], t[rows], ws / ws.sum())
            strata.append({
                "stratum": [_plain(v) for v in idx.strata[s]],
                "rows": int(rows.shape[0]),
                "average_absolute_unweighted": float(np.nanmean(np.abs(u_s))) if np.any(np.isfinite(u_s)) else float("nan"),
                "average_absolute_weighted": float(np.nanmean(np.abs(w_s))) if np.any(np.isfinite(w_s)) else float("nan"),
            })
    return CorrelationReport(
        feature_names=table.feature_names,
        unweighted=unw,
        weighted=wtd,
        average_absolute_unweighted=float(np.mean(np.abs(unw))),
        average_absolute_weighted=float(np.mean(np.abs(wtd))),
        per_stratum=strata,
    )


def _plain(v):
    return v.item() if hasattr(v, "item") else v


class BaseLearner(Protocol):
    def fit(self, X: np.ndarray, y: np.ndarray, sample_weight: np.ndarray) -> "BaseLearner": ...

    def predict(self, X: np.ndarray) -> np.ndarray: ...


def _normalized_sample_weight(sample_weight, n):
    # mean one over the rows that carry weight: fits ignore an overall scale
    # and zero-weight rows behave exactly as if they were absent
    w = _check_weights(sample_weight, n)
    return w * np.count_nonzero(w)


class WeightedRidge:
    """Least squares with sample weights and a small ridge on the slopes."""

    def __init__(self, alpha: float = 1e-8):
        self.alpha = alpha
        self.coef_ = None

    def fit(self, X, y, sample_weight):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        w = _normalized_sample_weight(sample_weight, X.shape[0])
        A = np.column_stack([np.ones(X.shape[0]), X])
        penalty = self.alpha * np.eye(A.shape[1])
        penalty[0, 0] = 0.0
        gram = (A * w[:, None]).T @ A + penalty
        self.coef_ = linalg.solve(gram, (A * w[:, None]).T @ y, assume_a="sym")
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        return self.coef_[0] + X @ self.coef_[1:]


class WeightedLogistic:
    """Binary logistic regression fitted by iteratively reweighted least squares."""

    def __init__(self, alpha: float = 1.0, max_iter: int = 100, tol: float = 1e-8):
        self.alpha = alpha
        self.max_iter = max_iter
        self.tol = tol
        self.coef_ = None
        self.n_iter_ = 0

    def fit(self, X, y, sample_weight):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if not np.all((y == 0) | (y == 1)):
            raise DataError("logistic learner needs a 0/1 outcome")
        w = _normalized_sample_weight(sample_weight, X.shape[0])
        A = np.column_stack([np.ones(X.shape[0]), X])
        penalty = self.alpha * np.eye(A.shape[1])
        penalty[0, 0] = 0.0
        beta = np.zeros(A.shape[1])
        for it in range(1, self.max_iter + 1):
            p = expit(A @ beta)
            grad = A.T @ (w * (y - p)) - penalty @ beta
            curvature = w * p * (1.0 - p)
            H = (A * curvature[:, None]).T @ A + penalty
            step = linalg.solve(H + 1e-12 * np.eye(H.shape[0]), grad, assume_a="sym")
            beta = beta + step
            if np.max(np.abs(step)) < self.tol * (1.0 + np.max(np.abs(beta))):
                self.coef_ = beta
                self.n_iter_ = it
                return self
        raise ConvergenceError(f"IRLS did not converge in {self.max_iter} iterations")

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        return expit(self.coef_[0] + X @ self.coef_[1:])


LEARNERS = {"linear": WeightedRidge, "logistic": WeightedLogistic}


@dataclass
class UpliftModel:
    learner_id: str
    learner: BaseLearner
    reference_dose: float = 0.0

    def predict(self, features, treatment) -> np.ndarray:
        return self.learner.predict(np.column_stack([features, treatment]))


def binary_outcome(table: ObservationTable) -> np.ndarray:
    if BINARY_OUTCOME in table.extra:
        return table.extra[BINARY_OUTCOME]
    y = table.outcome
    if np.all((y == 0) | (y == 1)):
        return y
    raise DataError(f"table has no '{BINARY_OUTCOME}' column and a non-binary outcome")


def fit_s_learner(table: ObservationTable, weights=None, learner="logistic") -> UpliftModel:
    """One model on (features, treatment) -> outcome with per-row weights.

    ``learner`` is ``"linear"`` (continuous outcome), ``"logistic"`` (binary
    companion outcome) or any object with ``fit(X, y, sample_weight)`` and
    ``predict(X)``.
    """
    w = np.full(table.n, 1.0 / table.n) if weights is None else _check_weights(weights, table.n)
    if isinstance(learner, str):
        if learner not in LEARNERS:
            raise ValueError(f"unknown learner {learner!r}; choose from {sorted(LEARNERS)}")
        learner_id, est = learner, LEARNERS[learner]()
    else:
        learner_id, est = type(learner).__name__, learner
    y = binary_outcome(table) if learner_id == "logistic" else table.outcome
    est.fit(np.column_stack([table.features, table.treatment]), y, w)
    return UpliftModel(learner_id, est)


def predict_uplift(model: UpliftModel, table: ObservationTable, dose: Optional[float] = None) -> np.ndarray:
    """Prediction at ``dose`` minus prediction at zero treatment, per row."""
    if dose is None:
        dose = default_dose(table.treatment)
    X = table.features
    base = model.predict(X, np.full(table.n, model.reference_dose))
    if dose == model.reference_dose:
        return np.zeros(table.n)
    return model.predict(X, np.full(table.n, dose)) - base


def default_dose(treatment) -> float:
    t = np.asarray(treatment, dtype=float)
    positive = t[t > 0]
    return float(positive.mean()) if positive.size else 0.0


def uplift_curve(scores, outcome, treated) -> np.ndarray:
    """Cumulative uplift ``(mean_t(k) - mean_c(k)) * k`` for k = 1..n.

    Rows are ranked by score, descending; equal scores keep row order. While
    a prefix lacks one of the groups the curve holds its last defined value
    (0 before the first one).
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(outcome, dtype=float)
    treated = np.asarray(treated, dtype=bool)
    if not (scores.shape == y.shape == treated.shape):
        raise DataError("scores, outcome and treated mask differ in length")
    order = np.argsort(-scores, kind="stable")
    y, tr = y[order], treated[order]
    nt = np.cumsum(tr)
    nc = np.cumsum(~tr)
    yt = np.cumsum(y * tr)
    yc = np.cumsum(y * ~tr)
    k = np.arange(1, y.shape[0] + 1)
    defined = (nt > 0) & (nc > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        curve = (yt / nt - yc / nc) * k
    curve = np.where(defined, curve, np.nan)
    # carry the last defined value forward
    idx = np.where(defined, np.arange(curve.shape[0]), -1)
    np.maximum.accumulate(idx, out=idx)
    return np.where(idx >= 0, curve[np.maximum(idx, 0)], 0.0)


def auuc(uplift_scores, outcome_binary, treated_mask) -> float:
    """Mean of the cumulative uplift curve divided by n."""
    treated = np.asarray(treated_mask, dtype=bool)
    if treated.all() or not treated.any():
        raise DataError("AUUC needs both treated and control rows")
    curve = uplift_curve(uplift_scores, outcome_binary, treated)
    n = curve.shape[0]
    return float(curve.mean() / n)


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties count 1/2)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class MetricsReport:
    method: str
    auuc: float
    auc: float

    def to_dict(self) -> dict:
        return {"method": self.method, "auuc": self.auuc, "auc": self.auc}


def uplift_metrics(
    table: ObservationTable,
    weights=None,
    method: str = "unweighted",
    learner="logistic",
    dose: Optional[float] = None,
    treated_threshold: float = 0.0,
) -> MetricsReport:
    """Fit the weighted S-learner and score AUUC / AUC on the same rows.

    AUC rates the predicted outcome at the observed treatment against the
    binary outcome; AUUC ranks rows by uplift at ``dose`` and compares rows
    with ``T > treated_threshold`` against the rest.
    """
    model = fit_s_learner(table, weights, learner)
    y = binary_outcome(table)
    scores = predict_uplift(model, table, dose)
    treated = table.treatment > treated_threshold
    fitted = model.predict(table.features, table.treatment)
    return MetricsReport(method, auuc(scores, y, treated), auc(fitted, y))


def compare_methods(
    table: ObservationTable,
    weights_by_method: Dict[str, np.ndarray],
    idx: Optional[StratumIndex] = None,
    learner="logistic",
    metrics: bool = True,
) -> dict:
    """Correlation and uplift tables for several weightings of one dataset."""
    out = {"correlation": {}, "metrics": {}}
    for method, w in weights_by_method.items():
        rep = correlation_report(table, w, idx)
        out["correlation"][method] = rep
        if metrics:
            out["metrics"][method] = uplift_metrics(table, w, method, learner)
    return out
