import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tsebct.data_model import DataError, ObservationTable, build_stratum_index
from tsebct.evaluate import (
    ConvergenceError,
    WeightedLogistic,
    WeightedRidge,
    auc,
    auuc,
    correlation_report,
    fit_s_learner,
    predict_uplift,
    uplift_curve,
    uplift_metrics,
    weighted_pearson,
)


def pearson_oracle(x, y, w):
    W = sum(w)
    mx = sum(wi * xi for wi, xi in zip(w, x)) / W
    my = sum(wi * yi for wi, yi in zip(w, y)) / W
    sxy = sum(wi * (xi - mx) * (yi - my) for wi, xi, yi in zip(w, x, y))
    sxx = sum(wi * (xi - mx) ** 2 for wi, xi in zip(w, x))
    syy = sum(wi * (yi - my) ** 2 for wi, yi in zip(w, y))
    return sxy / (sxx * syy) ** 0.5


def auc_oracle(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return total / (len(pos) * len(neg))


def auuc_oracle(scores, y, treated):
    """Prefix by prefix, straight from the definition."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    curve, last = [], 0.0
    for k in range(1, len(order) + 1):
        prefix = order[:k]
        t = [y[i] for i in prefix if treated[i]]
        c = [y[i] for i in prefix if not treated[i]]
        if t and c:
            last = (sum(t) / len(t) - sum(c) / len(c)) * k
        curve.append(last)
    return sum(curve) / len(curve) / len(curve)


def test_pearson_uniform_matches_numpy():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=50), rng.normal(size=50)
    assert weighted_pearson(x, y, np.ones(50)) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)


@given(st.integers(0, 1000))
def test_pearson_affine(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=10)
    assert weighted_pearson(x, 2 * x + 3, rng.uniform(0.1, 1, size=10)) == pytest.approx(1.0, abs=1e-12)


def test_pearson_four_points():
    w, x, y = (0.4, 0.3, 0.2, 0.1), (1, 2, 3, 4), (1, 3, 2, 4)
    assert weighted_pearson(x, y, w) == pytest.approx(pearson_oracle(x, y, w), abs=1e-14)


@given(st.integers(0, 10_000))
def test_pearson_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    x, y, w = rng.normal(size=8), rng.normal(size=8), rng.uniform(size=8)
    assert weighted_pearson(x, y, w) == pytest.approx(pearson_oracle(x, y, w), abs=1e-12)


def _table(n=200, seed=0, outcome=None):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    T = np.maximum(0, X[:, 0] + rng.normal(size=n))
    Y = outcome(X, T) if outcome else X[:, 1] + T + rng.normal(size=n)
    return ObservationTable(X, T, Y, np.arange(n) % 2, extra={"Y_binary": (Y > np.median(Y)).astype(float)})


def test_uniform_weights_fixed_point():
    t = _table()
    rep = correlation_report(t, np.ones(t.n), build_stratum_index(t))
    np.testing.assert_array_equal(rep.weighted, rep.unweighted)
    assert len(rep.per_stratum) == 2
    assert rep.average_absolute_weighted == rep.average_absolute_unweighted


def test_weights_validated():
    t = _table()
    with pytest.raises(DataError, match="3 weights for 200 rows"):
        correlation_report(t, np.ones(3))
    with pytest.raises(DataError):
        correlation_report(t, -np.ones(t.n))


def test_linear_learner_recovers_coefficients():
    beta = np.array([0.5, -2.0, 1.5])
    t = _table(outcome=lambda X, T: 1.0 + X @ beta + 2.0 * T)
    model = fit_s_learner(t, np.random.default_rng(1).uniform(0.2, 1, t.n), learner="linear")
    np.testing.assert_allclose(model.learner.coef_, np.r_[1.0, beta, 2.0], atol=1e-6)
    np.testing.assert_allclose(predict_uplift(model, t, dose=0.7), 1.4, atol=1e-6)
    np.testing.assert_array_equal(predict_uplift(model, t, dose=0.0), 0.0)


def test_uplift_grows_with_dose():
    t = _table()
    model = fit_s_learner(t, learner="linear")
    assert model.learner.coef_[-1] > 0
    assert np.all(predict_uplift(model, t, 1.0) > predict_uplift(model, t, 0.5))


@pytest.mark.parametrize("learner", ["linear", "logistic"])
def test_zero_weight_rows_are_ignored(learner):
    t = _table(seed=3)
    keep = np.arange(60)
    w = np.zeros(t.n)
    w[keep] = 1.0
    full = fit_s_learner(t, w, learner).learner.coef_
    sub = fit_s_learner(t.take(keep), None, learner).learner.coef_
    np.testing.assert_allclose(full, sub, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("learner", ["linear", "logistic"])
def test_weight_scale_invariance(learner):
    t = _table(seed=4)
    w = np.random.default_rng(0).uniform(0.1, 1, t.n)
    a = fit_s_learner(t, w, learner).predict(t.features, t.treatment)
    b = fit_s_learner(t, 7 * w, learner).predict(t.features, t.treatment)
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_logistic_recovers_truth():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(20_000, 2))
    y = (rng.uniform(size=20_000) < 1 / (1 + np.exp(-(0.3 + X @ [1.0, -0.5])))).astype(float)
    est = WeightedLogistic(alpha=0.0).fit(X, y, np.ones(20_000))
    np.testing.assert_allclose(est.coef_, [0.3, 1.0, -0.5], atol=0.06)


def test_logistic_reports_nonconvergence():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(100, 2))
    y = (X[:, 0] > 0).astype(float)
    with pytest.raises(ConvergenceError):
        WeightedLogistic(alpha=0.0, max_iter=2).fit(X, y, np.ones(100))


def test_logistic_needs_binary_outcome():
    with pytest.raises(DataError):
        WeightedLogistic().fit(np.zeros((3, 1)), np.array([0.0, 0.5, 1.0]), np.ones(3))


def test_ridge_learner_direct():
    X = np.arange(10.0).reshape(-1, 1)
    est = WeightedRidge().fit(X, 3 * X[:, 0] - 1, np.ones(10))
    np.testing.assert_allclose(est.predict([[20.0]]), [59.0], atol=1e-6)


def test_auuc_four_row_toy():
    scores = [0.9, 0.1, 0.8, 0.2]
    y = [1, 0, 0, 1]
    treated = [True, True, False, False]
    # prefixes: {t1}: undefined -> 0; {t1,c0}: (1-0)*2=2; {t1,c0,c1}: (1-0.5)*3=1.5; all: (0.5-0.5)*4=0
    assert auuc(scores, y, treated) == pytest.approx((0 + 2 + 1.5 + 0) / 4 / 4)
    assert auuc(scores, y, treated) == pytest.approx(auuc_oracle(scores, y, treated))


def test_auuc_flat_scores():
    rng = np.random.default_rng(0)
    n = 20_000
    treated = rng.uniform(size=n) < 0.5
    y = (rng.uniform(size=n) < np.where(treated, 0.6, 0.4)).astype(float)
    # tied scores keep row order, so the curve rises linearly to the full uplift
    assert auuc(np.zeros(n), y, treated) == pytest.approx(0.2 / 2, abs=0.01)
    y0 = (rng.uniform(size=n) < 0.5).astype(float)
    assert abs(auuc(np.zeros(n), y0, treated)) < 0.01


@given(st.integers(0, 10_000))
def test_auuc_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=30)
    y = rng.integers(0, 2, 30)
    tr = rng.uniform(size=30) < 0.5
    tr[:2] = [True, False]
    assert auuc(s, y, tr) == auuc(np.exp(3 * s) + 1, y, tr)


def test_reversed_informative_scorer_scores_lower():
    y = [1, 1, 0, 0, 0, 1]
    treated = [True, True, True, False, False, False]
    good = [6, 5, 4, 3, 2, 1]  # treated responders first, control responders last
    assert auuc([-s for s in good], y, treated) < auuc(good, y, treated)


def test_auuc_needs_both_groups():
    with pytest.raises(DataError):
        auuc([1, 2], [0, 1], [True, True])


def test_curve_carries_last_value():
    curve = uplift_curve([3, 2, 1], [1, 0, 1], [True, False, True])
    assert curve.tolist() == pytest.approx([0.0, 2.0, 3.0])


def test_auc_basics():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    rng = np.random.default_rng(0)
    assert abs(auc(rng.uniform(size=20_000), rng.integers(0, 2, 20_000)) - 0.5) < 0.02


def test_auc_with_tie():
    scores, labels = [0.1, 0.4, 0.4, 0.7, 0.2], [0, 1, 0, 1, 0]
    assert auc(scores, labels) == pytest.approx(auc_oracle(scores, labels))
    assert auc_oracle(scores, labels) == pytest.approx(5.5 / 6)


@given(st.lists(st.integers(0, 5), min_size=2, max_size=50), st.integers(0, 10_000))
def test_auc_pair_counting(scores, seed):
    labels = np.random.default_rng(seed).integers(0, 2, len(scores))
    labels[:2] = [0, 1]
    assert auc(scores, labels) == pytest.approx(auc_oracle(scores, labels), abs=1e-12)


def test_auuc_all_permutations_small():
    y = [1, 0, 1, 0, 1]
    treated = [True, False, True, True, False]
    for perm in itertools.permutations(range(5)):
        s = np.array(perm, dtype=float)
        assert auuc(s, y, treated) == pytest.approx(auuc_oracle(list(s), y, treated), abs=1e-12)


def test_uplift_metrics_report():
    t = _table(n=500)
    rep = uplift_metrics(t, None, "unweighted")
    assert rep.method == "unweighted"
    assert 0.5 < rep.auc <= 1.0
