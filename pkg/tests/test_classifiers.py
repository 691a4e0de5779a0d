import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from bugsev.classifiers import (
    Calibrator,
    KnnModel,
    LinearModel,
    cosine_distances,
    fit_knn,
    fit_linear_svm,
    fit_logistic,
    fit_multinomial_nb,
    fit_passive_aggressive,
    fit_platt,
    fit_sgd_logloss,
    hinge_objective,
    knn_neighbors,
    knn_predict,
    knn_predict_proba,
    linear_predict,
    linear_predict_proba,
    logistic_objective,
    nb_predict,
    nb_predict_proba,
    pa_step,
    sgd_learning_rate,
)
from bugsev.errors import FitError, PredictError
from bugsev.features import SparseVector


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def random_problem(rng, n=30, d=20):
    X = rng.normal(size=(n, d))
    X[rng.random((n, d)) < 0.3] = 0.0
    y = (rng.random(n) < 0.4).astype(float)
    sw = rng.uniform(0.2, 3.0, size=n)
    return sp.csr_matrix(X), y, sw


def numeric_grad(f, w, b, eps=1e-6):
    gw = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = eps
        gw[j] = (f(w + e, b) - f(w - e, b)) / (2 * eps)
    gb = (f(w, b + eps) - f(w, b - eps)) / (2 * eps)
    return np.append(gw, gb)


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


# ---------------------------------------------------------------- gradients

def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    X, y, sw = random_problem(rng)
    worst = 0.0
    for _ in range(100):
        w, b, lam = rng.normal(size=20), float(rng.normal()), float(rng.uniform(0, 0.1))
        _, gw, gb = logistic_objective(w, b, X, y, sw, lam)
        fd = numeric_grad(lambda w_, b_: logistic_objective(w_, b_, X, y, sw, lam)[0], w, b)
        worst = max(worst, rel_err(np.append(gw, gb), fd))
    assert worst < 1e-5


def test_hinge_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    X, y, sw = random_problem(rng)
    sign = 2 * y - 1
    checked, worst = 0, 0.0
    while checked < 100:
        w, b, lam = rng.normal(size=20) * 0.3, float(rng.normal()), float(rng.uniform(0, 0.1))
        margins = sign * (X @ w + b)
        if np.min(np.abs(margins - 1.0)) < 1e-3:
            continue
        _, gw, gb = hinge_objective(w, b, X, y, sw, lam)
        fd = numeric_grad(lambda w_, b_: hinge_objective(w_, b_, X, y, sw, lam)[0], w, b)
        worst = max(worst, rel_err(np.append(gw, gb), fd))
        checked += 1
    assert worst < 1e-5


def test_hinge_flat_region_only_regularizer():
    X = sp.csr_matrix(np.array([[2.0, 0.0]]))
    w = np.array([1.0, 0.5])
    _, gw, gb = hinge_objective(w, 0.0, X, np.array([1.0]), np.ones(1), 0.3)
    np.testing.assert_allclose(gw, 0.3 * w)
    assert gb == 0.0


# ---------------------------------------------------------------- logistic

def test_initial_probability_is_half():
    m = LinearModel(np.zeros(3), 0.0, "log", {})
    x = SparseVector.from_dict({0: 4.0, 2: -1.0}, 3)
    assert linear_predict(m, None, x) == (0.0, 0.5)


def test_first_step_is_half_lr_times_x():
    X = sp.csr_matrix(np.array([[1.0, 0.0, 0.0]]))
    m = fit_logistic(X, [1], None, {"lam": 0.0, "epochs": 1, "learning_rate": 0.7})
    np.testing.assert_allclose(m.weights, [0.35, 0.0, 0.0], rtol=0, atol=1e-15)


def test_regularization_shrinks_weights():
    rng = np.random.default_rng(2)
    X, y, _ = random_problem(rng, n=50, d=8)
    a = fit_logistic(X, y, None, {"lam": 0.0})
    b = fit_logistic(X, y, None, {"lam": 0.1})
    assert np.linalg.norm(b.weights) < np.linalg.norm(a.weights)


def test_doubled_weight_equals_duplicated_row():
    rng = np.random.default_rng(3)
    X, y, _ = random_problem(rng, n=12, d=5)
    sw = np.ones(12)
    sw[4] = 2.0
    a = fit_logistic(X, y, sw)
    Xd = sp.vstack([X, X[4]])
    b = fit_logistic(Xd, np.append(y, y[4]))
    np.testing.assert_allclose(a.weights, b.weights, atol=1e-6)
    assert a.bias == pytest.approx(b.bias, abs=1e-6)


def test_non_finite_features_rejected():
    with pytest.raises(FitError):
        fit_logistic(sp.csr_matrix(np.array([[np.nan]])), [1])


def test_sigmoid_example_and_dimension_check():
    m = LinearModel(np.array([2.0, 0.0]), -1.0, "log", {})
    score, p = linear_predict(m, None, SparseVector.from_dict({0: 1.0}, 2))
    assert score == 1.0 and p == pytest.approx(0.7311, abs=5e-5)
    with pytest.raises(PredictError):
        linear_predict(m, None, SparseVector.from_dict({0: 1.0}, 3))


# ---------------------------------------------------------------- SVM + Platt

def test_svm_separable_pair():
    X = sp.csr_matrix(np.array([[1.0], [-1.0]]))
    model, cal = fit_linear_svm(X, [1, 0])
    s = X @ model.weights + model.bias
    assert s[0] > 0 > s[1]
    p = linear_predict_proba(model, cal, X)
    assert p[0] > 0.5 > p[1]


def test_svm_single_class_fails_calibration():
    with pytest.raises(FitError):
        fit_linear_svm(sp.csr_matrix(np.ones((4, 2))), [1, 1, 1, 1])


@pytest.mark.parametrize("rate", [0.128, 0.3, 0.5])
def test_platt_constant_scores_give_base_rate(rate):
    n = 1000
    y = np.zeros(n)
    y[: int(rate * n)] = 1
    cal = fit_platt(np.full(n, 0.37), y)
    assert cal(np.array([0.37]))[0] == pytest.approx(rate, abs=0.02)


def test_calibrated_probabilities_monotone_and_open_interval():
    rng = np.random.default_rng(4)
    X, y, _ = random_problem(rng, n=120, d=6)
    y = (np.asarray(X @ np.arange(1.0, 7.0)) + rng.normal(scale=0.5, size=120) > 0).astype(float)
    model, cal = fit_linear_svm(X, y)
    assert cal.A < 0
    scores = X @ model.weights + model.bias
    s = np.linspace(scores.min() - 1, scores.max() + 1, 2001)
    p = cal(s)
    assert np.all((p > 0) & (p < 1))
    assert np.all(np.diff(p) > 0)
    # far outside the data the sigmoid saturates in floating point but stays ordered
    assert np.all(np.diff(cal(np.linspace(-1e3, 1e3, 2001))) >= 0)


# ---------------------------------------------------------------- PA

def test_pa_examples():
    w = np.zeros(3)
    tau = pa_step(w, np.array([1]), np.array([1.0]), +1.0, 1.0)
    assert tau == 1.0 and w.tolist() == [0.0, 1.0, 0.0]
    w = np.array([0.0, 2.0, 0.0])
    assert pa_step(w, np.array([1]), np.array([1.0]), +1.0, 1.0) == 0.0
    w = np.array([4.0])
    tau = pa_step(w, np.array([0]), np.array([1.0]), -1.0, 0.5)
    assert tau == 0.5 and w.tolist() == [3.5]
    w = np.ones(2)
    assert pa_step(w, np.array([], dtype=int), np.array([]), 1.0, 1.0) == 0.0


def test_pa_loss_never_increases_per_update():
    rng = np.random.default_rng(5)
    w = rng.normal(size=10)
    for _ in range(1000):
        idx = np.sort(rng.choice(10, size=int(rng.integers(1, 6)), replace=False))
        val = rng.normal(size=idx.size)
        sign = float(rng.choice([-1.0, 1.0]))
        before = max(0.0, 1 - sign * float(w[idx] @ val))
        pa_step(w, idx, val, sign, float(rng.uniform(0.01, 3)))
        after = max(0.0, 1 - sign * float(w[idx] @ val))
        assert after <= before + 1e-12


def test_pa_fit_separable_and_deterministic():
    X = sp.csr_matrix(np.array([[1.0, 0], [0, 1.0], [1.0, 0.1], [0.1, 1.0]]))
    y = [1, 0, 1, 0]
    a = fit_passive_aggressive(X, y, None, {"seed": 3})
    b = fit_passive_aggressive(X, y, None, {"seed": 3})
    assert a.weights.tobytes() == b.weights.tobytes() and a.bias == 0.0
    assert np.all((linear_predict_proba(a, None, X) >= 0.5) == np.array(y, bool))
    with pytest.raises(FitError):
        fit_passive_aggressive(X, y, None, {"C": 0.0})


# ---------------------------------------------------------------- SGD

def test_sgd_schedule_and_single_update():
    assert sgd_learning_rate(0.1, 1e-4, 0) == 0.1
    assert sgd_learning_rate(0.1, 1e-4, 1000) == pytest.approx(0.1 / 1.01)
    m = fit_sgd_logloss(sp.csr_matrix(np.array([[1.0, 0.0]])), [1], None, {"eta0": 1.0, "lam": 0.0, "epochs": 1})
    assert m.weights.tolist() == [0.5, 0.0]


def test_sgd_deterministic():
    rng = np.random.default_rng(6)
    X, y, sw = random_problem(rng, n=40, d=5)
    a = fit_sgd_logloss(X, y, sw, {"seed": 11})
    b = fit_sgd_logloss(X, y, sw, {"seed": 11})
    c = fit_sgd_logloss(X, y, sw, {"seed": 12})
    assert a.weights.tobytes() == b.weights.tobytes()
    assert a.weights.tobytes() != c.weights.tobytes()


def sgd_oracle(X, y, sw, eta0, lam, epochs, seed):
    """Dense per-sample SGD without the scaled-weight trick."""
    from bugsev.seeding import rng_for

    X = X.toarray()
    w, b, t = np.zeros(X.shape[1]), 0.0, 0
    rng = rng_for(seed, "sgd")
    for _ in range(epochs):
        for i in rng.permutation(len(y)):
            eta = eta0 / (1 + lam * eta0 * t)
            r = sw[i] * (sigmoid(float(X[i] @ w) + b) - y[i])
            w = (1 - eta * lam) * w - eta * r * X[i]
            b -= eta * r
            t += 1
    return w, b


def test_sgd_matches_dense_oracle():
    rng = np.random.default_rng(7)
    X, y, sw = random_problem(rng, n=25, d=6)
    m = fit_sgd_logloss(X, y, sw, {"eta0": 0.3, "lam": 0.05, "epochs": 4, "seed": 2})
    w, b = sgd_oracle(X, y, sw, 0.3, 0.05, 4, 2)
    np.testing.assert_allclose(m.weights, w, atol=1e-10)
    assert m.bias == pytest.approx(b, abs=1e-10)


@pytest.mark.parametrize("fit", [fit_logistic, fit_sgd_logloss, fit_passive_aggressive])
def test_probability_monotone_in_score(fit):
    rng = np.random.default_rng(8)
    X, y, _ = random_problem(rng, n=30, d=1)
    model = fit(X, y)
    grid = sp.csr_matrix(np.linspace(-5, 5, 101)[:, None])
    p = linear_predict_proba(model, None, grid)
    s = grid @ model.weights + model.bias
    order = np.argsort(s, kind="stable")
    assert np.all(np.diff(p[order]) >= 0)
    assert np.all((p >= 0) & (p <= 1))


# ---------------------------------------------------------------- naive Bayes

def test_nb_laplace_example():
    X = sp.csr_matrix(np.array([[2.0, 0, 1, 1], [0, 0, 0, 0], [0, 1, 0, 0]]))
    m = fit_multinomial_nb(X, [1, 0, 0], alpha=1.0)
    assert math.exp(m.log_likelihood[1, 0]) == pytest.approx(3 / 8, abs=1e-15)
    # LOW rows sum to (0,1,0,0)
    np.testing.assert_allclose(np.exp(m.log_likelihood[0]), [1 / 5, 2 / 5, 1 / 5, 1 / 5])
    np.testing.assert_allclose(np.exp(m.log_likelihood).sum(axis=1), [1, 1], atol=1e-9)


def test_nb_zero_count_class_is_uniform():
    X = sp.csr_matrix(np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 0.0]]))
    m = fit_multinomial_nb(X, [1, 0])
    np.testing.assert_allclose(np.exp(m.log_likelihood[0]), [1 / 3] * 3)


def test_nb_priors_and_empty_input():
    y = np.array([1] * 128 + [0] * 872)
    X = sp.csr_matrix(np.random.default_rng(0).random((1000, 4)))
    m = fit_multinomial_nb(X, y)
    assert m.log_prior[1] == pytest.approx(math.log(0.128)) and m.log_prior[0] == pytest.approx(math.log(0.872))
    assert nb_predict(m, SparseVector.zeros(4)) == pytest.approx(0.128, abs=1e-12)


def test_nb_equal_likelihoods_give_prior():
    X = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]))
    m = fit_multinomial_nb(X, [1, 0, 0, 0])
    assert nb_predict(m, SparseVector.from_dict({0: 3.0, 1: 0.5}, 2)) == pytest.approx(0.25, abs=1e-12)


def test_nb_rejects_negative_features():
    with pytest.raises(FitError):
        fit_multinomial_nb(sp.csr_matrix(np.array([[-1.0], [1.0]])), [1, 0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 10))
def test_nb_matches_brute_force_bayes(seed, V):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 3, size=(12, V)).astype(float) * rng.random((12, V))
    y = np.array([1] * 5 + [0] * 7)
    m = fit_multinomial_nb(sp.csr_matrix(X), y, alpha=0.5)
    q = rng.integers(0, 3, size=V).astype(float)
    joint = []
    for c in (0, 1):
        counts = X[y == c].sum(axis=0)
        theta = (counts + 0.5) / (counts.sum() + 0.5 * V)
        prior = np.mean(y == c)
        joint.append(prior * np.prod(theta ** q))
    expected = joint[1] / (joint[0] + joint[1])
    got = nb_predict_proba(m, sp.csr_matrix(q))[0]
    assert got == pytest.approx(expected, abs=1e-9)
    assert got + (1 - got) == 1.0


# ---------------------------------------------------------------- KNN

def test_cosine_distance_example_and_zero_rows():
    A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    B = sp.csr_matrix(np.array([[1.0, 1.0], [0.0, 0.0]]))
    d = cosine_distances(A, B)
    assert d[0, 0] == pytest.approx(1 - 1 / math.sqrt(2), abs=1e-15)
    assert d[0, 0] == pytest.approx(0.2929, abs=5e-5)
    assert d[0, 1] == d[1, 0] == d[1, 1] == 1.0


def test_cosine_distances_match_dense_formula():
    rng = np.random.default_rng(9)
    A, B = rng.random((7, 5)), rng.random((9, 5))
    d = cosine_distances(sp.csr_matrix(A), sp.csr_matrix(B))
    for i in range(7):
        for j in range(9):
            ref = 1 - A[i] @ B[j] / (np.linalg.norm(A[i]) * np.linalg.norm(B[j]))
            assert d[i, j] == pytest.approx(ref, abs=1e-12)


def test_knn_examples():
    X = sp.csr_matrix(np.array([[1.0, 0], [0, 1.0], [1.0, 1.0]]))
    m = fit_knn(X, [1, 0, 1], k=1)
    assert knn_predict(m, SparseVector.from_dict({1: 3.0}, 2)) == 0.0
    assert knn_predict(m, SparseVector.from_dict({0: 1.0}, 2)) == 1.0
    m3 = fit_knn(X, [1, 1, 0], k=3)
    assert knn_predict(m3, SparseVector.from_dict({0: 1.0}, 2)) == pytest.approx(2 / 3)


def test_knn_errors():
    with pytest.raises(FitError):
        fit_knn(sp.csr_matrix(np.ones((2, 2))), [1, 0], k=3)
    empty = KnnModel(sp.csr_matrix((0, 2)), np.array([], dtype=np.int8), 1)
    with pytest.raises(PredictError):
        knn_predict_proba(empty, sp.csr_matrix(np.ones((1, 2))))


@pytest.mark.parametrize("seed", range(5))
def test_knn_matches_full_sort_oracle(seed):
    rng = np.random.default_rng(seed)
    # coarse integer data so exact distance ties occur
    train = rng.integers(0, 3, size=(200, 4)).astype(float)
    query = rng.integers(0, 3, size=(60, 4)).astype(float)
    y = rng.integers(0, 2, size=200)
    m = fit_knn(sp.csr_matrix(train), y, k=7)
    got = knn_neighbors(m, sp.csr_matrix(query), chunk=17)
    d = cosine_distances(sp.csr_matrix(query), m.X)
    for r in range(len(query)):
        ranked = sorted(range(200), key=lambda j: (d[r, j], j))
        assert got[r].tolist() == ranked[:7]
    np.testing.assert_array_equal(knn_predict_proba(m, sp.csr_matrix(query)), y[got].mean(axis=1))


def test_calibrator_round_trip():
    c = Calibrator(-1.5, 0.25)
    assert Calibrator.from_dict(c.to_dict()) == c
