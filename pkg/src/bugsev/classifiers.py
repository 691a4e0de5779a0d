"""Linear, Bayesian and distance-based learners over sparse rows.

Labels are 0/1 arrays with 1 = HIGH. Every ``fit_*`` takes a CSR matrix and
per-row sample weights; prediction helpers accept either a CSR matrix (batch)
or a single :class:`~bugsev.features.SparseVector`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, logsumexp

from bugsev.corpus import make_folds
from bugsev.errors import FitError, PredictError, StratificationError
from bugsev.features import SparseVector
from bugsev.seeding import derive_seed, rng_for


def _as_csr(x, dim: int | None = None) -> sp.csr_matrix:
    if isinstance(x, SparseVector):
        return sp.csr_matrix((x.values, x.indices, [0, x.indices.size]), shape=(1, x.dim))
    X = sp.csr_matrix(x, dtype=np.float64)
    return X


def _check_fit_inputs(X, y, sample_weights) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    X = _as_csr(X)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise FitError("empty design matrix")
    if X.shape[0] != y.size:
        raise FitError("X and y differ in length")
    if not np.all(np.isfinite(X.data)):
        raise FitError("non-finite feature values")
    sw = np.ones(y.size) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    if sw.shape != y.shape or np.any(sw <= 0) or not np.all(np.isfinite(sw)):
        raise FitError("sample weights must be positive and finite, one per row")
    return X, y, sw


# -- linear models -----------------------------------------------------------

@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float
    loss_kind: str  # "log" | "hinge" | "pa"
    config: Mapping = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.weights.size

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias,
                "loss_kind": self.loss_kind, "config": dict(self.config)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinearModel":
        return cls(np.asarray(d["weights"], dtype=np.float64), float(d["bias"]), d["loss_kind"], dict(d["config"]))


@dataclass(frozen=True)
class Calibrator:
    """Platt sigmoid ``1 / (1 + exp(A * s + B))``."""

    A: float
    B: float

    def __call__(self, scores):
        return expit(-(self.A * np.asarray(scores, dtype=np.float64) + self.B))

    def to_dict(self) -> dict:
        return {"A": self.A, "B": self.B}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Calibrator":
        return cls(float(d["A"]), float(d["B"]))


def logistic_objective(w, b, X, y, sw, lam):
    """Weighted mean log loss plus ``lam/2 * ||w||^2`` and its gradient."""
    s = X @ w + b
    sign = 2.0 * y - 1.0
    total = sw.sum()
    loss = float(sw @ np.logaddexp(0.0, -sign * s)) / total + 0.5 * lam * float(w @ w)
    r = sw * (expit(s) - y) / total
    return loss, X.T @ r + lam * w, float(r.sum())


def hinge_objective(w, b, X, y, sw, lam):
    """Weighted mean hinge loss plus ``lam/2 * ||w||^2`` and a subgradient.

    At margins exactly 1 the zero branch is taken.
    """
    s = X @ w + b
    sign = 2.0 * y - 1.0
    total = sw.sum()
    margin = sign * s
    loss = float(sw @ np.maximum(0.0, 1.0 - margin)) / total + 0.5 * lam * float(w @ w)
    r = np.where(margin < 1.0, -sw * sign, 0.0) / total
    return loss, X.T @ r + lam * w, float(r.sum())


LOGISTIC_DEFAULTS = {"lam": 1e-4, "epochs": 100, "learning_rate": 2.0}
SVM_DEFAULTS = {"lam": 1e-4, "epochs": 100, "learning_rate": 1.0, "calibration_folds": 3, "seed": 0}
PA_DEFAULTS = {"C": 1.0, "epochs": 10, "seed": 0}
SGD_DEFAULTS = {"eta0": 0.1, "lam": 1e-4, "epochs": 10, "seed": 0}
NB_DEFAULTS = {"alpha": 1.0}
KNN_DEFAULTS = {"k": 5}


def _merge(defaults: Mapping, config: Mapping | None) -> dict:
    out = dict(defaults)
    if config:
        unknown = set(config) - set(defaults)
        if unknown:
            raise FitError(f"unknown hyperparameters: {sorted(unknown)}")
        out.update(config)
    return out


def fit_logistic(X, y, sample_weights=None, config: Mapping | None = None) -> LinearModel:
    """Full-batch gradient descent from zero weights for a fixed epoch budget."""
    cfg = _merge(LOGISTIC_DEFAULTS, config)
    X, y, sw = _check_fit_inputs(X, y, sample_weights)
    w = np.zeros(X.shape[1])
    b = 0.0
    lr = cfg["learning_rate"]
    for _ in range(int(cfg["epochs"])):
        _, gw, gb = logistic_objective(w, b, X, y, sw, cfg["lam"])
        w = w - lr * gw
        b = b - lr * gb
    return LinearModel(w, float(b), "log", cfg)


def _fit_hinge(X, y, sw, cfg) -> LinearModel:
    w = np.zeros(X.shape[1])
    b = 0.0
    best = (math.inf, w, b)
    for t in range(int(cfg["epochs"])):
        loss, gw, gb = hinge_objective(w, b, X, y, sw, cfg["lam"])
        if loss < best[0]:
            best = (loss, w, b)
        step = cfg["learning_rate"] / math.sqrt(1.0 + t)
        w = w - step * gw
        b = b - step * gb
    loss = hinge_objective(w, b, X, y, sw, cfg["lam"])[0]
    if loss < best[0]:
        best = (loss, w, b)
    return LinearModel(best[1], float(best[2]), "hinge", cfg)


def fit_platt(scores, y) -> Calibrator:
    """Platt scaling by Newton's method with backtracking.

    Targets are smoothed toward the class priors as in Platt's original
    procedure, which keeps the optimum finite on separable scores.
    """
    f = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    n_pos = int(np.count_nonzero(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise FitError("calibration holdout contains a single class")
    t = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def objective(A, B):
        z = A * f + B
        # -[t log p + (1-t) log(1-p)] with p = 1/(1+exp(z))
        return float(np.sum(t * np.logaddexp(0.0, z) + (1.0 - t) * np.logaddexp(0.0, -z)))

    A, B = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = objective(A, B)
    sigma = 1e-12
    for _ in range(100):
        p = expit(-(A * f + B))
        d1 = t - p
        d2 = p * (1.0 - p)
        h11 = sigma + float(d2 @ (f * f))
        h22 = sigma + float(d2.sum())
        h21 = float(d2 @ f)
        g1 = float(d1 @ f)
        g2 = float(d1.sum())
        if abs(g1) < 1e-10 and abs(g2) < 1e-10:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = objective(nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2.0
        else:
            break
    return Calibrator(float(A), float(B))


def fit_linear_svm(X, y, sample_weights=None, config: Mapping | None = None) -> tuple[LinearModel, Calibrator]:
    """Hinge-loss subgradient descent plus Platt calibration.

    The calibrator is fitted on out-of-fold decision scores from an internal
    stratified split of the training rows (fewer folds when a class is too
    small; in-sample scores when a class has a single row). The returned
    model is refit on all rows.
    """
    cfg = _merge(SVM_DEFAULTS, config)
    X, y, sw = _check_fit_inputs(X, y, sample_weights)
    n_pos = int(np.count_nonzero(y == 1))
    folds = min(int(cfg["calibration_folds"]), n_pos, y.size - n_pos)
    model = _fit_hinge(X, y, sw, cfg)
    if folds < 2:
        return model, fit_platt(X @ model.weights + model.bias, y)
    try:
        plan = make_folds(y.astype(np.int64).tolist(), folds, derive_seed(cfg["seed"], "platt"))
    except StratificationError as exc:
        raise FitError(f"calibration split failed: {exc}") from None
    oof = np.empty(y.size)
    for fold in range(folds):
        tr, te = plan.train_test(fold)
        m = _fit_hinge(X[tr], y[tr], sw[tr], cfg)
        oof[te] = X[te] @ m.weights + m.bias
    return model, fit_platt(oof, y)


def pa_step(w: np.ndarray, x_idx, x_val, sign: float, C: float) -> float:
    """One PA-I update in place; returns the step size taken."""
    sq = float(x_val @ x_val)
    if sq == 0.0:
        return 0.0
    loss = max(0.0, 1.0 - sign * float(w[x_idx] @ x_val))
    if loss == 0.0:
        return 0.0
    tau = min(C, loss / sq)
    w[x_idx] += tau * sign * x_val
    return tau


def fit_passive_aggressive(X, y, sample_weights=None, config: Mapping | None = None) -> LinearModel:
    """PA-I online updates over seeded shuffles; the aggressiveness cap is
    scaled by each row's sample weight. No intercept is learned."""
    cfg = _merge(PA_DEFAULTS, config)
    X, y, sw = _check_fit_inputs(X, y, sample_weights)
    if cfg["C"] <= 0:
        raise FitError("C must be positive")
    w = np.zeros(X.shape[1])
    sign = 2.0 * y - 1.0
    rng = rng_for(cfg["seed"], "pa")
    indptr, indices, data = X.indptr, X.indices, X.data
    for _ in range(int(cfg["epochs"])):
        for i in rng.permutation(y.size):
            lo, hi = indptr[i], indptr[i + 1]
            pa_step(w, indices[lo:hi], data[lo:hi], sign[i], cfg["C"] * sw[i])
    return LinearModel(w, 0.0, "pa", cfg)


def sgd_learning_rate(eta0: float, lam: float, t: int) -> float:
    return eta0 / (1.0 + lam * eta0 * t)


def fit_sgd_logloss(X, y, sample_weights=None, config: Mapping | None = None) -> LinearModel:
    """Per-sample SGD on weighted log loss with L2 shrinkage."""
    cfg = _merge(SGD_DEFAULTS, config)
    X, y, sw = _check_fit_inputs(X, y, sample_weights)
    eta0, lam = cfg["eta0"], cfg["lam"]
    if eta0 <= 0:
        raise FitError("eta0 must be positive")
    # w = scale * v keeps the L2 shrink O(1) per step
    v = np.zeros(X.shape[1])
    scale = 1.0
    b = 0.0
    t = 0
    rng = rng_for(cfg["seed"], "sgd")
    indptr, indices, data = X.indptr, X.indices, X.data
    for _ in range(int(cfg["epochs"])):
        for i in rng.permutation(y.size):
            eta = sgd_learning_rate(eta0, lam, t)
            lo, hi = indptr[i], indptr[i + 1]
            idx, val = indices[lo:hi], data[lo:hi]
            s = scale * float(v[idx] @ val) + b
            r = sw[i] * (expit(s) - y[i])
            scale *= 1.0 - eta * lam
            if scale < 1e-9:
                v *= scale
                scale = 1.0
            v[idx] -= (eta * r / scale) * val
            b -= eta * r
            t += 1
    return LinearModel(v * scale, float(b), "log", cfg)


def linear_scores(model: LinearModel, X) -> np.ndarray:
    X = _as_csr(X)
    if X.shape[1] != model.dim:
        raise PredictError(f"dimension mismatch: model {model.dim}, input {X.shape[1]}")
    return X @ model.weights + model.bias


def linear_predict_proba(model: LinearModel, calibrator: Calibrator | None, X) -> np.ndarray:
    s = linear_scores(model, X)
    if model.loss_kind == "hinge":
        if calibrator is None:
            raise PredictError("hinge model requires a calibrator")
        return calibrator(s)
    return np.clip(expit(s), 0.0, 1.0)


def linear_predict(model: LinearModel, calibrator: Calibrator | None, x: SparseVector) -> tuple[float, float]:
    """(score, probability of HIGH) for one row."""
    score = float(linear_scores(model, x)[0])
    return score, float(linear_predict_proba(model, calibrator, x)[0])


# -- naive Bayes -------------------------------------------------------------

@dataclass(frozen=True)
class NaiveBayesModel:
    log_prior: np.ndarray  # index 0 = LOW, 1 = HIGH
    log_likelihood: np.ndarray  # shape (2, dim)
    alpha: float

    @property
    def dim(self) -> int:
        return self.log_likelihood.shape[1]

    def to_dict(self) -> dict:
        return {"log_prior": self.log_prior.tolist(), "log_likelihood": self.log_likelihood.tolist(), "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NaiveBayesModel":
        return cls(np.asarray(d["log_prior"], dtype=np.float64),
                   np.asarray(d["log_likelihood"], dtype=np.float64), float(d["alpha"]))


def fit_multinomial_nb(X, y, alpha: float = 1.0) -> NaiveBayesModel:
    """Multinomial NB with additive smoothing over summed feature weights."""
    X = _as_csr(X)
    y = np.asarray(y)
    if alpha <= 0:
        raise FitError("alpha must be positive")
    if X.nnz and X.data.min() < 0:
        raise FitError("multinomial NB needs nonnegative features")
    n = y.size
    V = X.shape[1]
    priors, likes = [], []
    for c in (0, 1):
        mask = y == c
        n_c = int(np.count_nonzero(mask))
        if n_c == 0:
            raise FitError(f"class {c} absent from training labels")
        counts = np.asarray(X[mask].sum(axis=0)).ravel()
        likes.append(np.log(counts + alpha) - math.log(counts.sum() + alpha * V))
        priors.append(math.log(n_c / n))
    return NaiveBayesModel(np.array(priors), np.vstack(likes), float(alpha))


def nb_predict_proba(model: NaiveBayesModel, X) -> np.ndarray:
    X = _as_csr(X)
    if X.shape[1] != model.dim:
        raise PredictError(f"dimension mismatch: model {model.dim}, input {X.shape[1]}")
    joint = np.asarray(X @ model.log_likelihood.T) + model.log_prior
    return np.exp(joint[:, 1] - logsumexp(joint, axis=1))


def nb_predict(model: NaiveBayesModel, x: SparseVector) -> float:
    return float(nb_predict_proba(model, x)[0])


# -- k nearest neighbours ----------------------------------------------------

@dataclass(frozen=True)
class KnnModel:
    X: sp.csr_matrix
    y: np.ndarray
    k: int

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def to_dict(self) -> dict:
        return {
            "shape": list(self.X.shape),
            "data": self.X.data.tolist(),
            "indices": self.X.indices.tolist(),
            "indptr": self.X.indptr.tolist(),
            "y": self.y.tolist(),
            "k": self.k,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "KnnModel":
        X = sp.csr_matrix(
            (np.asarray(d["data"], dtype=np.float64), np.asarray(d["indices"], dtype=np.int32),
             np.asarray(d["indptr"], dtype=np.int32)),
            shape=tuple(d["shape"]),
        )
        return cls(X, np.asarray(d["y"], dtype=np.int8), int(d["k"]))


def fit_knn(X, y, k: int = 5) -> KnnModel:
    X = _as_csr(X).copy()
    X.sort_indices()
    if k < 1:
        raise FitError("k must be >= 1")
    if X.shape[0] < k:
        raise FitError(f"KNN needs at least k={k} training rows, got {X.shape[0]}")
    return KnnModel(X, np.asarray(y, dtype=np.int8).copy(), int(k))


def cosine_distances(A: sp.csr_matrix, B: sp.csr_matrix) -> np.ndarray:
    """Dense ``1 - cos`` matrix; pairs involving a zero row get distance 1."""
    na = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    nb = np.sqrt(np.asarray(B.multiply(B).sum(axis=1)).ravel())
    dots = (A @ B.T).toarray()
    denom = np.outer(na, nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = 1.0 - dots / denom
    d[denom == 0] = 1.0
    return d


def knn_neighbors(model: KnnModel, X, chunk: int = 256) -> np.ndarray:
    """Indices of the k nearest stored rows per query; ties go to lower index."""
    X = _as_csr(X)
    if model.X.shape[0] == 0:
        raise PredictError("KNN model holds no rows")
    if X.shape[1] != model.dim:
        raise PredictError(f"dimension mismatch: model {model.dim}, input {X.shape[1]}")
    k = model.k
    out = np.empty((X.shape[0], k), dtype=np.int64)
    for lo in range(0, X.shape[0], chunk):
        d = cosine_distances(X[lo:lo + chunk], model.X)
        kth = np.partition(d, k - 1, axis=1)[:, k - 1]
        for r in range(d.shape[0]):
            cand = np.flatnonzero(d[r] <= kth[r])
            order = np.argsort(d[r, cand], kind="stable")
            out[lo + r] = cand[order[:k]]
    return out


def knn_predict_proba(model: KnnModel, X) -> np.ndarray:
    nbrs = knn_neighbors(model, X)
    return model.y[nbrs].astype(np.float64).mean(axis=1)


def knn_predict(model: KnnModel, x: SparseVector) -> float:
    return float(knn_predict_proba(model, x)[0])
