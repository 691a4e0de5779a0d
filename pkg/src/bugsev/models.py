"""Uniform train/score surface over the nine model kinds."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from bugsev import classifiers as clf
from bugsev.balance import SmoteConfig, compute_class_weights, sample_weights, smote_resample
from bugsev.config import RunConfig, check_kind
from bugsev.corpus import BugReport, Corpus
from bugsev.features import DesignMatrix, FeaturePipeline
from bugsev.gbdt import GbdtConfig, GbdtModel, fit_gbdt, gbdt_predict_proba
from bugsev.seeding import derive_seed

GBDT_PRESETS = {"xgboost": "exact_greedy", "lightgbm": "histogram", "catboost": "oblivious"}

# kinds whose training objective honours per-row weights
WEIGHTED_KINDS = frozenset({"logreg", "linear_svm", "passive_aggressive", "sgd", "xgboost", "lightgbm", "catboost"})

_STOCHASTIC = frozenset({"linear_svm", "passive_aggressive", "sgd", "xgboost", "lightgbm", "catboost"})


def resolve_hyperparameters(kind: str, overrides: Mapping[str, Any] | None, seed: int) -> dict:
    """Defaults for ``kind`` merged with overrides; seeds derive from ``seed``."""
    check_kind(kind)
    overrides = dict(overrides or {})
    if kind in GBDT_PRESETS:
        base = asdict(GbdtConfig(preset=GBDT_PRESETS[kind]))
    else:
        base = dict({
            "logreg": clf.LOGISTIC_DEFAULTS,
            "linear_svm": clf.SVM_DEFAULTS,
            "passive_aggressive": clf.PA_DEFAULTS,
            "sgd": clf.SGD_DEFAULTS,
            "naive_bayes": clf.NB_DEFAULTS,
            "knn": clf.KNN_DEFAULTS,
        }[kind])
    if kind in _STOCHASTIC:
        base["seed"] = derive_seed(seed, kind)
    unknown = set(overrides) - set(base)
    if unknown:
        raise clf.FitError(f"unknown hyperparameters for {kind}: {sorted(unknown)}")
    base.update(overrides)
    return base


def fit_params(kind: str, X, y, sw, hp: Mapping[str, Any]):
    if kind == "logreg":
        return clf.fit_logistic(X, y, sw, hp)
    if kind == "linear_svm":
        return clf.fit_linear_svm(X, y, sw, hp)
    if kind == "passive_aggressive":
        return clf.fit_passive_aggressive(X, y, sw, hp)
    if kind == "sgd":
        return clf.fit_sgd_logloss(X, y, sw, hp)
    if kind in GBDT_PRESETS:
        return fit_gbdt(X, y, sw, GbdtConfig(**hp))
    if kind == "naive_bayes":
        return clf.fit_multinomial_nb(X, y, hp["alpha"])
    if kind == "knn":
        return clf.fit_knn(X, y, hp["k"])
    raise AssertionError(kind)


def params_proba(kind: str, params, X) -> np.ndarray:
    if kind == "linear_svm":
        model, calibrator = params
        return clf.linear_predict_proba(model, calibrator, X)
    if kind in ("logreg", "passive_aggressive", "sgd"):
        return clf.linear_predict_proba(params, None, X)
    if kind in GBDT_PRESETS:
        return gbdt_predict_proba(params, X)
    if kind == "naive_bayes":
        return clf.nb_predict_proba(params, X)
    if kind == "knn":
        return clf.knn_predict_proba(params, X)
    raise AssertionError(kind)


def params_to_dict(kind: str, params) -> dict:
    if kind == "linear_svm":
        return {"model": params[0].to_dict(), "calibrator": params[1].to_dict()}
    return params.to_dict()


def params_from_dict(kind: str, d: Mapping):
    if kind == "linear_svm":
        return clf.LinearModel.from_dict(d["model"]), clf.Calibrator.from_dict(d["calibrator"])
    if kind in ("logreg", "passive_aggressive", "sgd"):
        return clf.LinearModel.from_dict(d)
    if kind in GBDT_PRESETS:
        return GbdtModel.from_dict(d)
    if kind == "naive_bayes":
        return clf.NaiveBayesModel.from_dict(d)
    if kind == "knn":
        return clf.KnnModel.from_dict(d)
    raise AssertionError(kind)


@dataclass(frozen=True)
class TrainedModel:
    kind: str
    pipeline: FeaturePipeline
    params: Any
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    training: Mapping[str, Any] = field(default_factory=dict)

    def predict_proba_matrix(self, X) -> np.ndarray:
        if isinstance(X, DesignMatrix):
            X = X.X
        return params_proba(self.kind, self.params, X)

    def predict_proba(self, reports: Sequence[BugReport]) -> np.ndarray:
        return self.predict_proba_matrix(self.pipeline.transform(reports))

    def predict(self, reports: Sequence[BugReport]) -> np.ndarray:
        return (self.predict_proba(reports) >= 0.5).astype(np.int8)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "pipeline": self.pipeline.to_dict(),
            "params": params_to_dict(self.kind, self.params),
            "hyperparameters": dict(self.hyperparameters),
            "training": dict(self.training),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainedModel":
        return cls(
            d["kind"],
            FeaturePipeline.from_dict(d["pipeline"]),
            params_from_dict(d["kind"], d["params"]),
            dict(d["hyperparameters"]),
            dict(d["training"]),
        )


def train(corpus: Corpus, kind: str, config: RunConfig = RunConfig(), context: str = "train") -> TrainedModel:
    """Fit features, balancing and ``kind`` on ``corpus`` (training rows only).

    ``context`` names the run (split, fold, curve point) so each gets its own
    derived seeds.
    """
    check_kind(kind)
    pipeline = FeaturePipeline.fit(corpus.reports, config.features)
    dm = pipeline.transform(corpus.reports)
    y = corpus.y.astype(np.int64)
    n_before = y.size
    if config.smote:
        smote = SmoteConfig(config.smote_k_neighbors, config.smote_target_ratio, derive_seed(config.seed, context, "smote"))
        dm, y = smote_resample(dm, y, smote)
    if config.class_weights and kind in WEIGHTED_KINDS:
        sw = sample_weights(y, compute_class_weights(y))
    else:
        sw = np.ones(y.size)
    hp = resolve_hyperparameters(kind, config.hyperparameters.get(kind), derive_seed(config.seed, context))
    params = fit_params(kind, dm.X, y, sw, hp)
    training = {
        "rows": n_before,
        "synthetic_rows": int(y.size - n_before),
        "smote": config.smote,
        "class_weights": bool(config.class_weights and kind in WEIGHTED_KINDS),
        "context": context,
        "seed": config.seed,
    }
    return TrainedModel(kind, pipeline, params, hp, training)
