"""Run configuration: one versioned JSON document covering every knob."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from bugsev.corpus import DEFAULT_POLICY, EXCLUDED
from bugsev.errors import ConfigError
from bugsev.features import FeatureConfig

CONFIG_VERSION = 1

MODEL_KINDS = (
    "logreg",
    "linear_svm",
    "passive_aggressive",
    "sgd",
    "xgboost",
    "lightgbm",
    "catboost",
    "naive_bayes",
    "knn",
)

DISPLAY_NAMES = {
    "logreg": "Logistic Regression",
    "linear_svm": "Linear SVM",
    "passive_aggressive": "Passive Aggressive",
    "sgd": "SGD",
    "xgboost": "XGBoost",
    "lightgbm": "LightGBM",
    "catboost": "CatBoost",
    "naive_bayes": "Naive Bayes",
    "knn": "KNN",
}

OUT_OF_SCOPE_KINDS = ("distilbert",)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    test_fraction: float = 0.2
    folds: int = 3
    ngram_range: tuple[int, int] = (1, 2)
    min_df: int = 2
    use_priority: bool = False
    numeric_columns: tuple[str, ...] = ()
    smote: bool = True
    smote_k_neighbors: int = 5
    smote_target_ratio: float = 1.0
    class_weights: bool = True
    learning_curve_fractions: tuple[float, ...] = (0.1, 0.25, 0.5, 0.75, 1.0)
    models: tuple[str, ...] = MODEL_KINDS
    hyperparameters: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    severity_policy: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_POLICY))

    def __post_init__(self):
        if not 0 <= self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in [0, 1)")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        lo, hi = self.ngram_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"invalid ngram_range {self.ngram_range}")
        if self.min_df < 1:
            raise ConfigError("min_df must be >= 1")
        fr = list(self.learning_curve_fractions)
        if any(not 0 < f <= 1 for f in fr) or fr != sorted(set(fr)):
            raise ConfigError("learning_curve_fractions must be strictly increasing within (0, 1]")
        for kind in self.models:
            check_kind(kind)
        for kind in self.hyperparameters:
            check_kind(kind)
        bad = {v for v in self.severity_policy.values() if v not in ("HIGH", "LOW", EXCLUDED)}
        if bad:
            raise ConfigError(f"severity_policy targets must be HIGH, LOW or {EXCLUDED}: {sorted(bad)}")

    @property
    def features(self) -> FeatureConfig:
        return FeatureConfig(tuple(self.ngram_range), self.min_df, self.use_priority, tuple(self.numeric_columns))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hyperparameters"] = {k: dict(v) for k, v in sorted(self.hyperparameters.items())}
        d["severity_policy"] = dict(sorted(self.severity_policy.items()))
        for key in ("ngram_range", "numeric_columns", "learning_curve_fractions", "models"):
            d[key] = list(d[key])
        return {"version": CONFIG_VERSION, **d}

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("ngram_range", "numeric_columns", "learning_curve_fractions", "models"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def with_overrides(self, **kw) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **kw})


def check_kind(kind: str) -> None:
    if kind in OUT_OF_SCOPE_KINDS:
        raise ConfigError(f"unsupported: out of scope ({kind})")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model {kind!r}; valid: {', '.join(MODEL_KINDS)}")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return RunConfig.from_dict(raw)
