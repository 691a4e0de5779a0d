"""Metrics, cross-validation, learning curves and the all-model benchmark.

HIGH is the positive class throughout and the decision threshold is a
probability of 0.5.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from bugsev.config import DISPLAY_NAMES, RunConfig
from bugsev.corpus import Corpus, FoldPlan, Severity, make_folds, split_indices
from bugsev.errors import BugsevError, DegenerateError, EvaluationError
from bugsev.models import TrainedModel, train
from bugsev.seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "auc")
REPORT_VERSION = 1


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: ConfusionMatrix
    auc: float | None = None
    precision_undefined: bool = False
    recall_undefined: bool = False
    f1_undefined: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _as_int_labels(values) -> np.ndarray:
    return np.fromiter((int(v) for v in values), dtype=np.int64)


def confusion(labels: Sequence, predictions: Sequence) -> ConfusionMatrix:
    y = _as_int_labels(labels)
    p = _as_int_labels(predictions)
    if y.size != p.size:
        raise EvaluationError(f"length mismatch: {y.size} labels, {p.size} predictions")
    if y.size == 0:
        raise EvaluationError("nothing to evaluate")
    hi, lo = int(Severity.HIGH), int(Severity.LOW)
    return ConfusionMatrix(
        tp=int(np.count_nonzero((y == hi) & (p == hi))),
        fp=int(np.count_nonzero((y == lo) & (p == hi))),
        tn=int(np.count_nonzero((y == lo) & (p == lo))),
        fn=int(np.count_nonzero((y == hi) & (p == lo))),
    )


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def metrics(cm: ConfusionMatrix, auc: float | None = None) -> MetricsReport:
    """Accuracy, precision, recall and F1 from a confusion matrix.

    A zero denominator yields 0 with the matching ``*_undefined`` flag set.
    """
    if cm.total <= 0:
        raise EvaluationError("empty confusion matrix")
    accuracy = (cm.tp + cm.tn) / cm.total
    p_undef = cm.tp + cm.fp == 0
    r_undef = cm.tp + cm.fn == 0
    precision = 0.0 if p_undef else cm.tp / (cm.tp + cm.fp)
    recall = 0.0 if r_undef else cm.tp / (cm.tp + cm.fn)
    f_undef = precision + recall == 0
    return MetricsReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        confusion=cm,
        auc=auc,
        precision_undefined=p_undef,
        recall_undefined=r_undef,
        f1_undefined=f_undef,
    )


def roc_auc(labels: Sequence, scores: Sequence[float]) -> float:
    """Mann-Whitney AUC: P(score_HIGH > score_LOW), ties counting one half."""
    y = _as_int_labels(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.size != s.size:
        raise EvaluationError("labels and scores differ in length")
    pos = y == int(Severity.HIGH)
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUC undefined: labels contain a single class")
    ranks = rankdata(s, method="average")
    # rank sums are exact multiples of 1/2, so this equals the pair count
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def evaluate(model: TrainedModel, corpus: Corpus) -> MetricsReport:
    proba = model.predict_proba(corpus.reports)
    return evaluate_scores(corpus.y, proba)


def evaluate_scores(y, proba) -> MetricsReport:
    pred = (np.asarray(proba) >= 0.5).astype(np.int64)
    cm = confusion(y, pred)
    try:
        auc = roc_auc(y, proba)
    except EvaluationError:
        auc = None
    return metrics(cm, auc)


def accuracy_of(model: TrainedModel, corpus: Corpus) -> float:
    pred = model.predict(corpus.reports)
    return float(np.mean(pred == corpus.y))


@dataclass(frozen=True)
class CvResult:
    folds: tuple[MetricsReport, ...]
    mean: Mapping[str, float]
    std: Mapping[str, float]
    plan: FoldPlan

    def to_dict(self) -> dict:
        return {
            "k": self.plan.k,
            "seed": self.plan.seed,
            "fold_sizes": self.plan.sizes(),
            "folds": [f.to_dict() for f in self.folds],
            "mean": dict(self.mean),
            "std": dict(self.std),
        }


def aggregate(reports: Sequence[MetricsReport]) -> tuple[dict, dict]:
    mean, std = {}, {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in reports]
        if any(v is None for v in vals):
            mean[name] = std[name] = None
            continue
        arr = np.asarray(vals, dtype=np.float64)
        mean[name] = float(math.fsum(vals) / len(vals))
        std[name] = float(np.sqrt(np.mean((arr - mean[name]) ** 2)))
    return mean, std


def cross_validate(corpus: Corpus, config: RunConfig, kind: str, k: int | None = None, seed: int | None = None) -> CvResult:
    """Stratified k-fold CV; every fold refits features, balancing and model."""
    k = config.folds if k is None else k
    seed = config.seed if seed is None else seed
    if seed != config.seed:
        config = config.with_overrides(seed=seed)
    plan = make_folds(corpus.labels, k, derive_seed(seed, "folds"))
    reports = []
    for fold in range(k):
        tr, te = plan.train_test(fold)
        try:
            model = train(corpus.subset(tr), kind, config, context=f"cv{fold}")
            reports.append(evaluate(model, corpus.subset(te)))
        except BugsevError as exc:
            raise EvaluationError(f"fold {fold}: {exc}") from exc
    mean, std = aggregate(reports)
    return CvResult(tuple(reports), mean, std, plan)


@dataclass(frozen=True)
class CurvePoint:
    fraction: float
    rows: int
    train_accuracy: float
    validation_accuracy: float


@dataclass(frozen=True)
class LearningCurve:
    points: tuple[CurvePoint, ...]
    skipped: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {"points": [asdict(p) for p in self.points], "skipped": list(self.skipped)}


def nested_subsets(labels: Sequence, fractions: Sequence[float], seed: int) -> list[np.ndarray]:
    """Stratified prefix samples; the subset for f is contained in that for f' > f."""
    y = _as_int_labels(labels)
    orders = {c: rng_for(seed, "curve", c).permutation(np.flatnonzero(y == c)) for c in (1, 0)}
    out = []
    for f in fractions:
        parts = [o[: math.floor(f * o.size + 0.5)] for o in orders.values()]
        out.append(np.sort(np.concatenate(parts)))
    return out


def learning_curve(
    train_corpus: Corpus,
    validation: Corpus,
    kind: str,
    config: RunConfig,
    fractions: Sequence[float] | None = None,
    full_model: TrainedModel | None = None,
) -> LearningCurve:
    """Training and validation accuracy as the training subset grows.

    ``full_model`` may carry an already-fitted model for fraction 1.0; it is
    the same fit this function would produce.
    """
    fractions = tuple(config.learning_curve_fractions if fractions is None else fractions)
    if any(not 0 < f <= 1 for f in fractions) or list(fractions) != sorted(set(fractions)):
        raise EvaluationError("fractions must be strictly increasing within (0, 1]")
    points, skipped = [], []
    subsets = nested_subsets(train_corpus.labels, fractions, derive_seed(config.seed, "curve"))
    for f, idx in zip(fractions, subsets):
        sub = train_corpus.subset(idx)
        counts = sub.class_counts()
        if min(counts.values()) < 2:
            log.warning("learning curve: fraction %s leaves %s; point skipped", f, counts)
            skipped.append(f)
            continue
        try:
            model = full_model if (f == 1.0 and full_model is not None) else train(sub, kind, config, context="train")
        except BugsevError as exc:
            log.warning("learning curve: fraction %s failed to fit (%s); point skipped", f, exc)
            skipped.append(f)
            continue
        points.append(CurvePoint(f, len(sub), accuracy_of(model, sub), accuracy_of(model, validation)))
    return LearningCurve(tuple(points), tuple(skipped))


def benchmark(corpus: Corpus, config: RunConfig = RunConfig()) -> dict:
    """Run every configured model under one shared split and fold plan.

    Returns a JSON-ready report; a model that fails is recorded with its
    error rather than aborting the run.
    """
    if corpus.degenerate:
        raise DegenerateError("benchmark needs both classes present")
    train_idx, test_idx = split_indices(corpus.labels, config.test_fraction, derive_seed(config.seed, "split"))
    train_c, test_c = corpus.subset(train_idx), corpus.subset(test_idx)
    counts = corpus.class_counts()
    models: dict[str, dict] = {}
    for kind in config.models:
        entry: dict = {"display_name": DISPLAY_NAMES[kind]}
        try:
            model = train(train_c, kind, config, context="train")
            entry["hyperparameters"] = dict(model.hyperparameters)
            entry["training"] = dict(model.training)
            if len(test_c):
                m = evaluate(model, test_c)
                entry["metrics"] = {n: getattr(m, n) for n in METRIC_NAMES}
                entry["undefined"] = {
                    "precision": m.precision_undefined,
                    "recall": m.recall_undefined,
                    "f1": m.f1_undefined,
                }
                entry["confusion"] = asdict(m.confusion)
                entry["curve"] = learning_curve(train_c, test_c, kind, config, full_model=model).to_dict()
            entry["cv"] = cross_validate(corpus, config, kind).to_dict()
            entry["status"] = "ok"
        except BugsevError as exc:
            log.error("model %s failed: %s", kind, exc)
            entry["status"] = "failed"
            entry["error"] = f"{type(exc).__name__}: {exc}"
        models[kind] = entry

    def sort_key(kind: str):
        acc = models[kind].get("metrics", {}).get("accuracy")
        return (acc is None, -(acc or 0.0), config.models.index(kind))

    return {
        "version": REPORT_VERSION,
        "seed": config.seed,
        "config": config.to_dict(),
        "corpus": {
            "rows": len(corpus),
            "high": counts[Severity.HIGH],
            "low": counts[Severity.LOW],
            "prevalence": corpus.prevalence(),
            "source": corpus.provenance.get("source"),
        },
        "split": {
            "test_fraction": config.test_fraction,
            "train_rows": len(train_c),
            "test_rows": len(test_c),
        },
        "models": models,
        "ranking": sorted(models, key=sort_key),
    }


def report_json(report: Mapping) -> str:
    return json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _fmt(value, pct: bool = False) -> str:
    if value is None:
        return "n/a"
    return f"{100 * value:.2f}%" if pct else f"{value:.3f}"


def report_markdown(report: Mapping) -> str:
    """Metric-by-model table (models ranked by accuracy) plus CV and confusion."""
    ranking = list(report["ranking"])
    models = report["models"]
    heads = [models[k]["display_name"] for k in ranking]
    lines = [
        "# Bug severity benchmark",
        "",
        f"Corpus: {report['corpus']['rows']} reports, {report['corpus']['high']} HIGH "
        f"({100 * report['corpus']['prevalence']:.1f}%). Seed {report['seed']}. "
        f"Held-out split: {report['split']['test_rows']} rows.",
        "",
        "## Held-out split, ranked by accuracy",
        "",
        "| Rank | Model | Accuracy | Precision | Recall | F1 Score | AUC | Status |",
        "|---|---|---|---|---|---|---|---|",
    ]
    for rank, kind in enumerate(ranking, 1):
        m = models[kind].get("metrics", {})
        cells = [_fmt(m.get(name), pct=name == "accuracy") for name in METRIC_NAMES]
        lines.append(f"| {rank} | {models[kind]['display_name']} | " + " | ".join(cells) + f" | {models[kind].get('status')} |")
    lines += ["", "## Held-out split, metric by model", "",
              "| Metric | " + " | ".join(heads) + " |", "|---|" + "---|" * len(heads)]
    labels = {"accuracy": "Accuracy", "precision": "Precision", "recall": "Recall", "f1": "F1 Score", "auc": "AUC"}
    for name in METRIC_NAMES:
        cells = [_fmt(models[k].get("metrics", {}).get(name), pct=name == "accuracy") for k in ranking]
        lines.append(f"| {labels[name]} | " + " | ".join(cells) + " |")

    k = report["config"]["folds"]
    lines += ["", f"## {k}-fold cross-validation (mean ± std)", "",
              "| Metric | " + " | ".join(heads) + " |", "|---|" + "---|" * len(heads)]
    for name in METRIC_NAMES:
        cells = []
        for kind in ranking:
            cv = models[kind].get("cv")
            if not cv or cv["mean"].get(name) is None:
                cells.append("n/a")
            else:
                cells.append(f"{cv['mean'][name]:.3f} ± {cv['std'][name]:.3f}")
        lines.append(f"| {labels[name]} | " + " | ".join(cells) + " |")

    lines += ["", "## Confusion matrices (HIGH positive)", "", "| Model | TP | FP | TN | FN |", "|---|---|---|---|---|"]
    for kind in ranking:
        cm = models[kind].get("confusion")
        if cm:
            lines.append(f"| {models[kind]['display_name']} | {cm['tp']} | {cm['fp']} | {cm['tn']} | {cm['fn']} |")
    failed = [k for k in ranking if models[k].get("status") != "ok"]
    if failed:
        lines += ["", "## Failures", ""]
        lines += [f"- {models[k]['display_name']}: {models[k].get('error')}" for k in failed]
    return "\n".join(lines) + "\n"
