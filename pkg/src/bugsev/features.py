"""Text and metadata featurization into a sparse design matrix."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from bugsev.corpus import BugReport
from bugsev.errors import ConfigError, FitError

NGRAM_SEP = "\x1f"
UNKNOWN = "__UNKNOWN__"

_SEPARATORS = re.compile(r"[\W_]+", re.UNICODE)


@dataclass(frozen=True)
class SparseVector:
    """Sorted (index, weight) pairs with no stored zeros."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape:
            raise ValueError("indices and values differ in length")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise ValueError("index out of range")
        keep = val != 0.0
        object.__setattr__(self, "indices", idx[keep])
        object.__setattr__(self, "values", val[keep])

    @classmethod
    def from_dict(cls, weights: Mapping[int, float], dim: int) -> "SparseVector":
        items = sorted(weights.items())
        return cls(np.array([i for i, _ in items], dtype=np.int64),
                   np.array([w for _, w in items], dtype=np.float64), dim)

    @classmethod
    def zeros(cls, dim: int) -> "SparseVector":
        return cls(np.empty(0, np.int64), np.empty(0), dim)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def norm(self) -> float:
        return math.sqrt(math.fsum(v * v for v in self.values.tolist()))


def rows_to_csr(rows: Sequence[SparseVector], dim: int) -> sp.csr_matrix:
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    for i, r in enumerate(rows):
        if r.dim != dim:
            raise ValueError(f"row {i} has dimension {r.dim}, expected {dim}")
        indptr[i + 1] = indptr[i] + r.indices.size
    indices = np.concatenate([r.indices for r in rows]) if rows else np.empty(0, np.int64)
    data = np.concatenate([r.values for r in rows]) if rows else np.empty(0)
    return sp.csr_matrix((data, indices, indptr), shape=(len(rows), dim))


def csr_row(X: sp.csr_matrix, i: int) -> SparseVector:
    lo, hi = X.indptr[i], X.indptr[i + 1]
    return SparseVector(X.indices[lo:hi].copy(), X.data[lo:hi].copy(), X.shape[1])


@dataclass(frozen=True)
class DesignMatrix:
    X: sp.csr_matrix
    layout: Mapping[str, tuple[int, int]]

    def __post_init__(self):
        X = sp.csr_matrix(self.X, dtype=np.float64)
        X.sort_indices()
        object.__setattr__(self, "X", X)
        spans = sorted(self.layout.values())
        pos = 0
        for off, width in spans:
            if off != pos:
                raise ValueError("block spans must be contiguous and disjoint")
            pos += width
        if pos != X.shape[1]:
            raise ValueError("block spans do not cover the matrix dimension")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def rows(self) -> list[SparseVector]:
        return [csr_row(self.X, i) for i in range(len(self))]

    def take(self, indices) -> "DesignMatrix":
        return DesignMatrix(self.X[np.asarray(indices, dtype=np.int64)], self.layout)


def assemble(blocks: Sequence[tuple[str, sp.spmatrix | Sequence[SparseVector]]], dims: Sequence[int] | None = None) -> DesignMatrix:
    """Concatenate named column blocks; offsets follow block order."""
    mats = []
    for j, (name, block) in enumerate(blocks):
        if sp.issparse(block):
            mats.append(sp.csr_matrix(block))
        else:
            if dims is None:
                if not block:
                    raise ValueError(f"cannot infer width of empty block {name!r}")
                dim = block[0].dim
            else:
                dim = dims[j]
            mats.append(rows_to_csr(block, dim))
    counts = {m.shape[0] for m in mats}
    if len(counts) > 1:
        raise ValueError(f"row-count mismatch across blocks: {sorted(counts)}")
    layout, off = {}, 0
    for (name, _), m in zip(blocks, mats):
        layout[name] = (off, m.shape[1])
        off += m.shape[1]
    X = sp.hstack(mats, format="csr") if mats else sp.csr_matrix((0, 0))
    return DesignMatrix(X, layout)


def preprocess_text(raw: str) -> list[str]:
    """Case-fold and split on anything that is not a letter or digit."""
    return [tok for tok in _SEPARATORS.split(raw.casefold()) if tok]


def extract_ngrams(tokens: Sequence[str], ngram_range: tuple[int, int] = (1, 2)) -> list[str]:
    lo, hi = ngram_range
    if not 1 <= lo <= hi:
        raise ConfigError(f"invalid n-gram range {ngram_range}")
    grams = []
    for n in range(lo, hi + 1):
        grams.extend(NGRAM_SEP.join(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return grams


def smooth_idf(n_docs: int, df: int) -> float:
    return math.log((1 + n_docs) / (1 + df)) + 1.0


@dataclass(frozen=True)
class TfidfModel:
    vocabulary: Mapping[str, int]
    document_frequency: tuple[int, ...]
    idf: tuple[float, ...]
    n_docs: int
    ngram_range: tuple[int, int]
    min_df: int

    @property
    def dim(self) -> int:
        return len(self.vocabulary)

    def to_dict(self) -> dict:
        terms = sorted(self.vocabulary, key=self.vocabulary.__getitem__)
        return {
            "terms": terms,
            "document_frequency": list(self.document_frequency),
            "idf": list(self.idf),
            "n_docs": self.n_docs,
            "ngram_range": list(self.ngram_range),
            "min_df": self.min_df,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TfidfModel":
        return cls(
            vocabulary={t: i for i, t in enumerate(d["terms"])},
            document_frequency=tuple(d["document_frequency"]),
            idf=tuple(d["idf"]),
            n_docs=d["n_docs"],
            ngram_range=tuple(d["ngram_range"]),
            min_df=d["min_df"],
        )


def fit_tfidf(train_docs: Sequence[Sequence[str]], ngram_range: tuple[int, int] = (1, 2), min_df: int = 2) -> TfidfModel:
    """Fit vocabulary and smoothed idf weights on n-gram documents.

    Columns are assigned in lexicographic term order.
    """
    if not train_docs:
        raise FitError("no training documents")
    df: Counter[str] = Counter()
    for doc in train_docs:
        df.update(set(doc))
    terms = sorted(t for t, c in df.items() if c >= min_df)
    if not terms:
        raise FitError(f"empty vocabulary after min_df={min_df} filtering")
    n = len(train_docs)
    return TfidfModel(
        vocabulary={t: i for i, t in enumerate(terms)},
        document_frequency=tuple(df[t] for t in terms),
        idf=tuple(smooth_idf(n, df[t]) for t in terms),
        n_docs=n,
        ngram_range=tuple(ngram_range),
        min_df=min_df,
    )


def transform_tfidf(model: TfidfModel, doc: Iterable[str]) -> SparseVector:
    """Raw counts times idf, L2-normalized; unknown terms are ignored."""
    counts: Counter[int] = Counter()
    vocab = model.vocabulary
    for term in doc:
        col = vocab.get(term)
        if col is not None:
            counts[col] += 1
    if not counts:
        return SparseVector.zeros(model.dim)
    cols = sorted(counts)
    raw = [counts[c] * model.idf[c] for c in cols]
    # fsum is correctly rounded, so the norm does not depend on term order
    norm = math.sqrt(math.fsum(w * w for w in raw))
    return SparseVector(np.array(cols, dtype=np.int64), np.array([w / norm for w in raw]), model.dim)


@dataclass(frozen=True)
class MetadataEncoder:
    """One-hot categorical columns plus optional standardized numeric columns.

    ``categories[col]`` lists the training categories in sorted order; the
    UNKNOWN slot follows them.
    """

    categorical: tuple[str, ...]
    categories: Mapping[str, tuple[str, ...]]
    modes: Mapping[str, str]
    numeric: tuple[str, ...] = ()
    means: Mapping[str, float] = field(default_factory=dict)
    stds: Mapping[str, float] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return sum(len(self.categories[c]) + 1 for c in self.categorical) + len(self.numeric)

    def to_dict(self) -> dict:
        return {
            "categorical": list(self.categorical),
            "categories": {c: list(v) for c, v in self.categories.items()},
            "modes": dict(self.modes),
            "numeric": list(self.numeric),
            "means": dict(self.means),
            "stds": dict(self.stds),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetadataEncoder":
        return cls(
            categorical=tuple(d["categorical"]),
            categories={c: tuple(v) for c, v in d["categories"].items()},
            modes=dict(d["modes"]),
            numeric=tuple(d["numeric"]),
            means=dict(d["means"]),
            stds=dict(d["stds"]),
        )


def _categorical_value(report: BugReport, column: str) -> str | None:
    value = getattr(report, column)
    return value if value else None


def fit_metadata_encoder(
    reports: Sequence[BugReport],
    categorical: Sequence[str] = ("bug_type",),
    numeric: Sequence[str] = (),
) -> MetadataEncoder:
    categories, modes, means, stds = {}, {}, {}, {}
    for col in categorical:
        counts = Counter(v for v in (_categorical_value(r, col) for r in reports) if v is not None)
        categories[col] = tuple(sorted(counts))
        # most frequent; ties go to the lexicographically smallest category
        modes[col] = min(counts, key=lambda v: (-counts[v], v)) if counts else UNKNOWN
    for col in numeric:
        observed = np.array([r.numeric.get(col) for r in reports if r.numeric.get(col) is not None], dtype=float)
        mean = float(observed.mean()) if observed.size else 0.0
        filled = np.array([r.numeric.get(col) if r.numeric.get(col) is not None else mean for r in reports], dtype=float)
        means[col] = mean
        stds[col] = float(filled.std()) if filled.size else 0.0
    return MetadataEncoder(tuple(categorical), categories, modes, tuple(numeric), means, stds)


def encode_metadata(encoder: MetadataEncoder, report: BugReport) -> SparseVector:
    weights: dict[int, float] = {}
    off = 0
    for col in encoder.categorical:
        cats = encoder.categories[col]
        value = _categorical_value(report, col)
        if value is None:
            value = encoder.modes[col]
        try:
            slot = cats.index(value)
        except ValueError:
            slot = len(cats)
        weights[off + slot] = 1.0
        off += len(cats) + 1
    for col in encoder.numeric:
        value = report.numeric.get(col)
        if value is None:
            value = encoder.means[col]
        std = encoder.stds[col]
        z = (value - encoder.means[col]) / std if std > 0 else 0.0
        if z != 0.0:
            weights[off] = z
        off += 1
    return SparseVector.from_dict(weights, encoder.dim)


@dataclass(frozen=True)
class FeatureConfig:
    ngram_range: tuple[int, int] = (1, 2)
    min_df: int = 2
    use_priority: bool = False
    numeric_columns: tuple[str, ...] = ()

    def categorical_columns(self) -> tuple[str, ...]:
        return ("bug_type", "priority_label") if self.use_priority else ("bug_type",)


@dataclass(frozen=True)
class FeaturePipeline:
    """Fitted text + metadata featurizer; the unit persisted in artifacts."""

    tfidf: TfidfModel
    encoder: MetadataEncoder

    @classmethod
    def fit(cls, reports: Sequence[BugReport], config: FeatureConfig = FeatureConfig()) -> "FeaturePipeline":
        docs = [extract_ngrams(preprocess_text(r.short_description), config.ngram_range) for r in reports]
        tfidf = fit_tfidf(docs, config.ngram_range, config.min_df)
        encoder = fit_metadata_encoder(reports, config.categorical_columns(), config.numeric_columns)
        return cls(tfidf, encoder)

    @property
    def dim(self) -> int:
        return self.tfidf.dim + self.encoder.dim

    def text_vector(self, text: str) -> SparseVector:
        return transform_tfidf(self.tfidf, extract_ngrams(preprocess_text(text), self.tfidf.ngram_range))

    def transform(self, reports: Sequence[BugReport]) -> DesignMatrix:
        text = [self.text_vector(r.short_description) for r in reports]
        meta = [encode_metadata(self.encoder, r) for r in reports]
        return assemble([("text", text), ("meta", meta)], dims=[self.tfidf.dim, self.encoder.dim])

    def to_dict(self) -> dict:
        return {"tfidf": self.tfidf.to_dict(), "metadata": self.encoder.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeaturePipeline":
        return cls(TfidfModel.from_dict(d["tfidf"]), MetadataEncoder.from_dict(d["metadata"]))
