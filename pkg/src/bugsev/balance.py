"""Class-imbalance correction: balanced class weights and SMOTE."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from bugsev.corpus import Severity
from bugsev.errors import ConfigError, DegenerateError
from bugsev.features import DesignMatrix
from bugsev.seeding import rng_for


def compute_class_weights(labels: Sequence[int]) -> dict[Severity, float]:
    """Balanced weights ``N / (2 * n_c)``; both classes must be present."""
    y = np.asarray(labels, dtype=np.int64)
    n = y.size
    counts = {c: int(np.count_nonzero(y == int(c))) for c in (Severity.HIGH, Severity.LOW)}
    if min(counts.values()) == 0:
        raise DegenerateError("class weights need both classes present")
    return {c: n / (2 * counts[c]) for c in counts}


def sample_weights(labels: Sequence[int], class_weights: dict[Severity, float] | None = None) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if class_weights is None:
        return np.ones(y.size)
    return np.where(y == int(Severity.HIGH), class_weights[Severity.HIGH], class_weights[Severity.LOW])


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    target_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be >= 1")
        if not 0 < self.target_ratio <= 1:
            raise ConfigError("target_ratio must lie in (0, 1]")


def minority_neighbors(M: sp.csr_matrix, k: int, chunk: int = 512) -> np.ndarray:
    """Indices of the k nearest other rows of ``M`` by Euclidean distance.

    Exact brute force; equal distances resolve to the lower row index.
    """
    n = M.shape[0]
    sq = np.asarray(M.multiply(M).sum(axis=1)).ravel()
    out = np.empty((n, k), dtype=np.int64)
    MT = M.T.tocsc()
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        d = sq[lo:hi, None] + sq[None, :] - 2.0 * (M[lo:hi] @ MT).toarray()
        np.maximum(d, 0.0, out=d)
        d[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        out[lo:hi] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def smote_resample(
    rows: DesignMatrix,
    labels: Sequence[int],
    config: SmoteConfig = SmoteConfig(),
    return_pairs: bool = False,
):
    """Oversample the minority class up to ``floor(target_ratio * n_majority)``.

    Synthetic rows are appended after the originals. With ``return_pairs``
    the result also carries a ``(base, neighbor, gap)`` record per synthetic
    row, with indices into the input rows.
    """
    y = np.asarray(labels, dtype=np.int64)
    n_high = int(np.count_nonzero(y == 1))
    n_low = y.size - n_high
    minority = Severity.HIGH if n_high <= n_low else Severity.LOW
    min_idx = np.flatnonzero(y == int(minority))
    n_min, n_maj = min_idx.size, y.size - min_idx.size
    if n_min < 2:
        raise DegenerateError(f"SMOTE needs at least 2 minority rows, got {n_min}")

    # round() guards against 0.29 * 100 == 28.999999999999996
    n_target = math.floor(round(config.target_ratio * n_maj, 9))
    n_new = max(0, n_target - n_min)
    empty = (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
    if n_new == 0:
        out = (rows, y.copy())
        return out + (empty,) if return_pairs else out

    k = min(config.k_neighbors, n_min - 1)
    M = rows.X[min_idx]
    nbrs = minority_neighbors(M, k)
    rng = rng_for(config.seed, "smote")
    base = rng.integers(0, n_min, size=n_new)
    pick = rng.integers(0, k, size=n_new)
    gap = rng.random(n_new)
    neighbor = nbrs[base, pick]

    # x + g (x' - x) as a sparse linear map over the minority rows
    r = np.arange(n_new)
    coef = sp.csr_matrix(
        (np.concatenate([1.0 - gap, gap]), (np.concatenate([r, r]), np.concatenate([base, neighbor]))),
        shape=(n_new, n_min),
    )
    synth = (coef @ M).tocsr()
    synth.eliminate_zeros()
    X = sp.vstack([rows.X, synth], format="csr")
    y_out = np.concatenate([y, np.full(n_new, int(minority), dtype=np.int64)])
    out = (DesignMatrix(X, rows.layout), y_out)
    if return_pairs:
        return out + ((min_idx[base], min_idx[neighbor], gap),)
    return out
