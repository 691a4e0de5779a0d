"""Gradient-boosted trees with logistic loss.

One engine, three growth presets:

* ``exact_greedy``: depth-wise growth, every midpoint between distinct node
  values is a candidate threshold.
* ``histogram``: depth-wise growth over at most ``max_bins`` equal-frequency
  bins fixed from the root distribution.
* ``oblivious``: level-synchronous growth where every node of a level shares
  one (feature, threshold), chosen to maximize the summed gain.

Split semantics are the same everywhere: a row goes left iff its feature
value is zero (absent) or ``<= threshold``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from bugsev.errors import ConfigError, DegenerateError, FitError

PRESETS = ("exact_greedy", "histogram", "oblivious")


@dataclass(frozen=True)
class GbdtConfig:
    preset: str = "exact_greedy"
    rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 6
    lam: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    max_bins: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        if self.rounds < 0 or self.learning_rate < 0 or self.max_depth < 0:
            raise ConfigError("rounds, learning_rate and max_depth must be nonnegative")
        if self.max_bins < 2:
            raise ConfigError("max_bins must be >= 2")


@dataclass(frozen=True)
class RegressionTree:
    """Array-encoded binary tree; ``left[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    oblivious: bool = False

    @property
    def n_nodes(self) -> int:
        return self.value.size

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.left[node] < 0:
                best = max(best, d)
            else:
                stack += [(self.left[node], d + 1), (self.right[node], d + 1)]
        return best

    def levels(self) -> list[list[int]]:
        """Internal node ids grouped by depth."""
        out: list[list[int]] = []
        frontier = [0]
        while frontier:
            internal = [n for n in frontier if self.left[n] >= 0]
            if not internal:
                break
            out.append(internal)
            frontier = [c for n in internal for c in (self.left[n], self.right[n])]
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "oblivious": self.oblivious,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RegressionTree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
            bool(d["oblivious"]),
        )


@dataclass(frozen=True)
class GbdtModel:
    base_score: float
    trees: tuple[RegressionTree, ...]
    config: GbdtConfig
    dim: int
    train_loss: tuple[float, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "trees": [t.to_dict() for t in self.trees],
            "config": asdict(self.config),
            "dim": self.dim,
            "train_loss": list(self.train_loss),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GbdtModel":
        return cls(
            float(d["base_score"]),
            tuple(RegressionTree.from_dict(t) for t in d["trees"]),
            GbdtConfig(**d["config"]),
            int(d["dim"]),
            tuple(d.get("train_loss", ())),
        )


def logloss_grad_hess(y, margin, sample_weight=1.0):
    """First and second derivatives of weighted log loss w.r.t. the margin."""
    p = expit(margin)
    return sample_weight * (p - y), sample_weight * p * (1.0 - p)


def leaf_weight(G: float, H: float, lam: float) -> float:
    if H + lam <= 0:
        raise FitError(f"degenerate leaf: H + lambda = {H + lam}")
    return -G / (H + lam)


def split_gain(G_L, H_L, G_R, H_R, lam, gamma):
    return 0.5 * (G_L**2 / (H_L + lam) + G_R**2 / (H_R + lam) - (G_L + G_R) ** 2 / (H_L + H_R + lam)) - gamma


def bin_boundaries(values: np.ndarray, n_zero: int, max_bins: int) -> np.ndarray:
    """Equal-frequency cut points for one feature, always at value midpoints.

    When the feature has at most ``max_bins`` distinct values every midpoint
    is returned, which makes binned search coincide with exact search.
    """
    vals = np.concatenate([values, [0.0]]) if n_zero else np.asarray(values, dtype=np.float64)
    uniq, counts = np.unique(vals, return_counts=True)
    if n_zero:
        counts[np.searchsorted(uniq, 0.0)] += n_zero - 1
    if uniq.size < 2:
        return np.empty(0)
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    if uniq.size <= max_bins:
        return mids
    cum = np.cumsum(counts)
    targets = cum[-1] * np.arange(1, max_bins) / max_bins
    pos = np.searchsorted(cum, targets, side="left")
    pos = np.unique(pos[pos < uniq.size - 1])
    return mids[pos]


class _Layout:
    """Training matrix prepared for split search.

    Holds the nonzero entries sorted by (feature, key), where the key is the
    raw value (exact) or the bin index (binned presets).
    """

    def __init__(self, X: sp.csr_matrix, config: GbdtConfig):
        Xc = sp.csc_matrix(X, dtype=np.float64)
        Xc.eliminate_zeros()
        Xc.sort_indices()
        self.Xc = Xc
        self.n, self.d = Xc.shape
        nnz_col = np.diff(Xc.indptr)
        feat = np.repeat(np.arange(self.d), nnz_col)
        self.binned = config.preset != "exact_greedy"
        if self.binned:
            bounds = [
                bin_boundaries(Xc.data[Xc.indptr[j]:Xc.indptr[j + 1]], self.n - nnz_col[j], config.max_bins)
                for j in range(self.d)
            ]
            self.n_bounds = np.array([b.size for b in bounds], dtype=np.int64)
            self.bound_off = np.concatenate([[0], np.cumsum(self.n_bounds)])
            self.bounds = np.concatenate(bounds) if bounds else np.empty(0)
            key = np.empty(Xc.nnz)
            self.zero_key = np.empty(self.d)
            for j in range(self.d):
                lo, hi = Xc.indptr[j], Xc.indptr[j + 1]
                b = bounds[j]
                key[lo:hi] = np.searchsorted(b, Xc.data[lo:hi], side="left")
                self.zero_key[j] = np.searchsorted(b, 0.0, side="left")
        else:
            key = Xc.data.copy()
            self.zero_key = np.zeros(self.d)
        order = np.lexsort((key, feat))
        self.feat = feat[order]
        self.key = key[order]
        self.row = Xc.indices[order].astype(np.int64)

    def threshold(self, feature: np.ndarray, key_lo: np.ndarray, key_hi: np.ndarray) -> np.ndarray:
        if self.binned:
            return self.bounds[self.bound_off[feature] + key_lo.astype(np.int64)]
        return (key_lo + key_hi) / 2.0

    def goes_right(self, feature: int, threshold: float, rows: np.ndarray) -> np.ndarray:
        """Boolean mask over ``rows``: nonzero value strictly above threshold."""
        lo, hi = self.Xc.indptr[feature], self.Xc.indptr[feature + 1]
        col_rows = self.Xc.indices[lo:hi]
        hit = col_rows[self.Xc.data[lo:hi] > threshold]
        return np.isin(rows, hit, assume_unique=False)


def _segment_starts(*keys: np.ndarray) -> np.ndarray:
    n = keys[0].size
    start = np.zeros(n, dtype=bool)
    if n:
        start[0] = True
        for k in keys:
            start[1:] |= k[1:] != k[:-1]
    return start


def _level_splits(layout: _Layout, node_of_row, active, G_node, H_node, n_node, g, h, config):
    """Best split per active node, searched jointly for one tree level.

    Returns ``{node: (feature, threshold, gain)}``.
    """
    ne = node_of_row[layout.row]
    keep = active[ne]
    ne = ne[keep]
    order = np.argsort(ne, kind="stable")
    ne = ne[order]
    f = layout.feat[keep][order]
    k = layout.key[keep][order]
    rows = layout.row[keep][order]
    if ne.size == 0:
        return {}
    ge, he = g[rows], h[rows]

    # distinct (node, feature, key) groups of nonzero entries
    gstart = np.flatnonzero(_segment_starts(ne, f, k))
    gn, gf, gk = ne[gstart], f[gstart], k[gstart]
    gG = np.add.reduceat(ge, gstart)
    gH = np.add.reduceat(he, gstart)
    gc = np.diff(np.append(gstart, ne.size))

    # (node, feature) segments: nonzero mass and zero (absent) mass
    sstart = np.flatnonzero(_segment_starts(gn, gf))
    sn, sf = gn[sstart], gf[sstart]
    Gz = G_node[sn] - np.add.reduceat(gG, sstart)
    Hz = H_node[sn] - np.add.reduceat(gH, sstart)
    has_zero = n_node[sn] - np.add.reduceat(gc, sstart) > 0

    seg_of = np.cumsum(_segment_starts(gn, gf)) - 1
    send = np.append(sstart[1:], gn.size)
    zk = layout.zero_key[sf]
    cumG = np.cumsum(gG)
    cumH = np.cumsum(gH)
    cumG -= (cumG[sstart] - gG[sstart])[seg_of]
    cumH -= (cumH[sstart] - gH[sstart])[seg_of]

    # (a) cut right after nonzero group p: zero mass always sits left
    nxt_same = np.zeros(gn.size, bool)
    nxt_same[:-1] = seg_of[:-1] == seg_of[1:]
    zero_above = has_zero[seg_of] & (zk[seg_of] > gk)
    pa = np.flatnonzero(nxt_same | zero_above)
    next_key = np.where(nxt_same[pa], gk[np.minimum(pa + 1, gk.size - 1)], np.inf)
    hi_a = np.where(zero_above[pa], np.minimum(next_key, zk[seg_of[pa]]), next_key)

    # (b) cut right after the zero value, when zero is its own distinct key
    below = np.add.reduceat((gk < zk[seg_of]).astype(np.int64), sstart)
    first_up = sstart + below
    sb = np.flatnonzero(has_zero & (first_up < send))
    sb = sb[gk[first_up[sb]] != zk[sb]]
    before = first_up[sb] - 1
    cb_G = np.where(below[sb] > 0, cumG[np.maximum(before, 0)], 0.0)
    cb_H = np.where(below[sb] > 0, cumH[np.maximum(before, 0)], 0.0)

    seg = np.concatenate([seg_of[pa], sb])
    if seg.size == 0:
        return {}
    GL = Gz[seg] + np.concatenate([cumG[pa], cb_G])
    HL = Hz[seg] + np.concatenate([cumH[pa], cb_H])
    lo = np.concatenate([gk[pa], zk[sb]])
    hi = np.concatenate([hi_a, gk[first_up[sb]]])
    node = sn[seg]
    feat = sf[seg]
    GR = G_node[node] - GL
    HR = H_node[node] - HL
    gain = split_gain(GL, HL, GR, HR, config.lam, config.gamma)
    mcw = config.min_child_weight
    ok = (HL >= mcw) & (HR >= mcw) & (gain > 0)
    if not ok.any():
        return {}
    node, feat, lo, hi, gain = node[ok], feat[ok], lo[ok], hi[ok], gain[ok]
    # per node: max gain, ties to (lower feature, lower threshold)
    order = np.lexsort((lo, feat, -gain, node))
    first = order[_segment_starts(node[order])]
    thr = layout.threshold(feat[first], lo[first], hi[first])
    return {
        int(node[c]): (int(feat[c]), float(t), float(gain[c]))
        for c, t in zip(first, thr)
    }


@dataclass(frozen=True)
class SplitResult:
    feature: int
    threshold: float
    gain: float


def find_best_split(X, g, h, config: GbdtConfig = GbdtConfig(), rows: Sequence[int] | None = None) -> SplitResult | None:
    """Best single split over ``rows`` (all rows by default), or None.

    The oblivious preset searches its shared bins exactly like ``histogram``
    does for one node.
    """
    layout = _Layout(sp.csr_matrix(X, dtype=np.float64), config)
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    in_node = np.zeros(layout.n, dtype=bool)
    in_node[np.arange(layout.n) if rows is None else np.asarray(rows, dtype=np.int64)] = True
    if in_node.sum() < 2 or h[in_node].sum() < 2 * config.min_child_weight:
        return None
    node_of_row = np.where(in_node, 0, 1)
    res = _level_splits(
        layout, node_of_row, np.array([True, False]),
        np.array([g[in_node].sum(), 0.0]), np.array([h[in_node].sum(), 0.0]),
        np.array([in_node.sum(), 0]), g, h, config,
    )
    if 0 not in res:
        return None
    return SplitResult(*res[0])


def _grow_depthwise(layout: _Layout, g, h, config: GbdtConfig):
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    node_of_row = np.zeros(layout.n, dtype=np.int64)
    frontier = [0]
    mcw = config.min_child_weight
    for _ in range(config.max_depth):
        n_nodes = len(feature)
        G = np.bincount(node_of_row, weights=g, minlength=n_nodes)
        H = np.bincount(node_of_row, weights=h, minlength=n_nodes)
        cnt = np.bincount(node_of_row, minlength=n_nodes)
        active = np.zeros(n_nodes, dtype=bool)
        for nd in frontier:
            active[nd] = cnt[nd] >= 2 and H[nd] >= 2 * mcw
        if not active.any():
            break
        splits = _level_splits(layout, node_of_row, active, G, H, cnt, g, h, config)
        if not splits:
            break
        new_frontier = []
        for nd in frontier:
            if nd not in splits:
                continue
            f, t, _ = splits[nd]
            l_id, r_id = len(feature), len(feature) + 1
            feature[nd], threshold[nd], left[nd], right[nd] = f, t, l_id, r_id
            feature += [-1, -1]
            threshold += [0.0, 0.0]
            left += [-1, -1]
            right += [-1, -1]
            rows = np.flatnonzero(node_of_row == nd)
            node_of_row[rows] = np.where(layout.goes_right(f, t, rows), r_id, l_id)
            new_frontier += [l_id, r_id]
        frontier = new_frontier
    return feature, threshold, left, right, node_of_row


def _grow_oblivious(layout: _Layout, g, h, config: GbdtConfig):
    d = layout.d
    n_bounds = layout.n_bounds
    # flat histogram: n_bounds[j] + 1 bins per feature
    hist_off = np.concatenate([[0], np.cumsum(n_bounds + 1)])
    total_bins = int(hist_off[-1])
    cand_feat = np.repeat(np.arange(d), n_bounds)
    cand_pos = hist_off[cand_feat] + (np.arange(cand_feat.size) - layout.bound_off[cand_feat])
    flat = hist_off[layout.feat] + layout.key.astype(np.int64)
    feat_last = hist_off[1:] - 1

    leaf_of_row = np.zeros(layout.n, dtype=np.int64)
    splits: list[tuple[int, float]] = []
    lam, mcw = config.lam, config.min_child_weight
    for depth in range(config.max_depth):
        if cand_feat.size == 0:
            break
        n_leaves = 1 << depth
        G = np.bincount(leaf_of_row, weights=g, minlength=n_leaves)
        H = np.bincount(leaf_of_row, weights=h, minlength=n_leaves)
        ne = leaf_of_row[layout.row]
        order = np.argsort(ne, kind="stable")
        bounds = np.searchsorted(ne[order], np.arange(n_leaves + 1))
        total = np.zeros(cand_feat.size)
        for leaf in range(n_leaves):
            sel = order[bounds[leaf]:bounds[leaf + 1]]
            if sel.size == 0:
                continue  # all values zero here: every cut sends the whole leaf left
            rws = layout.row[sel]
            hg = np.cumsum(np.bincount(flat[sel], weights=g[rws], minlength=total_bins))
            hh = np.cumsum(np.bincount(flat[sel], weights=h[rws], minlength=total_bins))
            before_g = np.concatenate([[0.0], hg])[hist_off[:-1]]
            before_h = np.concatenate([[0.0], hh])[hist_off[:-1]]
            Gz = G[leaf] - (hg[feat_last] - before_g)
            Hz = H[leaf] - (hh[feat_last] - before_h)
            GL = Gz[cand_feat] + hg[cand_pos] - before_g[cand_feat]
            HL = Hz[cand_feat] + hh[cand_pos] - before_h[cand_feat]
            GR, HR = G[leaf] - GL, H[leaf] - HL
            gain = split_gain(GL, HL, GR, HR, lam, 0.0)
            gain[(HL < mcw) | (HR < mcw)] = 0.0
            total += gain
        total -= config.gamma
        best = int(np.argmax(total))
        if not total[best] > 0:
            break
        f = int(cand_feat[best])
        t = float(layout.bounds[best])
        splits.append((f, t))
        leaf_of_row = 2 * leaf_of_row + layout.goes_right(f, t, np.arange(layout.n))
    depth = len(splits)
    n_internal = (1 << depth) - 1
    n_nodes = (1 << (depth + 1)) - 1
    feature = [-1] * n_nodes
    threshold = [0.0] * n_nodes
    left = [-1] * n_nodes
    right = [-1] * n_nodes
    for nd in range(n_internal):
        lvl = (nd + 1).bit_length() - 1
        feature[nd], threshold[nd] = splits[lvl]
        left[nd], right[nd] = 2 * nd + 1, 2 * nd + 2
    node_of_row = n_internal + leaf_of_row
    return feature, threshold, left, right, node_of_row


def _build_tree(layout, g, h, config: GbdtConfig) -> tuple[RegressionTree, np.ndarray]:
    grow = _grow_oblivious if config.preset == "oblivious" else _grow_depthwise
    feature, threshold, left, right, node_of_row = grow(layout, g, h, config)
    n_nodes = len(feature)
    G = np.bincount(node_of_row, weights=g, minlength=n_nodes)
    H = np.bincount(node_of_row, weights=h, minlength=n_nodes)
    left_arr = np.asarray(left, dtype=np.int64)
    value = np.where(left_arr < 0, -G / (H + config.lam), 0.0)
    tree = RegressionTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        left_arr,
        np.asarray(right, dtype=np.int64),
        value,
        config.preset == "oblivious",
    )
    return tree, value[node_of_row]


def weighted_logloss(y, margin, sw) -> float:
    sign = 2.0 * y - 1.0
    return float(sw @ np.logaddexp(0.0, -sign * margin) / sw.sum())


def fit_gbdt(X, y, sample_weights=None, config: GbdtConfig = GbdtConfig()) -> GbdtModel:
    """Newton boosting of regression trees on weighted log loss."""
    X = sp.csr_matrix(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sw = np.ones(y.size) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    if X.shape[0] != y.size or sw.shape != y.shape:
        raise FitError("X, y and sample weights differ in length")
    if not np.all(np.isfinite(X.data)):
        raise FitError("non-finite feature values")
    pos = float(sw @ y) / float(sw.sum()) if y.size else 0.0
    if not 0 < pos < 1:
        raise DegenerateError("boosting needs both classes present")
    base = float(np.log(pos / (1 - pos)))
    margin = np.full(y.size, base)
    losses = [weighted_logloss(y, margin, sw)]
    trees = []
    if config.rounds > 0 and config.learning_rate > 0:
        layout = _Layout(X, config)
        for _ in range(config.rounds):
            g, h = logloss_grad_hess(y, margin, sw)
            tree, out = _build_tree(layout, g, h, config)
            trees.append(tree)
            margin = margin + config.learning_rate * out
            losses.append(weighted_logloss(y, margin, sw))
    return GbdtModel(base, tuple(trees), config, X.shape[1], tuple(losses))


def tree_outputs(tree: RegressionTree, X: sp.csr_matrix) -> np.ndarray:
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    if tree.left[0] < 0:
        return np.full(n, tree.value[0])
    used = np.unique(tree.feature[tree.left >= 0])
    col_of = {int(f): i for i, f in enumerate(used)}
    cols = sp.csc_matrix(X[:, used]).toarray()
    feat_col = np.array([col_of.get(int(f), 0) for f in tree.feature], dtype=np.int64)
    live = np.arange(n)
    while live.size:
        nd = node[live]
        internal = tree.left[nd] >= 0
        live, nd = live[internal], nd[internal]
        if not live.size:
            break
        v = cols[live, feat_col[nd]]
        right = (v != 0) & (v > tree.threshold[nd])
        node[live] = np.where(right, tree.right[nd], tree.left[nd])
    return tree.value[node]


def gbdt_margin(model: GbdtModel, X) -> np.ndarray:
    X = sp.csr_matrix(X, dtype=np.float64)
    total = np.zeros(X.shape[0])
    for tree in model.trees:
        total += tree_outputs(tree, X)
    return model.base_score + model.config.learning_rate * total


def gbdt_predict_proba(model: GbdtModel, X) -> np.ndarray:
    return expit(gbdt_margin(model, X))
