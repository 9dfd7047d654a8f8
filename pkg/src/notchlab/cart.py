"""Classification trees grown by Gini impurity decrease."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _treekernel as K
from .data import N_CLASSES, CLASSES, Dataset, FeatureKind, class_index

MAX_EXHAUSTIVE_LEVELS = 10


@dataclass(frozen=True)
class TreeConfig:
    min_node_size: int = 1
    max_depth: int | None = None
    mtry: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


@dataclass(frozen=True)
class SplitRule:
    """Go left iff ``x <= threshold`` (continuous) or ``x in subset`` (discrete)."""

    variable: int
    threshold: float | None = None
    subset: frozenset | None = None

    def goes_left(self, value) -> bool:
        if self.subset is not None:
            return value in self.subset
        return value <= self.threshold


class TreeInput:
    """Raw predictor matrix plus the per-column metadata the kernel needs."""

    def __init__(self, X: np.ndarray, is_cat: np.ndarray, n_levels: np.ndarray, names=None):
        self.X = np.asfortranarray(X, dtype=np.float64)
        self.is_cat = np.asarray(is_cat, dtype=np.bool_)
        self.n_levels = np.asarray(n_levels, dtype=np.int64)
        self.names = list(names) if names is not None else [f"x{j}" for j in range(self.X.shape[1])]
        if np.any(self.n_levels[self.is_cat] > 62):
            raise ValueError("discrete columns are limited to 62 levels")
        self._order = None
        self._binned = None

    @classmethod
    def from_dataset(cls, ds: Dataset, names: Sequence[str]) -> "TreeInput":
        cols = [ds.schema.column(n) for n in names]
        is_cat = np.array([c.kind.is_discrete for c in cols], dtype=np.bool_)
        n_levels = np.array([len(c.levels) for c in cols], dtype=np.int64)
        return cls(ds.matrix(names), is_cat, n_levels, names)

    @property
    def shape(self):
        return self.X.shape

    @property
    def order(self) -> np.ndarray:
        if self._order is None:
            n, m = self.X.shape
            order = np.empty((m, n), dtype=np.int64)
            for j in range(m):
                order[j] = np.argsort(self.X[:, j], kind="stable")
            self._order = order
        return self._order


    def binned(self, max_bins: int = 255):
        """(codes, n_bins, bin_lo, bin_hi) for histogram growing; cached."""
        if self._binned is None or self._binned[4] != max_bins:
            self._binned = bin_columns(self.X, self.is_cat, self.n_levels, max_bins) + (max_bins,)
        return self._binned[:4]


def bin_columns(X, is_cat, n_levels, max_bins: int = 255):
    """Discretize continuous columns into at most ``max_bins`` quantile bins.

    Returns codes plus per-bin min and max values. Columns with few distinct
    values get one bin per value, so histogram splits coincide with exact
    splits there.
    """
    n, m = X.shape
    B = np.empty((n, m), dtype=np.int64, order="F")
    n_bins = np.zeros(m, dtype=np.int64)
    width = max(max_bins, int(np.max(n_levels, initial=1)))
    lo = np.full((m, width), np.nan)
    hi = np.full((m, width), np.nan)
    for f in range(m):
        x = X[:, f]
        if is_cat[f]:
            B[:, f] = x.astype(np.int64)
            n_bins[f] = n_levels[f]
            continue
        u = np.unique(x)
        if len(u) <= max_bins:
            ub = u
        else:
            q = np.quantile(x, np.linspace(0, 1, max_bins + 1)[1:], method="inverted_cdf")
            ub = np.unique(q)
        codes = np.searchsorted(ub, x, side="left")
        B[:, f] = codes
        n_bins[f] = len(ub)
        hi[f, : len(ub)] = ub
        # smallest distinct value in bin b is the first one above ub[b-1]
        lo[f, : len(ub)] = u[np.r_[0, np.searchsorted(u, ub[:-1], side="right")]]
    code_t = np.uint8 if width <= 256 else np.uint16
    return np.asfortranarray(B.astype(code_t)), n_bins, lo, hi


@dataclass
class Tree:
    """Flat-array binary tree. Leaves have ``feature == -1``.

    For classification trees ``value[k]`` holds the (weighted) class counts of
    node ``k``; for boosting trees it holds the leaf step.
    """

    feature: np.ndarray
    threshold: np.ndarray
    cat_mask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_node: np.ndarray
    decrease: np.ndarray
    value: np.ndarray
    is_cat: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def depth(self) -> int:
        d = np.zeros(self.n_nodes, dtype=np.int64)
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                d[self.left[k]] = d[self.right[k]] = d[k] + 1
        return int(d.max())

    def rule(self, node: int) -> SplitRule:
        f = int(self.feature[node])
        if f < 0:
            raise ValueError(f"node {node} is a leaf")
        if self.is_cat[f]:
            mask = int(self.cat_mask[node])
            return SplitRule(f, subset=frozenset(b for b in range(63) if mask >> b & 1))
        return SplitRule(f, threshold=float(self.threshold[node]))

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return K.apply(X, self.feature, self.threshold, self.cat_mask, self.is_cat,
                       self.left, self.right)

    @property
    def leaf_class(self) -> np.ndarray:
        """Argmax class index per node; ties go to the lowest class."""
        return np.argmax(self.value, axis=1)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Predicted ratings (2..15) for the rows of a raw predictor matrix."""
        return CLASSES[self.leaf_class[self.apply(X)]]

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X), 0]

    def to_arrays(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "Tree":
        return cls(**{k: np.asarray(arrays[k]) for k in cls.__dataclass_fields__})


def gini_impurity(class_counts) -> float:
    counts = np.asarray(class_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("gini impurity needs at least one observation")
    p = counts / total
    return float(np.sum(p * (1.0 - p)))


def _grow(inp: TreeInput, weights, y_idx, cfg: TreeConfig, mode=K.GINI, g=None, h=None,
          hess_floor=1e-8) -> Tree:
    m = inp.X.shape[1]
    mtry = m if cfg.mtry is None else min(cfg.mtry, m)
    max_depth = -1 if cfg.max_depth is None else cfg.max_depth
    n_classes = N_CLASSES if mode == K.GINI else 1
    y = np.zeros(1, dtype=np.int64) if y_idx is None else np.ascontiguousarray(y_idx, dtype=np.int64)
    g = np.zeros(1) if g is None else np.ascontiguousarray(g, dtype=np.float64)
    h = np.zeros(1) if h is None else np.ascontiguousarray(h, dtype=np.float64)
    w = np.ascontiguousarray(weights, dtype=np.float64)
    if not np.any(w > 0):
        raise ValueError("cannot grow a tree on zero rows")
    order = inp.order if m > 0 else np.zeros((0, len(w)), dtype=np.int64)
    seed = int(cfg.rng_seed) % (2**32)
    arrays = K.grow(inp.X, inp.is_cat, inp.n_levels, order, w, y, g, h, mode, n_classes,
                    float(cfg.min_node_size), max_depth, max(mtry, 1), seed,
                    MAX_EXHAUSTIVE_LEVELS, hess_floor)
    feature, threshold, cat_mask, left, right, n_node, decrease, value = arrays
    return Tree(feature, threshold, cat_mask, left, right, n_node, decrease, value, inp.is_cat.copy())


def _grow_hist(inp: TreeInput, weights, g, h, cfg: TreeConfig, hess_floor=1e-8,
               max_bins: int = 255, min_hess: float = 0.0) -> Tree:
    """Squared-error tree on binned columns; leaf value = sum(g) / max(sum(h), floor)."""
    m = inp.X.shape[1]
    B, n_bins, lo, hi = inp.binned(max_bins)
    mtry = m if cfg.mtry is None else min(cfg.mtry, m)
    max_depth = -1 if cfg.max_depth is None else cfg.max_depth
    arrays = K.grow_hist(B, n_bins, lo, hi, inp.is_cat, np.ascontiguousarray(weights, dtype=np.float64),
                         np.ascontiguousarray(g, dtype=np.float64), np.ascontiguousarray(h, dtype=np.float64),
                         float(cfg.min_node_size), float(min_hess), max_depth, max(mtry, 1),
                         int(cfg.rng_seed) % (2**32), hess_floor)
    return Tree(*arrays, inp.is_cat.copy())


def fit(inp: TreeInput, y, cfg: TreeConfig = TreeConfig(), rows=None, weights=None) -> Tree:
    """Grow a classification tree on ``rows`` (default all) of ``inp``.

    ``y`` holds ratings 2..15. ``weights`` are integer multiplicities, as
    produced by a bootstrap draw; they override ``rows`` when given.
    """
    y_idx = class_index(y)
    n = inp.X.shape[0]
    if weights is None:
        weights = np.zeros(n)
        if rows is None:
            weights[:] = 1.0
        else:
            np.add.at(weights, np.asarray(rows, dtype=np.int64), 1.0)
    return _grow(inp, weights, y_idx, cfg)


def fit_dataset(ds: Dataset, names: Sequence[str], cfg: TreeConfig = TreeConfig(), rows=None) -> Tree:
    return fit(TreeInput.from_dataset(ds, names), ds.labels, cfg, rows=rows)


def best_split(inp: TreeInput, y, rows=None, candidates=None, min_node_size: int = 1):
    """Best Gini split of ``rows`` over ``candidates``; ``None`` if nothing decreases impurity.

    Returns ``(SplitRule, impurity_decrease)``. Thresholds are midpoints of
    consecutive distinct values; discrete columns with at most ten levels are
    searched exhaustively. Ties go to the lowest column, then the smallest
    threshold or lexicographically smallest level subset.
    """
    n, m = inp.X.shape
    rows = np.arange(n) if rows is None else np.asarray(rows, dtype=np.int64)
    if len(rows) < 2:
        raise ValueError("best_split needs at least two rows")
    cand = np.arange(m) if candidates is None else np.unique(np.asarray(candidates, dtype=np.int64))
    w = np.zeros(n)
    np.add.at(w, rows, 1.0)
    sub = TreeInput(inp.X[:, cand], inp.is_cat[cand], inp.n_levels[cand])
    tree = _grow(sub, w, class_index(y), TreeConfig(min_node_size=min_node_size, max_depth=1))
    if tree.feature[0] < 0:
        return None
    r = tree.rule(0)
    rule = SplitRule(int(cand[r.variable]), r.threshold, r.subset)
    return rule, float(tree.decrease[0])


def predict_record(tree: Tree, values: Sequence) -> int:
    """Descend from the root for a single raw predictor vector."""
    node = 0
    while tree.feature[node] >= 0:
        node = tree.left[node] if tree.rule(node).goes_left(values[tree.feature[node]]) else tree.right[node]
    return int(CLASSES[tree.leaf_class[node]])


def accumulate_importance(tree: Tree, acc: np.ndarray) -> np.ndarray:
    """acc[v] += sum over nodes split on v of (node_n / root_n) * impurity decrease."""
    internal = tree.feature >= 0
    if np.any(internal):
        weights = tree.n_node[internal] / tree.n_node[0]
        np.add.at(acc, tree.feature[internal], weights * tree.decrease[internal])
    return acc


def column_kinds(ds: Dataset, names: Sequence[str]) -> list[FeatureKind]:
    return [ds.schema.column(n).kind for n in names]


@dataclass
class PackedTrees:
    """Many trees concatenated into flat arrays; child ids are local to each tree.

    ``leaf`` holds a class index (forests) or a score step (boosting) per node.
    ``tree_class`` maps each tree to the class score it updates.
    """

    offsets: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    cat_mask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf: np.ndarray
    tree_class: np.ndarray
    is_cat: np.ndarray

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1

    @classmethod
    def pack(cls, trees: Sequence[Tree], leaf_values: Sequence[np.ndarray], tree_class=None,
             is_cat=None) -> "PackedTrees":
        sizes = [t.n_nodes for t in trees]
        offsets = np.zeros(len(trees) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)
        if is_cat is None:
            is_cat = trees[0].is_cat if trees else np.zeros(0, dtype=np.bool_)
        return cls(
            offsets,
            cat([t.feature for t in trees], np.int32),
            cat([t.threshold for t in trees], np.float64),
            cat([t.cat_mask for t in trees], np.int64),
            cat([t.left for t in trees], np.int32),
            cat([t.right for t in trees], np.int32),
            cat(list(leaf_values), np.float64),
            np.zeros(len(trees), np.int64) if tree_class is None else np.asarray(tree_class, np.int64),
            np.asarray(is_cat, dtype=np.bool_),
        )

    def votes(self, X: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.zeros((X.shape[0], n_classes), dtype=np.int64)
        K.packed_votes(X, self.offsets, self.feature, self.threshold, self.cat_mask, self.is_cat,
                       self.left, self.right, self.leaf.astype(np.int64), out)
        return out

    def scores(self, X: np.ndarray, n_classes: int = N_CLASSES, scale: float = 1.0) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.zeros((X.shape[0], n_classes))
        K.packed_scores(X, self.offsets, self.feature, self.threshold, self.cat_mask, self.is_cat,
                        self.left, self.right, self.leaf * scale, self.tree_class, out)
        return out

    def to_arrays(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "PackedTrees":
        return cls(**{k: np.asarray(arrays[k]) for k in cls.__dataclass_fields__})
