"""Random forest: bootstrap-aggregated CARTs with per-split column sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import cart
from ._parallel import pmap
from .data import CLASSES, Dataset, class_index


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int | None = None  # None -> ceil(sqrt(m))
    min_node_size: int = 5
    seed: int = 0
    bootstrap: bool = True  # False only as a test hook: every tree sees the data once

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")

    def resolved_mtry(self, m: int) -> int:
        k = math.ceil(math.sqrt(m)) if self.mtry is None else self.mtry
        if m and k > m:
            raise ValueError(f"mtry={k} exceeds the {m} predictor columns")
        return max(k, 1)


def tree_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Independent stream per (seed, tree index); scheduling never changes results."""
    return np.random.SeedSequence(seed, spawn_key=(index,))


@dataclass
class ForestModel:
    columns: list
    trees: cart.PackedTrees
    importance: np.ndarray
    fingerprint: str
    config: ForestConfig

    @property
    def n_trees(self) -> int:
        return self.trees.n_trees

    def votes(self, ds_or_X) -> np.ndarray:
        return self.trees.votes(_matrix(ds_or_X, self.columns))

    def predict_proba(self, ds_or_X) -> np.ndarray:
        return self.votes(ds_or_X) / self.n_trees

    def predict(self, ds_or_X) -> np.ndarray:
        # argmax returns the first maximum, i.e. the lowest rating on ties
        return CLASSES[np.argmax(self.votes(ds_or_X), axis=1)]


def _matrix(ds_or_X, columns):
    if isinstance(ds_or_X, Dataset):
        return ds_or_X.matrix(columns)
    return np.asarray(ds_or_X, dtype=np.float64)


def fit(ds: Dataset, cfg: ForestConfig = ForestConfig(), columns: Sequence[str] | None = None,
        threads: int | None = None) -> ForestModel:
    """Grow ``cfg.n_trees`` trees, each on its own size-n bootstrap sample."""
    columns = list(ds.schema.predictors() if columns is None else columns)
    inp = cart.TreeInput.from_dataset(ds, columns)
    return fit_input(inp, ds.labels, cfg, threads, fingerprint=ds.schema.fingerprint())


def fit_input(inp: cart.TreeInput, ratings, cfg: ForestConfig = ForestConfig(),
              threads: int | None = None, fingerprint: str = "") -> ForestModel:
    """Forest on a raw predictor matrix; ``ratings`` in 2..15."""
    if inp.shape[0] < 2:
        raise ValueError("forest needs at least two records")
    inp.order  # presort once, shared read-only by all workers
    y = class_index(ratings)
    n, m = inp.shape
    mtry = cfg.resolved_mtry(m)

    def grow(t):
        ss = tree_seed(cfg.seed, t)
        if cfg.bootstrap:
            draw = np.random.default_rng(ss).integers(0, n, n)
            w = np.bincount(draw, minlength=n).astype(np.float64)
        else:
            w = np.ones(n)
        kseed = int(ss.generate_state(1)[0])
        tc = cart.TreeConfig(min_node_size=cfg.min_node_size, mtry=mtry, rng_seed=kseed)
        tree = cart._grow(inp, w, y, tc)
        imp = cart.accumulate_importance(tree, np.zeros(m))
        return tree, imp

    grown = pmap(grow, range(cfg.n_trees), threads)
    trees = [t for t, _ in grown]
    importance = np.mean([imp for _, imp in grown], axis=0)
    packed = cart.PackedTrees.pack(trees, [t.leaf_class for t in trees])
    return ForestModel(list(inp.names), packed, importance, fingerprint, cfg)


def importance(model: ForestModel) -> dict:
    return dict(zip(model.columns, model.importance))
