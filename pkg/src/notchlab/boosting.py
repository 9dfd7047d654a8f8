"""Multiclass gradient boosting with softmax loss and per-leaf Newton steps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import cart
from ._parallel import pmap
from .data import CLASSES, N_CLASSES, Dataset, class_index

HESS_FLOOR = 1e-8


class BoostingError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoostConfig:
    n_rounds: int = 1000
    shrinkage: float = 0.05
    colsample: float = 2 / 3
    max_depth: int = 6
    min_node_size: int = 5
    seed: int = 0
    max_bins: int = 255  # continuous columns with more distinct values are quantile-binned
    min_child_weight: float = 1.0  # minimum hessian sum per child, as in xgboost

    def __post_init__(self):
        if not 0 <= self.shrinkage < 1:
            raise ValueError("shrinkage must lie in [0, 1)")
        if not 0 < self.colsample <= 1:
            raise ValueError("colsample must lie in (0, 1]")
        if self.n_rounds < 0 or self.max_depth < 0 or self.min_node_size < 1:
            raise ValueError("n_rounds, max_depth >= 0 and min_node_size >= 1 required")

    def resolved_mtry(self, m: int) -> int:
        return max(1, min(m, round(self.colsample * m)))


def softmax(scores) -> np.ndarray:
    z = np.asarray(scores, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(y_idx, phi) -> float:
    """Mean softmax cross-entropy of class indices ``y_idx`` under scores ``phi``."""
    phi = np.asarray(phi, dtype=np.float64)
    top = phi.max(axis=1)
    lse = top + np.log(np.exp(phi - top[:, None]).sum(axis=1))
    return float(np.mean(lse - phi[np.arange(len(phi)), y_idx]))


def pseudo_residuals(y_idx, phi) -> np.ndarray:
    """Negative gradient of the summed cross-entropy: onehot(y) - softmax(phi)."""
    phi = np.asarray(phi, dtype=np.float64)
    r = -softmax(phi)
    r[np.arange(len(phi)), y_idx] += 1.0
    return r


def prior_scores(y_idx, n_classes: int = N_CLASSES) -> np.ndarray:
    """Log of Laplace-smoothed class priors; absent classes get a finite score."""
    counts = np.bincount(y_idx, minlength=n_classes).astype(np.float64)
    return np.log((counts + 1.0) / (counts.sum() + n_classes))


@dataclass
class BoostModel:
    columns: list
    base_scores: np.ndarray
    trees: cart.PackedTrees  # round-major, class-minor; leaf = line-searched Newton step
    shrinkage: float
    loss_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fingerprint: str = ""
    config: BoostConfig | None = None

    @property
    def n_rounds(self) -> int:
        return self.trees.n_trees // len(self.base_scores)

    def decision_function(self, ds_or_X) -> np.ndarray:
        X = ds_or_X.matrix(self.columns) if isinstance(ds_or_X, Dataset) else ds_or_X
        X = np.asarray(X, dtype=np.float64)
        out = self.trees.scores(X, len(self.base_scores), scale=self.shrinkage)
        return out + self.base_scores

    def predict_proba(self, ds_or_X) -> np.ndarray:
        return softmax(self.decision_function(ds_or_X))

    def predict(self, ds_or_X) -> np.ndarray:
        return CLASSES[np.argmax(self.decision_function(ds_or_X), axis=1)]


def _line_search(y_idx, phi, step, loss0, max_halvings=40):
    """Largest rho in {1, 1/2, ...} with L(phi + rho*step) <= L(phi); 0 if none.

    If no halving helps and some trial loss was non-finite, the returned
    loss is NaN so the caller can abort.
    """
    rho, bad = 1.0, False
    for _ in range(max_halvings):
        loss = cross_entropy(y_idx, phi + rho * step)
        if loss <= loss0:
            return rho, loss
        bad |= not math.isfinite(loss)
        rho *= 0.5
    return 0.0, (math.nan if bad else loss0)


def fit(ds: Dataset, cfg: BoostConfig = BoostConfig(), columns: Sequence[str] | None = None,
        threads: int | None = None, callback=None) -> BoostModel:
    columns = list(ds.schema.predictors() if columns is None else columns)
    inp = cart.TreeInput.from_dataset(ds, columns)
    return fit_input(inp, ds.labels, cfg, threads, ds.schema.fingerprint(), callback)


def fit_input(inp: cart.TreeInput, ratings, cfg: BoostConfig = BoostConfig(),
              threads: int | None = None, fingerprint: str = "", callback=None) -> BoostModel:
    """Algorithm: phi_0 = log priors; each round fits one squared-error tree per class
    to the pseudo-residuals, sets leaf values to Newton steps sum(r)/sum(p(1-p)),
    and moves phi by v * rho * step, rho from a backtracking line search that
    keeps the training loss from rising."""
    n, m = inp.shape
    if n < 2:
        raise ValueError("boosting needs at least two records")
    y_idx = class_index(ratings)
    C = N_CLASSES
    base = prior_scores(y_idx, C)
    phi = np.tile(base, (n, 1))
    w = np.ones(n)
    if m:
        inp.binned(cfg.max_bins)
    mtry = cfg.resolved_mtry(m) if m else 1
    v = cfg.shrinkage
    loss = cross_entropy(y_idx, phi)
    trace = [loss]
    trees, leaves = [], []

    for rnd in range(cfg.n_rounds):
        P = softmax(phi)
        R = -P
        R[np.arange(n), y_idx] += 1.0
        H = P * (1.0 - P)

        def grow(c):
            seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(rnd, c)).generate_state(1)[0])
            tc = cart.TreeConfig(min_node_size=cfg.min_node_size, max_depth=cfg.max_depth,
                                 mtry=mtry, rng_seed=seed)
            t = cart._grow_hist(inp, w, R[:, c], H[:, c], tc, HESS_FLOOR, cfg.max_bins,
                                cfg.min_child_weight)
            return t, t.value[t.apply(inp.X), 0]

        grown = pmap(grow, range(C), threads)
        step = np.column_stack([u for _, u in grown])
        rho, new_loss = _line_search(y_idx, phi, v * step, loss) if v > 0 else (1.0, loss)
        if not math.isfinite(new_loss):
            raise BoostingError(f"non-finite training loss at round {rnd + 1}")
        phi += v * rho * step
        loss = new_loss
        trace.append(loss)
        for t, _ in grown:
            trees.append(t)
            leaves.append(rho * t.value[:, 0])
        if callback is not None:
            callback(rnd, loss)

    packed = cart.PackedTrees.pack(trees, leaves, np.tile(np.arange(C), cfg.n_rounds), inp.is_cat)
    return BoostModel(list(inp.names), base, packed, v, np.array(trace), fingerprint, cfg)
