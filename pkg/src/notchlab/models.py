"""Model specs shared by the CV driver, the analyses and the CLI.

A spec knows how to fit one model family on a training Dataset and returns a
``Fitted`` wrapper that predicts ratings for any Dataset with the same schema.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import boosting, forest, mnl
from . import neuralnet as nn
from ._parallel import pmap
from .data import DataError, Dataset, Encoder, FoldAssignment, stratified_kfold

KINDS = ("forest", "boosting", "mnl", "nn")


class FingerprintError(DataError):
    pass


@dataclass
class Fitted:
    kind: str
    columns: list
    fingerprint: str
    model: object
    encoder: dict | None = None  # {"columns", "means", "scales"} for one-hot models
    meta: dict = field(default_factory=dict)

    def design(self, ds: Dataset) -> np.ndarray:
        if ds.schema.fingerprint() != self.fingerprint:
            raise FingerprintError("schema fingerprint of the data does not match the model")
        if self.encoder is None:
            return ds.matrix(self.columns)
        enc = Encoder(ds.schema, list(self.encoder["columns"]), dict(self.encoder["means"]),
                      dict(self.encoder["scales"]))
        return enc.transform(ds)

    def predict(self, ds: Dataset) -> np.ndarray:
        return self.model.predict(self.design(ds))

    def predict_proba(self, ds: Dataset) -> np.ndarray:
        return self.model.predict_proba(self.design(ds))


def _encoder_state(enc: Encoder) -> dict:
    return {"columns": list(enc.columns), "means": dict(enc.means), "scales": dict(enc.scales)}


class _Spec:
    name = "model"

    def fit(self, train: Dataset, columns: Sequence[str], seed: int = 0, threads=None) -> Fitted:
        raise NotImplementedError

    def fit_predict(self, train: Dataset, test: Dataset, columns, seed=0, threads=None):
        return self.fit(train, columns, seed, threads).predict(test)


@dataclass
class ForestSpec(_Spec):
    config: forest.ForestConfig = field(default_factory=forest.ForestConfig)
    name = "forest"

    def fit(self, train, columns, seed=0, threads=None):
        m = forest.fit(train, replace(self.config, seed=seed), list(columns), threads)
        return Fitted("forest", list(columns), train.schema.fingerprint(), m)


@dataclass
class BoostSpec(_Spec):
    config: boosting.BoostConfig = field(default_factory=boosting.BoostConfig)
    name = "boosting"

    def fit(self, train, columns, seed=0, threads=None):
        m = boosting.fit(train, replace(self.config, seed=seed), list(columns), threads)
        return Fitted("boosting", list(columns), train.schema.fingerprint(), m)


@dataclass
class NetSpec(_Spec):
    hidden: tuple = nn.HIDDEN
    config: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    name = "nn"

    def fit(self, train, columns, seed=0, threads=None):
        enc = Encoder.fit(train, list(columns))
        net = nn.train(enc.transform(train), train.labels, nn.default_architecture(self.hidden),
                       replace(self.config, seed=seed))
        return Fitted("nn", list(columns), train.schema.fingerprint(), net, _encoder_state(enc))


@dataclass
class MnlSpec(_Spec):
    """MNL-LASSO with lambda chosen by k-fold CV on integer-rating MSE.

    Under cross-validation the grid is walked on the evaluation folds
    themselves and the pooled predictions at the selected lambda are
    returned. ``fit`` on a single training set runs its own inner CV.
    """

    n_lambda: int = 10
    ratio: float = 1e-3
    tol: float = 1e-6
    max_iter: int = 2000
    inner_k: int = 5
    name = "mnl"
    selected: tuple | None = field(default=None, repr=False)  # (lambda*, LambdaPath) of the last run

    def _grid(self, ds, columns):
        enc = Encoder.fit(ds, columns)
        return mnl.default_grid(enc.transform(ds), ds.labels, self.n_lambda, self.ratio)

    def _path(self, ds: Dataset, folds: FoldAssignment, columns, grid, threads):
        """Out-of-fold predictions (n_lambda, n); every fold encodes on its own training part."""
        out = np.zeros((len(grid.values), ds.n), dtype=np.int64)

        def one(split):
            _, train, test = split
            tr, te = ds.subset(train), ds.subset(test)
            enc = Encoder.fit(tr, columns)
            Xtr, Xte = enc.transform(tr), enc.transform(te)
            preds, init = [], None
            for lam in grid.values:
                init = mnl.fit(Xtr, tr.labels, lam, self.tol, self.max_iter, init)
                preds.append(init.predict(Xte))
            return test, preds

        for test, preds in pmap(one, [s for s in folds.splits() if len(s[2])], threads):
            for i, p in enumerate(preds):
                out[i, test] = p
        return out

    def pooled_predictions(self, ds, folds, columns, seed=0, threads=None):
        columns = list(columns)
        grid = self._grid(ds, columns)
        preds = self._path(ds, folds, columns, grid, threads)
        lam, path = mnl.select_lambda(None, ds.labels, folds, grid, preds=preds)
        self.selected = (lam, path)
        return preds[int(np.flatnonzero(grid.values == lam)[0])]

    def fit(self, train, columns, seed=0, threads=None):
        columns = list(columns)
        grid = self._grid(train, columns)
        folds = stratified_kfold(train.labels, self.inner_k, seed)
        preds = self._path(train, folds, columns, grid, threads)
        lam, path = mnl.select_lambda(None, train.labels, folds, grid, preds=preds)
        enc = Encoder.fit(train, columns)
        X = enc.transform(train)
        model = None
        for v in grid.values[grid.values >= lam]:
            model = mnl.fit(X, train.labels, v, self.tol, self.max_iter, model)
        self.selected = (lam, path)
        return Fitted("mnl", columns, train.schema.fingerprint(), model, _encoder_state(enc),
                      {"lambda": lam, "cv_scores": path.cv_scores.tolist(),
                       "grid": grid.values.tolist()})


def make_spec(kind: str, **overrides) -> _Spec:
    """Spec with package defaults; ``overrides`` go into the model's config."""
    if kind == "forest":
        return ForestSpec(forest.ForestConfig(**overrides))
    if kind == "boosting":
        return BoostSpec(boosting.BoostConfig(**overrides))
    if kind == "mnl":
        return MnlSpec(**overrides)
    if kind == "nn":
        hidden = overrides.pop("hidden", nn.HIDDEN)
        return NetSpec(tuple(hidden), nn.TrainConfig(**overrides))
    raise ValueError(f"unknown model {kind!r}; expected one of {', '.join(KINDS)}")
