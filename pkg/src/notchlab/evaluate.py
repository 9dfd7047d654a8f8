"""Accuracy, RMSE, exact binomial inference, confusion matrices and k-fold CV."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import betainc, gammaln, logsumexp

from .data import CLASSES, N_CLASSES, Dataset, FoldAssignment

PANELS = {True: "with_scorecard", False: "without_scorecard"}
CSV_HEADER = "model,panel,rmse,accuracy,acc_lower,acc_upper,acc_pvalue"


def _pair(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} predictions vs {truth.shape[0]} labels")
    if pred.size == 0:
        raise ValueError("empty prediction vector")
    return pred, truth


def accuracy(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(pred == truth))


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred.astype(np.float64) - truth) ** 2)))


def no_information_rate(truth) -> float:
    truth = np.asarray(truth)
    if truth.size == 0:
        raise ValueError("empty label vector")
    _, counts = np.unique(truth, return_counts=True)
    return float(counts.max() / truth.size)


def _invert_betainc(a, b, target, tol=1e-10):
    """p with I_p(a, b) = target, by bisection (I is increasing in p)."""
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if betainc(a, b, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def binomial_ci(successes: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Exact Clopper-Pearson interval."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in [0, n]")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    alpha = 1.0 - level
    lower = 0.0 if successes == 0 else _invert_betainc(successes, n - successes + 1, alpha / 2)
    upper = 1.0 if successes == n else _invert_betainc(successes + 1, n - successes, 1 - alpha / 2)
    return lower, upper


def nir_pvalue(successes: int, n: int, nir: float) -> float:
    """One-sided exact binomial tail P(X >= successes | n, nir), summed in log space."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in [0, n]")
    if not 0 <= nir <= 1:
        raise ValueError("nir must lie in [0, 1]")
    if successes == 0 or nir == 1.0:
        return 1.0
    if nir == 0.0:
        return 0.0
    k = np.arange(successes, n + 1)
    logc = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    terms = logc + k * math.log(nir) + (n - k) * math.log1p(-nir)
    return float(min(1.0, math.exp(logsumexp(terms))))


@dataclass
class ConfusionMatrix:
    """counts[p, t]: rows are model (predicted) ratings, columns manager (true) ratings."""

    counts: np.ndarray
    labels: np.ndarray = field(default_factory=lambda: CLASSES.copy())

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def render(self, row_title="Model", col_title="Manager") -> str:
        labs = [str(v) for v in self.labels] + ["Subtotal"]
        width = max(8, max(len(str(self.total)), 1) + 1)
        out = io.StringIO()
        out.write(f"{row_title} \\ {col_title}".ljust(width + 2))
        out.write("".join(s.rjust(width) for s in labs) + "\n")
        for i, lab in enumerate(self.labels):
            row = list(self.counts[i]) + [self.row_totals[i]]
            out.write(str(lab).ljust(width + 2) + "".join(str(int(v)).rjust(width) for v in row) + "\n")
        row = list(self.col_totals) + [self.total]
        out.write("Subtotal".ljust(width + 2) + "".join(str(int(v)).rjust(width) for v in row) + "\n")
        return out.getvalue()

    def to_csv(self) -> str:
        lines = ["model_rating," + ",".join(str(v) for v in self.labels) + ",subtotal"]
        for i, lab in enumerate(self.labels):
            lines.append(f"{lab}," + ",".join(str(int(v)) for v in self.counts[i]) + f",{int(self.row_totals[i])}")
        lines.append("subtotal," + ",".join(str(int(v)) for v in self.col_totals) + f",{self.total}")
        return "\n".join(lines) + "\n"


def confusion(pred, truth) -> ConfusionMatrix:
    pred, truth = _pair(pred, truth)
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (pred - CLASSES[0], truth - CLASSES[0]), 1)
    return ConfusionMatrix(counts)


@dataclass
class EvalReport:
    model: str
    panel: str
    rmse: float
    accuracy: float
    accuracy_lower: float
    accuracy_upper: float
    accuracy_pvalue: float
    nir: float
    confusion: ConfusionMatrix
    predictions: np.ndarray
    truth: np.ndarray
    fold_accuracy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.truth)

    @property
    def per_record_abs_error(self) -> np.ndarray:
        return np.abs(self.predictions - self.truth)

    def csv_row(self) -> str:
        return (f"{self.model},{self.panel},{self.rmse:.6f},{self.accuracy:.6f},"
                f"{self.accuracy_lower:.6f},{self.accuracy_upper:.6f},{self.accuracy_pvalue:.6g}")


def evaluate(pred, truth, model: str = "", panel: str = "", level: float = 0.95,
             fold_accuracy=None) -> EvalReport:
    pred, truth = _pair(pred, truth)
    n = len(truth)
    hits = int(np.sum(pred == truth))
    nir = no_information_rate(truth)
    lo, hi = binomial_ci(hits, n, level)
    return EvalReport(model, panel, rmse(pred, truth), hits / n, lo, hi, nir_pvalue(hits, n, nir), nir,
                      confusion(pred, truth), pred.copy(), truth.copy(),
                      np.zeros(0) if fold_accuracy is None else np.asarray(fold_accuracy))


def format_pvalue(p: float) -> str:
    return "0.000" if p < 1e-12 else f"{p:.3f}"


def render_csv(reports: Sequence[EvalReport]) -> str:
    return "\n".join([CSV_HEADER] + [r.csv_row() for r in reports]) + "\n"


def render_table(reports: Sequence[EvalReport]) -> str:
    """Aligned text table, one block per panel, three decimals."""
    cols = ["RMSE", "Accuracy", "AccuracyLower", "AccuracyUpper", "AccuracyPValue"]
    name_w = max([10] + [len(r.model) + 2 for r in reports])
    out = io.StringIO()
    panels = list(dict.fromkeys(r.panel for r in reports))
    for panel in panels:
        out.write(f"{'':{name_w}}{panel}\n")
        out.write(f"{'':{name_w}}" + "".join(c.rjust(16) for c in cols) + "\n")
        for r in (r for r in reports if r.panel == panel):
            vals = [f"{r.rmse:.3f}", f"{r.accuracy:.3f}", f"{r.accuracy_lower:.3f}",
                    f"{r.accuracy_upper:.3f}", format_pvalue(r.accuracy_pvalue)]
            out.write(r.model.ljust(name_w) + "".join(v.rjust(16) for v in vals) + "\n")
        out.write("\n")
    return out.getvalue()


# --------------------------------------------------------------- CV driver

def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(fold,)).generate_state(1)[0])


class FoldError(RuntimeError):
    pass


def cross_validate(ds: Dataset, spec, folds: FoldAssignment, include_scorecard: bool = True,
                   seed: int = 0, threads: int | None = None, columns: Sequence[str] | None = None,
                   name: str | None = None) -> EvalReport:
    """Pooled out-of-fold evaluation.

    ``spec`` is either an object with ``fit_predict(train, test, columns, seed, threads)``
    (and optionally ``pooled_predictions(ds, folds, columns, seed, threads)`` for
    models that tune on the same folds) or a plain callable with the
    ``fit_predict`` signature.
    """
    if len(folds.fold_of) != ds.n:
        raise ValueError("fold assignment does not match the dataset size")
    if columns is None:
        columns = ds.schema.predictors(include_scorecard=include_scorecard)
    columns = list(columns)
    label = name or getattr(spec, "name", getattr(spec, "__name__", "model"))
    truth = ds.labels
    if hasattr(spec, "pooled_predictions"):
        pred = np.asarray(spec.pooled_predictions(ds, folds, columns, seed, threads))
    else:
        fp = spec.fit_predict if hasattr(spec, "fit_predict") else spec
        pred = np.zeros(ds.n, dtype=np.int64)
        for f, train, test in folds.splits():
            if len(test) == 0:
                continue
            try:
                pred[test] = fp(ds.subset(train), ds.subset(test), columns, fold_seed(seed, f), threads)
            except Exception as exc:  # noqa: BLE001 - re-raised with the fold id
                raise FoldError(f"fold {f}: {exc}") from exc
    fold_acc = [accuracy(pred[t], truth[t]) for _, _, t in folds.splits() if len(t)]
    return evaluate(pred, truth, label, PANELS[include_scorecard], fold_accuracy=fold_acc)


def majority_stub(train: Dataset, test: Dataset, columns, seed, threads=None):
    """Predicts the training majority class (lowest on ties)."""
    counts = np.bincount(train.labels - CLASSES[0], minlength=N_CLASSES)
    return np.full(test.n, CLASSES[np.argmax(counts)])


def oracle_stub(train: Dataset, test: Dataset, columns, seed, threads=None):
    """Returns the true labels; only useful for testing the harness."""
    return test.labels.copy()


ModelFn = Callable[[Dataset, Dataset, Sequence[str], int, int], np.ndarray]
