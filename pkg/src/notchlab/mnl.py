"""Multinomial logit with an L1 penalty on the slopes (MNL-LASSO)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .data import CLASSES, N_CLASSES, class_index

REFERENCE_RATING = 9
REF = REFERENCE_RATING - int(CLASSES[0])
ABSENT_COUNT = 1e-6


@dataclass
class MnlModel:
    coef: np.ndarray  # (14, d); reference row is zero
    intercept: np.ndarray  # (14,); reference entry is zero
    lam: float
    converged: bool = True
    n_iter: int = 0
    trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reference_rating: int = REFERENCE_RATING

    def scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return X @ self.coef.T + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return _softmax(self.scores(X))

    def predict(self, X) -> np.ndarray:
        return CLASSES[np.argmax(self.scores(X), axis=1)]


def zero_model(d: int, lam: float = 0.0) -> MnlModel:
    return MnlModel(np.zeros((N_CLASSES, d)), np.zeros(N_CLASSES), lam)


@njit(cache=True, nogil=True)
def _softmax_rows(eta, out):
    n, c = eta.shape
    for i in range(n):
        top = eta[i, 0]
        for j in range(1, c):
            top = max(top, eta[i, j])
        s = 0.0
        for j in range(c):
            out[i, j] = np.exp(eta[i, j] - top)
            s += out[i, j]
        for j in range(c):
            out[i, j] /= s
    return out


@njit(cache=True, nogil=True)
def _residual_rows(eta, y_idx, out):
    """out = softmax(eta) - onehot(y); returns the mean NLL."""
    n, c = eta.shape
    total = 0.0
    for i in range(n):
        top = eta[i, 0]
        for j in range(1, c):
            top = max(top, eta[i, j])
        s = 0.0
        for j in range(c):
            out[i, j] = np.exp(eta[i, j] - top)
            s += out[i, j]
        for j in range(c):
            out[i, j] /= s
        out[i, y_idx[i]] -= 1.0
        total += top + np.log(s) - eta[i, y_idx[i]]
    return total / n


@njit(cache=True, nogil=True)
def _nll_rows(eta, y_idx):
    n, c = eta.shape
    total = 0.0
    for i in range(n):
        top = eta[i, 0]
        for j in range(1, c):
            top = max(top, eta[i, j])
        s = 0.0
        for j in range(c):
            s += np.exp(eta[i, j] - top)
        total += top + np.log(s) - eta[i, y_idx[i]]
    return total / n


def _softmax(eta):
    eta = np.ascontiguousarray(eta, dtype=np.float64)
    return _softmax_rows(eta, np.empty_like(eta))


def _nll(eta, y_idx) -> float:
    return float(_nll_rows(np.ascontiguousarray(eta, dtype=np.float64), np.asarray(y_idx, dtype=np.int64)))


def penalized_loss(model: MnlModel, X, ratings, lam: float) -> float:
    """Mean negative log-likelihood plus lam * sum|beta|; intercepts unpenalized."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    y_idx = class_index(ratings)
    return _nll(model.scores(X), y_idx) + lam * float(np.abs(model.coef).sum())


def smooth_gradient(model: MnlModel, X, ratings):
    """Gradient of the mean NLL w.r.t. (coef, intercept), reference entries zeroed."""
    y_idx = class_index(ratings)
    X = np.asarray(X, dtype=np.float64)
    D = _softmax(model.scores(X))
    D[np.arange(len(X)), y_idx] -= 1.0
    D /= len(X)
    gc, gi = D.T @ X, D.sum(axis=0)
    gc[REF] = 0.0
    gi[REF] = 0.0
    return gc, gi


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def prior_intercepts(y_idx) -> np.ndarray:
    """log(p_c / p_ref). The MLE for a class absent from the data is -inf;
    it gets a count of ABSENT_COUNT instead, which keeps the score finite
    while leaving the other intercepts at their exact prior log-odds."""
    counts = np.bincount(y_idx, minlength=N_CLASSES).astype(np.float64)
    ref = counts[REF] if counts[REF] > 0 else ABSENT_COUNT
    out = np.log(np.where(counts > 0, counts, ABSENT_COUNT) / ref)
    out[REF] = 0.0
    return out


def lambda_max(X, ratings) -> float:
    """Smallest lambda at which all slopes stay zero (intercepts at prior log-odds)."""
    X = np.asarray(X, dtype=np.float64)
    y_idx = class_index(ratings)
    gc, _ = smooth_gradient(MnlModel(np.zeros((N_CLASSES, X.shape[1])), prior_intercepts(y_idx), 0.0),
                            X, CLASSES[y_idx])
    return float(np.abs(gc).max()) if gc.size else 0.0


def fit(X, ratings, lam: float, tol: float = 1e-8, max_iter: int = 5000,
        init: MnlModel | None = None) -> MnlModel:
    """Monotone FISTA with backtracking on mean NLL + lam * ||beta||_1.

    The Lipschitz estimate L doubles until the quadratic upper bound holds,
    capped at ||[1, X]||_2^2 / (2n), a global bound on the softmax
    log-likelihood Hessian. Slopes start at zero and intercepts at
    the prior log-odds unless ``init`` is given. Stops when an accepted step
    lowers the objective by less than ``tol``.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    X = np.asarray(X, dtype=np.float64)
    y_idx = class_index(ratings)
    if len(np.unique(y_idx)) < 2:
        raise ValueError("MNL needs at least two classes in the training data")
    n, d = X.shape
    y_idx = np.asarray(y_idx, dtype=np.int64)
    # global bound on the Hessian of the mean NLL; backtracking starts far below it
    L_max = 0.5 * (np.linalg.norm(np.column_stack([np.ones(n), X]), 2) ** 2) / n
    L = L_max / 64.0

    if init is None:
        W = np.zeros((N_CLASSES, d))
        b = prior_intercepts(y_idx)
    else:
        W, b = init.coef.copy(), init.intercept.copy()

    # linear predictors travel with the iterates so a step needs one product
    # with X and one with X^T
    eta = X @ W.T + b
    F = _nll(eta, y_idx) + lam * np.abs(W).sum()
    trace = [F]
    zW, zb, zeta = W.copy(), b.copy(), eta.copy()  # extrapolated point
    D = np.empty_like(eta)
    t = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        fz = _residual_rows(np.ascontiguousarray(zeta), y_idx, D)
        gW, gb = D.T @ X / n, D.mean(axis=0)
        gW[REF] = 0.0
        gb[REF] = 0.0
        while True:
            uW = soft_threshold(zW - gW / L, lam / L)
            ub = zb - gb / L
            uW[REF] = 0.0
            ub[REF] = 0.0
            ueta = X @ uW.T + ub
            fu = _nll(ueta, y_idx)
            dW, db = uW - zW, ub - zb
            quad = fz + np.sum(gW * dW) + np.sum(gb * db) + 0.5 * L * (np.sum(dW * dW) + np.sum(db * db))
            if fu <= quad + 1e-12 * abs(fz) or L >= L_max:
                break
            L = min(2.0 * L, L_max)
        Fu = fu + lam * np.abs(uW).sum()
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        accepted = Fu <= F
        if accepted:
            a = (t - 1.0) / t_next
            zW, zb, zeta = uW + a * (uW - W), ub + a * (ub - b), ueta + a * (ueta - eta)
            W, b, eta, F_old, F = uW, ub, ueta, F, Fu
        else:
            # keep the incumbent; momentum pulls toward the rejected point
            a = t / t_next
            zW, zb, zeta = W + a * (uW - W), b + a * (ub - b), eta + a * (ueta - eta)
            F_old = F
        t = t_next
        trace.append(F)
        if accepted and F_old - F < tol:
            converged = True
            break
    return MnlModel(W, b, float(lam), converged, it, np.array(trace))


@dataclass
class LambdaPath:
    values: np.ndarray
    cv_scores: np.ndarray | None = None
    fold_scores: np.ndarray | None = None  # (n_lambda, k)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.size == 0:
            raise ValueError("lambda grid must be nonempty")
        if np.any(v < 0) or np.any(np.diff(v) >= 0):
            raise ValueError("lambda grid must be nonnegative and strictly descending")
        self.values = v


def default_grid(X, ratings, n: int = 10, ratio: float = 1e-3) -> LambdaPath:
    top = lambda_max(X, ratings)
    if top <= 0:
        return LambdaPath(np.array([0.0]))
    return LambdaPath(np.geomspace(top, top * ratio, n))


def cv_path_predictions(X, ratings, folds, grid: LambdaPath, tol=1e-6, max_iter=2000):
    """Out-of-fold argmax ratings for every lambda: array (n_lambda, n).

    Each fold walks the grid from the largest lambda with warm starts.
    """
    X = np.asarray(X, dtype=np.float64)
    ratings = np.asarray(ratings)
    out = np.zeros((len(grid.values), len(ratings)), dtype=np.int64)
    for _, train, test in folds.splits():
        init = None
        for i, lam in enumerate(grid.values):
            model = fit(X[train], ratings[train], lam, tol, max_iter, init)
            out[i, test] = model.predict(X[test])
            init = model
    return out


def select_lambda(X, ratings, folds, grid: LambdaPath, tol=1e-6, max_iter=2000, preds=None):
    """lambda minimizing the fold-averaged MSE of integer ratings; ties go to the larger lambda."""
    ratings = np.asarray(ratings)
    if preds is None:
        preds = cv_path_predictions(X, ratings, folds, grid, tol, max_iter)
    fold_scores = np.zeros((len(grid.values), folds.k))
    for f in range(folds.k):
        idx = folds.test_index(f)
        fold_scores[:, f] = np.mean((preds[:, idx] - ratings[idx]) ** 2, axis=1)
    cv = fold_scores.mean(axis=1)
    best = int(np.flatnonzero(cv == cv.min())[0])  # grid descends, first hit is the largest
    path = LambdaPath(grid.values, cv, fold_scores)
    return float(grid.values[best]), path
