"""Post-hoc analyses: importance ranking, group increments, error heterogeneity
by manager or industry, and per-year evaluation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .data import Dataset, FeatureKind, Schema, grouped_kfold, stratified_kfold
from .evaluate import PANELS, EvalReport, cross_validate, majority_stub, no_information_rate

SIG_LEVELS = (0.01, 0.05, 0.10)


# ---------------------------------------------------------------- importance

@dataclass
class ImportanceReport:
    entries: list  # (name, importance, kind) sorted by importance, then name

    @property
    def names(self) -> list[str]:
        return [e[0] for e in self.entries]

    def rank(self, name: str) -> int:
        """1-based rank of ``name``."""
        return self.names.index(name) + 1

    def to_csv(self, panel: str = "") -> str:
        lines = ["panel,rank,column,kind,importance"]
        for i, (name, value, kind) in enumerate(self.entries, 1):
            lines.append(f"{panel},{i},{name},{kind.value},{value:.10g}")
        return "\n".join(lines) + "\n"


def importance_report(model, schema: Schema) -> ImportanceReport:
    """Forest importances joined with column kinds, descending; ties by name."""
    vals = np.asarray(model.importance, dtype=np.float64)
    entries = [(c, float(v), schema.column(c).kind) for c, v in zip(model.columns, vals)]
    entries.sort(key=lambda e: (-e[1], e[0]))
    return ImportanceReport(entries)


# ----------------------------------------------------------- group increment

GROUPS = {
    "Quantitative": (FeatureKind.QUANTITATIVE,),
    "Qualitative/Categorical": (FeatureKind.QUALITATIVE, FeatureKind.CATEGORICAL),
}


@dataclass
class GroupIncrement:
    group: str
    panel: str
    base_accuracy: float
    full_accuracy: float

    @property
    def accuracy_delta(self) -> float:
        return self.full_accuracy - self.base_accuracy


def group_columns(schema: Schema, group: str, include_scorecard: bool = True) -> list[str]:
    kinds = GROUPS[group]
    return [c for c in schema.predictors(include_scorecard) if schema.column(c).kind in kinds]


def group_increment(ds: Dataset, spec, folds, panels=(True, False), seed: int = 0,
                    threads=None, groups: Sequence[str] = tuple(GROUPS)) -> list[GroupIncrement]:
    """Accuracy gained by adding each group to the predictors that lack it.

    The full model uses every predictor of the panel; each base model drops
    one group. Both are cross-validated on the same folds. An empty
    predictor set falls back to the prior-only (majority) model.
    """
    def acc(inc, cols):
        model = spec if cols else majority_stub
        return cross_validate(ds, model, folds, inc, seed, threads, cols).accuracy

    out = []
    for inc in panels:
        full_cols = ds.schema.predictors(include_scorecard=inc)
        full = acc(inc, full_cols)
        for g in groups:
            drop = set(group_columns(ds.schema, g, inc))
            base = acc(inc, [c for c in full_cols if c not in drop])
            out.append(GroupIncrement(g, PANELS[inc], base, full))
    return out


def increments_csv(rows: Sequence[GroupIncrement]) -> str:
    lines = ["group,panel,base_accuracy,full_accuracy,accuracy_delta"]
    for r in rows:
        lines.append(f"{r.group},{r.panel},{r.base_accuracy:.6f},{r.full_accuracy:.6f},"
                     f"{r.accuracy_delta:.6f}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------- heterogeneity

@dataclass
class OlsResult:
    names: list
    n_obs: np.ndarray
    coef: np.ndarray
    std_error: np.ndarray
    t_stat: np.ndarray
    p_value: np.ndarray
    mean_abs_error: np.ndarray  # per group, raw (not demeaned)
    overall_mae: float
    df: int
    flagged: np.ndarray  # coefficient whose p-value is undefined

    @property
    def n_groups(self) -> int:
        return len(self.names)

    @property
    def ratio(self) -> np.ndarray:
        """Group mean absolute error over the overall mean absolute error."""
        if self.overall_mae == 0:
            return np.full(self.n_groups, np.nan)
        return self.mean_abs_error / self.overall_mae

    def significant(self, level: float = 0.05, sign: int = 0) -> np.ndarray:
        """Mask of groups with p < level; ``sign`` = +1/-1 keeps one direction."""
        ok = ~self.flagged & (self.p_value < level)
        if sign > 0:
            ok &= self.coef > 0
        elif sign < 0:
            ok &= self.coef < 0
        return ok

    def summary(self) -> dict:
        out = {"n_groups": self.n_groups, "n_obs": int(self.n_obs.sum()), "df": self.df}
        for lv in SIG_LEVELS:
            tag = f"{int(round(lv * 100))}pct"
            pos, neg = self.significant(lv, +1), self.significant(lv, -1)
            out[f"significant_{tag}"] = int(self.significant(lv).sum())
            out[f"positive_{tag}"] = int(pos.sum())
            out[f"negative_{tag}"] = int(neg.sum())
            out[f"mean_positive_coef_{tag}"] = float(self.coef[pos].mean()) if pos.any() else float("nan")
            out[f"mean_negative_coef_{tag}"] = float(self.coef[neg].mean()) if neg.any() else float("nan")
            r = self.ratio
            out[f"mean_positive_ratio_{tag}"] = float(r[pos].mean()) if pos.any() else float("nan")
            out[f"mean_negative_ratio_{tag}"] = float(r[neg].mean()) if neg.any() else float("nan")
        return out

    def to_csv(self) -> str:
        lines = ["group,n,coef,std_error,t_stat,p_value,mean_abs_error,ratio,flag"]
        r = self.ratio
        for i, name in enumerate(self.names):
            lines.append(f"{name},{int(self.n_obs[i])},{self.coef[i]:.10g},{self.std_error[i]:.10g},"
                         f"{self.t_stat[i]:.10g},{self.p_value[i]:.10g},{self.mean_abs_error[i]:.10g},"
                         f"{r[i]:.10g},{'undefined_p' if self.flagged[i] else ''}")
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        s = self.summary()
        return "statistic,value\n" + "".join(f"{k},{v:.10g}\n" if isinstance(v, float) else f"{k},{v}\n"
                                             for k, v in s.items())


def heterogeneity(abs_error, groups, labels: Sequence[str] | None = None) -> OlsResult:
    """OLS of the globally demeaned absolute error on a full set of group
    dummies without intercept.

    ``groups`` holds a group id per record (any hashable values); ``labels``
    fixes the output order and may include groups with no records, which
    are dropped. Coefficients are group means of the demeaned error, with
    classical standard errors and two-sided t p-values on n - G df.
    """
    e = np.asarray(abs_error, dtype=np.float64)
    g = np.asarray(groups)
    if e.shape != g.shape:
        raise ValueError("errors and group ids differ in length")
    names = sorted(set(g.tolist())) if labels is None else [l for l in labels if np.any(g == l)]
    G, n = len(names), len(e)
    if G < 2:
        raise ValueError("heterogeneity needs at least two groups")
    if n <= G:
        raise ValueError("heterogeneity needs more records than groups")
    lookup = {name: i for i, name in enumerate(names)}
    try:
        code = np.array([lookup[v] for v in g.tolist()])
    except KeyError as exc:
        raise ValueError(f"record group {exc.args[0]!r} is missing from labels") from None
    d = e - e.mean()
    cnt = np.bincount(code, minlength=G).astype(np.float64)
    coef = np.bincount(code, weights=d, minlength=G) / cnt
    resid = d - coef[code]
    df = n - G
    s2 = float(resid @ resid) / df
    se = np.sqrt(s2 / cnt)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, np.nan)
    flagged = ~(se > 0)
    p = np.where(flagged, np.nan, 2.0 * stats.t.sf(np.abs(np.nan_to_num(t)), df))
    mae = np.bincount(code, weights=e, minlength=G) / cnt
    return OlsResult(list(names), cnt.astype(np.int64), coef, se, t, p, mae, float(e.mean()), df, flagged)


def ols_normal_equations(y, groups, names):
    """Reference: dummy-matrix OLS solved through the normal equations."""
    y = np.asarray(y, dtype=np.float64)
    y = y - y.mean()
    D = np.column_stack([(np.asarray(groups) == nm).astype(np.float64) for nm in names])
    beta = np.linalg.solve(D.T @ D, D.T @ y)
    r = y - D @ beta
    s2 = (r @ r) / (len(y) - len(names))
    se = np.sqrt(np.diag(s2 * np.linalg.inv(D.T @ D)))
    return beta, se


# ------------------------------------------------------------------ per year

@dataclass
class YearRow:
    year: int
    panel: str
    report: EvalReport


def per_year_eval(ds: Dataset, spec, k: int = 5, seed: int = 0, panels=(True,), threads=None,
                  group_by_customer: bool = False) -> list[YearRow]:
    """Independent k-fold CV inside every year; years with fewer than k
    records are skipped with a warning."""
    rows = []
    for y in np.unique(ds.year):
        sub = ds.subset(np.flatnonzero(ds.year == y))
        if sub.n < k:
            warnings.warn(f"year {y}: only {sub.n} records, fewer than k={k}; skipped")
            continue
        folds = grouped_kfold(sub, k, seed) if group_by_customer else stratified_kfold(sub, k, seed)
        for inc in panels:
            rows.append(YearRow(int(y), PANELS[inc], cross_validate(sub, spec, folds, inc, seed, threads)))
    return rows


def per_year_csv(rows: Sequence[YearRow]) -> str:
    lines = ["year,panel,n,accuracy,acc_lower,acc_upper,acc_pvalue,rmse,nir"]
    for r in rows:
        e = r.report
        lines.append(f"{r.year},{r.panel},{e.n},{e.accuracy:.6f},{e.accuracy_lower:.6f},"
                     f"{e.accuracy_upper:.6f},{e.accuracy_pvalue:.6g},{e.rmse:.6f},{e.nir:.6f}")
    return "\n".join(lines) + "\n"


def prior_accuracy(ds: Dataset) -> float:
    """Accuracy of the prior-only model, which always predicts the majority class."""
    return no_information_rate(ds.labels)
