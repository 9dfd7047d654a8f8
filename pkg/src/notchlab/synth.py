"""Synthetic loan portfolios calibrated to published rating tables.

The generator imitates notching. A scorecard rating is produced from a
latent risk score built on a few financial ratios. A manager then moves it
by a notch driven by qualitative grades, industry, leverage, a couple of
threshold rules, the manager's own habit and year-dependent noise. Within
each scorecard class the notch score is mapped to final ratings so that the
joint (scorecard, manager) table follows the target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (CLASSES, N_CLASSES, SCORECARD, TARGET, Dataset, FeatureKind, Schema,
                   default_schema)

# joint counts from the published portfolio: rows are manager ratings 2..15,
# columns scorecard ratings 2..15
JOINT_COUNTS = np.array([
    [14, 11, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    [0, 37, 12, 10, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    [31, 53, 163, 1, 60, 3, 17, 2, 36, 0, 1, 0, 0, 0],
    [0, 13, 102, 131, 8, 12, 0, 3, 3, 0, 0, 9, 29, 4],
    [0, 30, 100, 81, 461, 31, 79, 87, 4, 20, 41, 35, 2, 63],
    [0, 0, 30, 128, 72, 1720, 36, 604, 69, 56, 15, 15, 36, 11],
    [0, 0, 0, 36, 60, 399, 991, 700, 125, 92, 45, 12, 53, 74],
    [0, 0, 0, 0, 21, 245, 295, 7671, 294, 171, 69, 20, 67, 79],
    [0, 0, 0, 0, 1, 17, 64, 1573, 2446, 233, 162, 155, 127, 242],
    [0, 0, 0, 0, 0, 3, 44, 1560, 741, 2535, 160, 192, 121, 227],
    [0, 0, 0, 0, 0, 81, 16, 691, 753, 1166, 2037, 440, 348, 400],
    [0, 0, 0, 0, 0, 4, 0, 88, 54, 239, 311, 879, 35, 129],
    [0, 0, 0, 0, 0, 0, 0, 1, 47, 64, 104, 83, 484, 148],
    [0, 0, 0, 0, 0, 0, 0, 169, 48, 169, 71, 354, 364, 957],
], dtype=np.int64)
SCORECARD_COUNTS = tuple(int(v) for v in JOINT_COUNTS.sum(axis=0))
MANAGER_COUNTS = tuple(int(v) for v in JOINT_COUNTS.sum(axis=1))

INFORMATIVE = ("net_profit", "total_assets", "net_sales", "total_debt_to_cap",
               "end_cash_equv_by_tot_liab")
EVENTS_PER_CUSTOMER = 37449 / 4414


class CalibrationError(ValueError):
    pass


def default_targets() -> tuple[np.ndarray, np.ndarray]:
    """(scorecard, manager) rating marginals over ratings 2..15."""
    s = np.array(SCORECARD_COUNTS, dtype=np.float64)
    m = np.array(MANAGER_COUNTS, dtype=np.float64)
    return s / s.sum(), m / m.sum()


def joint_target(scorecard, manager, tol: float = 1e-12, max_iter: int = 10000) -> np.ndarray:
    """Published joint table rescaled to the given marginals by iterative
    proportional fitting. Rows are manager ratings, columns scorecard ratings."""
    s = np.asarray(scorecard, dtype=np.float64)
    m = np.asarray(manager, dtype=np.float64)
    P = JOINT_COUNTS / JOINT_COUNTS.sum()
    for name, target, support in (("scorecard", s, P.sum(axis=0)), ("manager", m, P.sum(axis=1))):
        bad = (target > 0) & (support == 0)
        if bad.any():
            raise CalibrationError(f"{name} class {CLASSES[bad][0]} has target mass but no support")
    for _ in range(max_iter):
        rs = P.sum(axis=1)
        P = P * np.divide(m, rs, out=np.zeros_like(m), where=rs > 0)[:, None]
        cs = P.sum(axis=0)
        P = P * np.divide(s, cs, out=np.zeros_like(s), where=cs > 0)[None, :]
        if np.abs(P.sum(axis=1) - m).sum() < tol:
            return P
    if np.abs(P.sum(axis=1) - m).sum() > 1e-6:
        raise CalibrationError("target marginals cannot be reached from the published joint support")
    return P


@dataclass(frozen=True)
class GeneratorConfig:
    n: int = 37449
    seed: int = 0
    n_managers: int = 328
    n_industries: int = 24
    years: tuple = (2010, 2018)
    manager_effect_sd: float = 0.02
    manager_effect_mean: float = 0.05  # managers revise toward riskier grades more often
    notch_noise_sd: float = 0.08  # first-year sd, shrinking by year_noise_decay per year
    year_noise_decay: float = 0.8
    gamma: float = 1.0  # strength of the covariate-driven part of the notch
    industry_effect_sd: float = 0.25
    latent_noise_sd: float = 0.15
    informative_correlation: float = 0.7
    n_planted_managers: int = 5
    planted_effect: float = 3.0
    calibrate: bool = True  # map notch scores onto the target joint table
    target_marginals: tuple | None = None  # (scorecard, manager); published subtotals when None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.n_managers < 1 or self.n_industries < 1:
            raise ValueError("n_managers and n_industries must be >= 1")
        if self.years[0] > self.years[1]:
            raise ValueError("years must be an increasing (first, last) pair")
        if not 0 <= self.n_planted_managers <= self.n_managers:
            raise ValueError("n_planted_managers must lie in [0, n_managers]")
        if not 0 <= self.informative_correlation < 1:
            raise ValueError("informative_correlation must lie in [0, 1)")
        for name in ("manager_effect_sd", "notch_noise_sd", "industry_effect_sd", "latent_noise_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for t in self.targets():
            if t.shape != (N_CLASSES,) or np.any(t < 0) or abs(t.sum() - 1) > 1e-9:
                raise ValueError("each target marginal must be 14 nonnegative entries summing to 1")

    def targets(self) -> tuple[np.ndarray, np.ndarray]:
        if self.target_marginals is None:
            return default_targets()
        s, m = self.target_marginals
        return np.asarray(s, dtype=np.float64), np.asarray(m, dtype=np.float64)


def degenerate_config(**kw) -> GeneratorConfig:
    """No notching at all: every final rating equals the scorecard rating."""
    base = dict(manager_effect_sd=0.0, manager_effect_mean=0.0, notch_noise_sd=0.0, gamma=0.0,
                n_planted_managers=0)
    base.update(kw)
    return GeneratorConfig(**base)


@dataclass
class GroundTruth:
    latent: np.ndarray
    notch: np.ndarray  # continuous notch score before the rating map
    manager_effects: dict
    industry_effects: dict
    informative: tuple
    planted_managers: tuple
    calibration: tuple = (0.0, 0.0)
    extras: dict = field(default_factory=dict)


def marginal(ratings) -> np.ndarray:
    r = np.asarray(ratings)
    if np.any((r < CLASSES[0]) | (r > CLASSES[-1])):
        raise ValueError("ratings outside 2..15 have no slot in the marginal")
    return np.bincount(r - CLASSES[0], minlength=N_CLASSES) / max(len(r), 1)


def calibrate(ds: Dataset, targets=None) -> tuple[float, float]:
    """L1 distances of the empirical scorecard and manager marginals to ``targets``."""
    if ds.n == 0:
        raise ValueError("empty dataset")
    s_t, m_t = default_targets() if targets is None else targets
    return (float(np.abs(marginal(ds[SCORECARD]) - s_t).sum()),
            float(np.abs(marginal(ds[TARGET]) - m_t).sum()))


# ----------------------------------------------------------------- covariates

# fixed level probabilities, ordered as the schema levels
_CAT_P = {
    "primary_exposure_type": (0.45, 0.35, 0.12, 0.08),
    "pct_rev_3_large_cus": (0.5, 0.3, 0.2),
    "public_private_cd": (0.15, 0.85),
    "snc_indicator": (0.1, 0.9),
    "not_for_profit_ind": (0.07, 0.93),
    "revolving_ind": (0.55, 0.45),
    "lgd_secured_or_unsecured": (0.3, 0.25, 0.1, 0.1, 0.1, 0.15),
}
_QUAL_P = {3: (0.3, 0.5, 0.2), 4: (0.25, 0.4, 0.25, 0.1), 6: (0.1, 0.25, 0.3, 0.2, 0.1, 0.05)}
CUSTOMER_LEVEL = ("industry", "public_private_cd", "not_for_profit_ind")


def _draw_covariates(schema: Schema, cfg: GeneratorConfig, rng) -> tuple[dict, np.ndarray]:
    n = cfg.n
    n_cust = max(1, int(round(n / EVENTS_PER_CUSTOMER)))
    cust = rng.integers(0, n_cust, n)
    cols = {}
    # industry mix, mildly skewed toward the first sectors
    L = len(schema.column("industry").levels)
    w = 1.0 / (1.0 + 0.15 * np.arange(L))
    cols["industry"] = rng.choice(L, n_cust, p=w / w.sum())[cust]
    for name, p in _CAT_P.items():
        if name in CUSTOMER_LEVEL:
            cols[name] = rng.choice(len(p), n_cust, p=p)[cust]
        else:
            cols[name] = rng.choice(len(p), n, p=p)
    for c in schema.columns:
        if c.kind is FeatureKind.QUALITATIVE:
            cols[c.name] = rng.choice(len(c.levels), n, p=_QUAL_P[len(c.levels)])

    # industry location shifts sit on the uninformative ratios, so industry
    # says nothing about the latent score
    shift = rng.normal(0.0, 0.4, L)[cols["industry"]]
    # the informative ratios share a credit-quality factor (good = large)
    rho = cfg.informative_correlation
    quality = rng.standard_normal(n)
    fac = lambda: rho * quality + np.sqrt(1.0 - rho * rho) * rng.standard_normal(n)
    cols["net_sales"] = np.round(np.exp(16.0 + 1.2 * fac()), 2)
    cols["net_profit_margin"] = np.round(rng.normal(0.05, 0.08, n) + 0.05 * shift, 6)
    cols["cashoprofit_to_sales"] = np.round(rng.normal(0.1, 0.1, n), 6)
    cols["total_assets"] = np.round(np.exp(16.5 + 1.1 * fac()), 2)
    cols["total_laib_by_tang_net_worth"] = np.round(np.exp(rng.normal(0.5, 0.6, n) + shift), 6)
    cols["acf"] = np.round(np.exp(rng.normal(13.0, 1.3, n) + shift), 2)
    cols["total_debt_to_cap"] = np.round(1.0 / (1.0 + np.exp(0.4 + 0.9 * fac())), 6)
    cols["total_debt_to_acf"] = np.round(np.exp(rng.normal(1.2, 0.8, n) - shift), 6)
    cols["end_cash_equv_by_tot_liab"] = np.round(np.exp(-2.0 + 0.9 * fac()), 6)
    cols["net_profit"] = np.round(500.0 * np.sinh(0.3 + 1.5 * fac()), 2)
    return cols, cust


def _z(x):
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)


def _leverage(cols):
    d = cols["total_debt_to_cap"]
    return _z(np.log(d / (1.0 - d)))


def _informative_z(cols):
    return (_z(np.log(cols["net_sales"])), _z(np.log(cols["total_assets"])),
            _z(np.arcsinh(cols["net_profit"] / 500.0)), _leverage(cols),
            _z(np.log(cols["end_cash_equv_by_tot_liab"])))


def latent_score(cols: dict, noise_sd: float, rng) -> np.ndarray:
    """Riskiness, larger is worse: linear in the log-scale informative ratios,
    plus a leverage-by-liquidity interaction and two threshold interactions."""
    size, assets, profit, lev, cash = _informative_z(cols)
    s = -1.1 * size - 0.9 * assets - 1.0 * profit + 1.0 * lev - 0.9 * cash
    s += -LATENT_INTERACTION * lev * cash
    s += 2.0 * ((lev > 0.5) & (cash < 0.0)) - 1.5 * ((profit > 0.5) & (assets > 0.5))
    return s + noise_sd * rng.standard_normal(len(s))


def financial_quality(cols: dict) -> np.ndarray:
    """Financial flags the scorecard under-weights; managers notch on them."""
    size, assets, profit, lev, cash = _informative_z(cols)
    return (FIN_W[0] * (size > 1.0) + FIN_W[1] * (assets > 1.0) + FIN_W[2] * (profit < -0.8)
            + FIN_W[3] * (lev > 0.8) + FIN_W[4] * (cash > 0.8))


def quantile_bins(score, probs) -> np.ndarray:
    """Ratings 2..15 with shares following ``probs``: the k-th lowest score gets
    the class covering rank k in the cumulative target."""
    n = len(score)
    out = np.empty(n, dtype=np.int64)
    out[np.argsort(score, kind="stable")] = np.repeat(CLASSES, apportion(n, probs))
    return out


def apportion(n: int, probs) -> np.ndarray:
    """Integer counts summing to n, largest remainders first (lowest class on ties)."""
    p = np.asarray(probs, dtype=np.float64)
    p = p / p.sum()
    raw = n * p
    counts = np.floor(raw).astype(np.int64)
    short = n - counts.sum()
    order = np.lexsort((np.arange(len(p)), -(raw - counts)))
    counts[order[:short]] += 1
    return counts


NOTCH_FIN = 1.0
LATENT_INTERACTION = 2.0
FIN_W = (-0.6, -0.6, 0.6, 0.7, -0.6)


def _level(cols, schema, name, *codes):
    return np.isin(cols[name], [schema.column(name).levels.index(c) for c in codes])


def covariate_notch(cols: dict, schema: Schema) -> np.ndarray:
    """Notch pressure from qualitative grades, leverage and threshold rules
    (industry effects are added separately)."""
    lev_raw = cols["total_debt_to_cap"]
    cash = cols["end_cash_equv_by_tot_liab"]
    weak_mgmt = _level(cols, schema, "management_quality", "D", "E", "F")
    bright = _level(cols, schema, "market_outlook_of_borrower", "A")
    fragile = _level(cols, schema, "strength_sor_prevent_default", "C")
    c = 1.0 * weak_mgmt - 0.8 * bright + 0.5 * fragile + NOTCH_FIN * financial_quality(cols)
    # rules a model that is linear in the inputs cannot express
    c += 0.8 * ((lev_raw > np.quantile(lev_raw, 0.75)) & weak_mgmt)
    c -= 0.6 * ((cash > np.quantile(cash, 0.8)) & bright)
    return c


def map_to_joint(prelim, score, joint) -> np.ndarray:
    """Within each scorecard class, rank records by notch score and hand out
    final ratings in increasing order with counts from the joint column."""
    final = prelim.copy()
    for j, r in enumerate(CLASSES):
        idx = np.flatnonzero(prelim == r)
        col = joint[:, j]
        if len(idx) == 0 or col.sum() == 0:
            continue
        order = idx[np.argsort(score[idx], kind="stable")]
        final[order] = np.repeat(CLASSES, apportion(len(idx), col))
    return final


def generate(cfg: GeneratorConfig = GeneratorConfig(), schema: Schema | None = None):
    """Draw a portfolio; returns (Dataset, GroundTruth). Deterministic in ``cfg.seed``."""
    schema = default_schema(cfg.n_industries) if schema is None else schema
    s_target, m_target = cfg.targets()
    joint = joint_target(s_target, m_target) if cfg.calibrate else None
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n

    cols, cust = _draw_covariates(schema, cfg, rng)
    latent = latent_score(cols, cfg.latent_noise_sd, rng)
    prelim = quantile_bins(latent, s_target)

    mgr = rng.integers(0, cfg.n_managers, n)
    years = rng.integers(cfg.years[0], cfg.years[1] + 1, n)
    mgr_eff = cfg.manager_effect_mean + cfg.manager_effect_sd * rng.standard_normal(cfg.n_managers)
    if cfg.manager_effect_sd == 0 and cfg.manager_effect_mean == 0:
        mgr_eff[:] = 0.0
    planted = np.sort(rng.choice(cfg.n_managers, cfg.n_planted_managers, replace=False))
    mgr_eff[planted] = cfg.planted_effect
    n_ind = len(schema.column("industry").levels)
    ind_eff = cfg.industry_effect_sd * rng.standard_normal(n_ind)
    eps = rng.standard_normal(n)

    year_sd = cfg.notch_noise_sd * cfg.year_noise_decay ** (years - cfg.years[0])
    score = (cfg.gamma * (ind_eff[cols["industry"]] + covariate_notch(cols, schema))
             + mgr_eff[mgr] + year_sd * eps)
    if not np.any(score):
        final = prelim.copy()
    elif joint is not None:
        final = map_to_joint(prelim, score, joint)
    else:
        final = np.clip(prelim + np.round(score), CLASSES[0], CLASSES[-1]).astype(np.int64)

    cols[SCORECARD] = prelim
    cols[TARGET] = final
    width = max(3, len(str(cfg.n_managers)))
    mgr_names = np.array([f"M{i + 1:0{width}d}" for i in range(cfg.n_managers)])
    cust_names = np.array([f"C{i + 1:05d}" for i in range(cust.max() + 1)])
    ds = Dataset(schema, {c.name: cols[c.name] for c in schema.columns}, mgr_names[mgr],
                 cust_names[cust], years)
    truth = GroundTruth(
        latent=latent, notch=score,
        manager_effects=dict(zip(mgr_names.tolist(), mgr_eff.tolist())),
        industry_effects=dict(zip(schema.column("industry").levels, (cfg.gamma * ind_eff).tolist())),
        informative=INFORMATIVE,
        planted_managers=tuple(mgr_names[planted].tolist()),
    )
    truth.calibration = calibrate(ds, (s_target, m_target))
    return ds, truth


def write_ground_truth(truth: GroundTruth, path_records, path_managers) -> None:
    with open(path_records, "w", newline="") as fh:
        fh.write("record,latent_score,notch_score\n")
        for i, (s, c) in enumerate(zip(truth.latent, truth.notch)):
            fh.write(f"{i},{s:.10g},{c:.10g}\n")
    planted = set(truth.planted_managers)
    with open(path_managers, "w", newline="") as fh:
        fh.write("manager_id,effect,planted\n")
        for m, e in truth.manager_effects.items():
            fh.write(f"{m},{e:.10g},{int(m in planted)}\n")
