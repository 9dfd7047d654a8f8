import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from notchlab import analysis, synth
from notchlab.data import CLASSES, SCORECARD, TARGET, read_csv, write_csv

SCORECARD_COUNTS = (45, 144, 407, 387, 685, 2515, 1542, 13149, 4620, 4745, 3016, 2194, 1666, 2334)
MANAGER_COUNTS = (25, 61, 367, 314, 1034, 2792, 2587, 8932, 5020, 5583, 5932, 1739, 931, 2132)


def test_default_targets_are_published_subtotals():
    s, m = synth.default_targets()
    assert s[7] == pytest.approx(13149 / 37449, abs=1e-15)
    assert m[13] == pytest.approx(2132 / 37449, abs=1e-15)
    assert np.allclose(s * 37449, SCORECARD_COUNTS)
    assert np.allclose(m * 37449, MANAGER_COUNTS)
    assert s.sum() == pytest.approx(1, abs=1e-12) and m.sum() == pytest.approx(1, abs=1e-12)
    assert sum(SCORECARD_COUNTS) == sum(MANAGER_COUNTS) == 37449


def test_joint_table_margins_match_published_subtotals():
    assert synth.JOINT_COUNTS.sum() == 37449
    assert tuple(synth.JOINT_COUNTS.sum(axis=0)) == SCORECARD_COUNTS
    assert tuple(synth.JOINT_COUNTS.sum(axis=1)) == MANAGER_COUNTS


def test_full_size_class_nine_share():
    ds, truth = synth.generate(synth.GeneratorConfig(n=37449, seed=5))
    assert np.mean(ds.labels == 9) == pytest.approx(8932 / 37449, abs=0.02)
    assert max(truth.calibration) <= 0.05


def test_degenerate_notching_is_identity():
    ds, _ = synth.generate(synth.degenerate_config(n=3000, seed=1))
    assert np.array_equal(ds[SCORECARD], ds[TARGET])


def test_degenerate_confusion_is_diagonal():
    from notchlab.evaluate import confusion
    ds, _ = synth.generate(synth.degenerate_config(n=2000, seed=4, calibrate=False))
    c = confusion(ds[SCORECARD], ds[TARGET]).counts
    assert np.array_equal(c, np.diag(np.diag(c)))


def test_same_seed_same_bytes(tmp_path):
    cfg = synth.GeneratorConfig(n=500, seed=9)
    a, ta = synth.generate(cfg)
    b, tb = synth.generate(cfg)
    assert a.equals(b)
    write_csv(a, tmp_path / "a.csv")
    write_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert read_csv(tmp_path / "a.csv").equals(a)
    assert np.array_equal(ta.latent, tb.latent)


def test_different_seed_differs():
    a, _ = synth.generate(synth.GeneratorConfig(n=300, seed=1))
    b, _ = synth.generate(synth.GeneratorConfig(n=300, seed=2))
    assert not a.equals(b)


def test_calibrate_exact_and_hand_sum():
    s_t, m_t = synth.default_targets()
    ds, _ = synth.generate(synth.GeneratorConfig(n=37449, seed=0))
    assert synth.calibrate(ds) == pytest.approx((0.0, 0.0), abs=1e-12)
    # all final ratings 9: distance is 2 * (1 - t_9) by direct summation
    nine = ds.with_columns(**{TARGET: np.full(ds.n, 9)})
    fracs = [c / 37449 for c in MANAGER_COUNTS]
    hand = sum(abs((1.0 if r == 9 else 0.0) - f) for r, f in zip(range(2, 16), fracs))
    assert synth.calibrate(nine)[1] == pytest.approx(hand, abs=1e-12)
    assert hand == pytest.approx(2 * (1 - 8932 / 37449), abs=1e-12)


def test_calibrate_empty_dataset_rejected(small_portfolio):
    with pytest.raises(ValueError):
        synth.calibrate(small_portfolio[0].subset(np.arange(0)))


def test_infeasible_marginals_raise():
    s, m = synth.default_targets()
    # all scorecard mass on 2, all manager mass on 15: the published joint has
    # no (scorecard 2, manager 15) cell, so no rescaling reaches these margins
    assert synth.JOINT_COUNTS[13, 0] == 0
    bad_s = np.zeros(14)
    bad_s[0] = 1.0
    bad_m = np.zeros(14)
    bad_m[13] = 1.0
    with pytest.raises(synth.CalibrationError):
        synth.generate(synth.GeneratorConfig(n=100, seed=0, target_marginals=(bad_s, bad_m)))


def test_config_validation():
    with pytest.raises(ValueError):
        synth.GeneratorConfig(n_managers=0)
    with pytest.raises(ValueError):
        synth.GeneratorConfig(n_industries=0)
    s, m = synth.default_targets()
    with pytest.raises(ValueError):
        synth.GeneratorConfig(target_marginals=(s * 1.01, m))
    bad = m.copy()
    bad[0], bad[1] = -0.01, bad[1] + 0.01
    with pytest.raises(ValueError):
        synth.GeneratorConfig(target_marginals=(s, bad))


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 400), st.integers(0, 10**6), st.booleans())
def test_ratings_in_range_and_sizes(n, seed, calibrate):
    ds, truth = synth.generate(synth.GeneratorConfig(n=n, seed=seed, calibrate=calibrate))
    assert ds.n == n
    for col in (SCORECARD, TARGET):
        assert ds[col].min() >= 2 and ds[col].max() <= 15
    assert set(truth.informative) <= set(ds.schema.names)
    assert len(truth.manager_effects) == 328 and len(truth.planted_managers) == 5
    assert ds.year.min() >= 2010 and ds.year.max() <= 2018


def test_notching_skews_upward():
    ds, _ = synth.generate(synth.GeneratorConfig(n=37449, seed=2))
    d = ds[TARGET] - ds[SCORECARD]
    assert np.sum(d > 0) > np.sum(d < 0)


def test_quantile_bins_hit_target_counts():
    rng = np.random.default_rng(0)
    s, _ = synth.default_targets()
    r = synth.quantile_bins(rng.normal(size=37449), s)
    assert np.array_equal(np.bincount(r - 2, minlength=14), SCORECARD_COUNTS)


def test_write_ground_truth(tmp_path):
    _, truth = synth.generate(synth.GeneratorConfig(n=50, seed=3, n_managers=12, n_planted_managers=2))
    synth.write_ground_truth(truth, tmp_path / "r.csv", tmp_path / "m.csv")
    rec = (tmp_path / "r.csv").read_text().splitlines()
    mgr = (tmp_path / "m.csv").read_text().splitlines()
    assert rec[0] == "record,latent_score,notch_score" and len(rec) == 51
    assert mgr[0] == "manager_id,effect,planted" and len(mgr) == 13
    assert sum(int(line.split(",")[2]) for line in mgr[1:]) == 2


def _sig_count(sd, seed):
    cfg = synth.GeneratorConfig(n=8000, seed=seed, manager_effect_sd=sd, n_managers=60, n_planted_managers=0)
    ds, _ = synth.generate(cfg)
    # the scorecard itself as predictor: the error is the notch size
    err = np.abs(ds[TARGET] - ds[SCORECARD])
    return analysis.heterogeneity(err, ds.manager_id).significant(0.05).sum()


def test_manager_sd_raises_significant_count_on_average():
    lo = np.mean([_sig_count(0.0, s) for s in range(10)])
    hi = np.mean([_sig_count(0.5, s) for s in range(10)])
    assert hi >= lo
