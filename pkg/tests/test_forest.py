import numpy as np
import pytest

from notchlab import analysis, cart, forest, synth
from notchlab.data import CLASSES, class_index


def _leaf_tree(rating):
    """Single-leaf tree predicting ``rating``."""
    inp = cart.TreeInput(np.zeros((1, 1)), np.array([False]), np.array([0]))
    return cart.fit(inp, [rating])


def _voting_forest(ratings):
    trees = [_leaf_tree(r) for r in ratings]
    packed = cart.PackedTrees.pack(trees, [t.leaf_class for t in trees])
    return forest.ForestModel(["x0"], packed, np.zeros(1), "", forest.ForestConfig(n_trees=len(trees)))


@pytest.mark.parametrize("votes,expected", [((9, 9, 10), 9), ((9, 10), 9), ((11, 10), 10), ((15,), 15)])
def test_majority_vote_and_tie_to_lowest(votes, expected):
    assert _voting_forest(votes).predict(np.zeros((1, 1)))[0] == expected


def test_predict_proba_vote_shares():
    p = _voting_forest((9, 9, 10, 11)).predict_proba(np.zeros((1, 1)))[0]
    assert p[7] == 0.5 and p[8] == 0.25 and p[9] == 0.25 and p.sum() == 1.0
    u = _voting_forest((12, 12, 12)).predict_proba(np.zeros((1, 1)))[0]
    assert u.max() == 1.0 and np.count_nonzero(u) == 1


def _random_input(rng, n=300, m=4):
    X = np.column_stack([rng.normal(size=n), rng.integers(0, 4, n), rng.normal(size=n), rng.integers(0, 3, n)])
    is_cat = np.array([False, True, False, True])
    y = 2 + (X[:, 0] > 0) * 3 + X[:, 1].astype(int) + rng.integers(0, 2, n)
    return cart.TreeInput(X[:, :m], is_cat[:m], np.array([0, 4, 0, 3])[:m]), np.clip(y, 2, 15)


def test_degenerate_forest_equals_single_tree(rng):
    inp, y = _random_input(rng)
    cfg = forest.ForestConfig(n_trees=1, mtry=4, bootstrap=False, min_node_size=5)
    f = forest.fit_input(inp, y, cfg)
    t = cart.fit(inp, y, cart.TreeConfig(min_node_size=5, mtry=4))
    assert np.array_equal(f.predict(inp.X), t.predict(inp.X))


def test_identical_trees_without_bootstrap(rng):
    inp, y = _random_input(rng)
    f = forest.fit_input(inp, y, forest.ForestConfig(n_trees=4, mtry=4, bootstrap=False, min_node_size=3))
    t = cart.fit(inp, y, cart.TreeConfig(min_node_size=3, mtry=4))
    Xt = rng.normal(size=(50, 4))
    Xt[:, 1] = rng.integers(0, 4, 50)
    Xt[:, 3] = rng.integers(0, 3, 50)
    assert np.array_equal(f.predict(Xt), t.predict(Xt))


def test_seed_and_thread_determinism(rng):
    inp, y = _random_input(rng)
    cfg = forest.ForestConfig(n_trees=12, seed=3)
    a = forest.fit_input(inp, y, cfg, threads=1)
    b = forest.fit_input(inp, y, cfg, threads=3)
    assert np.array_equal(a.votes(inp.X), b.votes(inp.X))
    assert np.array_equal(a.importance, b.importance)
    c = forest.fit_input(inp, y, forest.ForestConfig(n_trees=12, seed=4))
    assert not np.array_equal(a.votes(inp.X), c.votes(inp.X))


def _regrow(inp, y, cfg):
    """Trees grown exactly as the forest grows them, kept unpacked."""
    n, m = inp.shape
    out = []
    for t in range(cfg.n_trees):
        ss = forest.tree_seed(cfg.seed, t)
        w = np.bincount(np.random.default_rng(ss).integers(0, n, n), minlength=n).astype(np.float64)
        tc = cart.TreeConfig(min_node_size=cfg.min_node_size, mtry=cfg.resolved_mtry(m),
                             rng_seed=int(ss.generate_state(1)[0]))
        out.append(cart._grow(inp, w, class_index(y), tc))
    return out


def _gini(c):
    c = np.asarray(c, dtype=np.float64)
    p = c / c.sum()
    return 1.0 - np.sum(p * p)


def test_predict_is_mode_of_tree_votes(rng):
    inp, y = _random_input(rng)
    cfg = forest.ForestConfig(n_trees=7, seed=8)
    f = forest.fit_input(inp, y, cfg)
    per_tree = np.array([t.predict(inp.X) for t in _regrow(inp, y, cfg)])
    for i in range(inp.shape[0]):
        counts = np.bincount(per_tree[:, i] - 2, minlength=14)
        assert f.predict(inp.X[i:i + 1])[0] == CLASSES[np.argmax(counts)]


def test_importance_is_mean_of_hand_walked_trees(rng):
    inp, y = _random_input(rng, n=120)
    cfg = forest.ForestConfig(n_trees=3, seed=5)
    f = forest.fit_input(inp, y, cfg)
    acc = np.zeros((3, inp.shape[1]))
    for j, t in enumerate(_regrow(inp, y, cfg)):
        root = t.value[0].sum()
        for k in range(t.n_nodes):
            if t.feature[k] < 0:
                continue
            L, R = t.value[t.left[k]], t.value[t.right[k]]
            wn = t.value[k].sum()
            dec = _gini(t.value[k]) - L.sum() / wn * _gini(L) - R.sum() / wn * _gini(R)
            acc[j, t.feature[k]] += wn / root * dec
    assert np.allclose(f.importance, acc.mean(axis=0), atol=1e-12)


def test_single_leaf_forest_has_zero_importance():
    inp = cart.TreeInput(np.arange(10.0)[:, None], np.array([False]), np.array([0]))
    f = forest.fit_input(inp, np.full(10, 9), forest.ForestConfig(n_trees=5))
    assert np.all(f.importance == 0)
    rep = analysis.importance_report(f, _one_col_schema())
    assert rep.entries[0][1] == 0.0


def _one_col_schema():
    from notchlab.data import Column, FeatureKind, Schema
    return Schema((Column("x0", FeatureKind.QUANTITATIVE),))


def test_training_accuracy_on_separable_set():
    rng = np.random.default_rng(0)
    n = 400
    y = rng.integers(0, 4, n)
    X = np.column_stack([y * 3.0 + rng.uniform(-1, 1, n), rng.normal(size=n), rng.normal(size=n)])
    inp = cart.TreeInput(X, np.zeros(3, bool), np.zeros(3, int))
    f = forest.fit_input(inp, CLASSES[y * 3], forest.ForestConfig(n_trees=500, min_node_size=5))
    assert np.mean(f.predict(X) == CLASSES[y * 3]) >= 0.95


def test_default_mtry_on_raw_columns():
    assert forest.ForestConfig().resolved_mtry(25) == 5
    assert forest.ForestConfig().resolved_mtry(26) == 6
    with pytest.raises(ValueError):
        forest.ForestConfig(mtry=30).resolved_mtry(25)
    with pytest.raises(ValueError):
        forest.ForestConfig(n_trees=0)


def test_permuting_informative_column_lowers_its_rank():
    col = "total_debt_to_cap"
    drops = 0
    for seed in range(10):
        ds, _ = synth.generate(synth.GeneratorConfig(n=1500, seed=seed))
        cols = ds.schema.predictors(False)
        cfg = forest.ForestConfig(n_trees=30, seed=seed)
        before = analysis.importance_report(forest.fit(ds, cfg, cols), ds.schema).rank(col)
        shuffled = ds.with_columns(**{col: np.random.default_rng(seed).permutation(ds[col])})
        after = analysis.importance_report(forest.fit(shuffled, cfg, cols), ds.schema).rank(col)
        drops += after > before
    assert drops >= 9
