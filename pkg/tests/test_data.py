import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from notchlab.data import (
    CLASSES, SCORECARD, TARGET, Column, DataError, Dataset, Encoder, FeatureKind, Schema,
    class_index, default_schema, grouped_kfold, one_hot_encode, read_csv, stratified_kfold, write_csv,
)


def test_default_schema_matches_variable_table(schema):
    kinds = [c.kind for c in schema.columns]
    assert len(schema) == 27
    assert kinds.count(FeatureKind.CATEGORICAL) == 8
    assert kinds.count(FeatureKind.QUALITATIVE) == 7
    assert kinds.count(FeatureKind.QUANTITATIVE) == 10
    assert schema.names[-2:] == [SCORECARD, TARGET]
    assert schema.column("management_quality").levels == tuple("ABCDEF")
    assert len(schema.column("industry").levels) == 24


def test_schema_validation():
    with pytest.raises(ValueError):
        Schema((Column("a", FeatureKind.QUANTITATIVE), Column("a", FeatureKind.QUANTITATIVE)))
    with pytest.raises(ValueError):
        Column("q", FeatureKind.QUALITATIVE)
    with pytest.raises(ValueError):
        Column("x", FeatureKind.QUANTITATIVE, ("A",))
    with pytest.raises(ValueError):
        Schema((Column("year", FeatureKind.QUANTITATIVE),))


def test_predictors_drop_scorecard(schema):
    with_sc = schema.predictors(True)
    without = schema.predictors(False)
    assert TARGET not in with_sc and SCORECARD in with_sc
    assert set(with_sc) - set(without) == {SCORECARD}
    assert len(without) == 25


def _rows(schema, n, rng):
    out = []
    for _ in range(n):
        row = []
        for c in schema.columns:
            if c.kind.is_discrete:
                row.append(c.levels[rng.integers(len(c.levels))])
            elif c.kind is FeatureKind.RATING:
                row.append(str(rng.integers(2, 16)))
            else:
                row.append(repr(float(rng.normal())))
        out.append(row + ["M01", "C01", "2012"])
    return out


def _write_rows(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(r) + "\n")


def test_read_csv_three_rows(tmp_path, schema, rng):
    header = schema.names + ["manager_id", "customer_id", "year"]
    _write_rows(tmp_path / "p.csv", header, _rows(schema, 3, rng))
    ds = read_csv(tmp_path / "p.csv")
    assert ds.n == 3


def test_read_csv_column_order_is_free(tmp_path, schema, rng):
    header = schema.names + ["manager_id", "customer_id", "year"]
    rows = _rows(schema, 4, rng)
    perm = np.random.default_rng(0).permutation(len(header))
    _write_rows(tmp_path / "a.csv", header, rows)
    _write_rows(tmp_path / "b.csv", [header[i] for i in perm], [[r[i] for i in perm] for r in rows])
    assert read_csv(tmp_path / "a.csv").equals(read_csv(tmp_path / "b.csv"))


@pytest.mark.parametrize("column,value,fragment", [
    (TARGET, "16", "row 2"),
    ("management_quality", "Z", "unknown level 'Z'"),
    ("net_sales", "abc", "not numeric"),
    (SCORECARD, "0", "row 2"),
    ("net_sales", "", "missing value"),
])
def test_read_csv_rejects_bad_cells(tmp_path, schema, rng, column, value, fragment):
    header = schema.names + ["manager_id", "customer_id", "year"]
    rows = _rows(schema, 3, rng)
    rows[1][header.index(column)] = value
    _write_rows(tmp_path / "bad.csv", header, rows)
    with pytest.raises(DataError) as exc:
        read_csv(tmp_path / "bad.csv")
    assert fragment in str(exc.value)
    assert column in str(exc.value)


def test_read_csv_header_mismatch(tmp_path, schema, rng):
    header = schema.names[:-1] + ["manager_id", "customer_id", "year"]
    _write_rows(tmp_path / "h.csv", header, [r[:-4] + r[-3:] for r in _rows(schema, 2, rng)])
    with pytest.raises(DataError, match="header mismatch"):
        read_csv(tmp_path / "h.csv")


def test_write_read_round_trip(tmp_path, small_portfolio):
    ds = small_portfolio[0].subset(np.arange(100))
    path = tmp_path / "new" / "rt.csv"
    path.parent.mkdir()
    write_csv(ds, path)
    assert path.read_text().splitlines()[0].startswith("primary_exposure_type,")
    assert read_csv(path).equals(ds)


def test_write_csv_unwritable_path(tmp_path, small_portfolio):
    with pytest.raises(OSError, match="cannot write"):
        write_csv(small_portfolio[0], tmp_path / "missing_dir" / "x.csv")


def test_class_index_bounds():
    assert class_index([2, 9, 15]).tolist() == [0, 7, 13]
    with pytest.raises(DataError):
        class_index([1])


def _tiny_schema():
    return Schema((Column("c", FeatureKind.CATEGORICAL, ("A", "B")), Column("q", FeatureKind.QUANTITATIVE),
                   Column(SCORECARD, FeatureKind.RATING), Column(TARGET, FeatureKind.RATING)))


def _tiny(codes, q, prelim, final):
    n = len(codes)
    return Dataset(_tiny_schema(), {"c": codes, "q": q, SCORECARD: prelim, TARGET: final},
                   ["m"] * n, [f"c{i}" for i in range(n)], [2010] * n)


def test_one_hot_indicator_and_standardization():
    ds = _tiny([1, 0], [2.0, 4.0], [9, 9], [9, 10])
    X, labels = one_hot_encode(ds)
    assert labels == ["c=A", "c=B", "q", SCORECARD]
    assert X[0, :2].tolist() == [0.0, 1.0]
    assert X[:, 2].tolist() == [-1.0, 1.0]
    assert X[:, 3].tolist() == [0.0, 0.0]  # constant column maps to zero


def test_one_hot_drop_scorecard():
    ds = _tiny([1, 0], [2.0, 4.0], [8, 9], [9, 10])
    X, labels = one_hot_encode(ds, drop_columns={SCORECARD})
    assert not any(SCORECARD in lab for lab in labels)
    assert X.shape == (2, 3)


def test_one_hot_blocks_sum_to_one(small_portfolio):
    ds = small_portfolio[0]
    enc = Encoder.fit(ds, ds.schema.predictors())
    X = enc.transform(ds)
    col = 0
    for name in enc.columns:
        c = ds.schema.column(name)
        if c.kind.is_discrete:
            block = X[:, col:col + len(c.levels)]
            assert np.array_equal(block.sum(axis=1), np.ones(ds.n))
            col += len(c.levels)
        else:
            col += 1
    assert col == X.shape[1]


def test_stratified_even_split():
    f = stratified_kfold(np.full(10, 9), 5, 0)
    assert np.bincount(f.fold_of).tolist() == [2] * 5


def test_stratified_one_of_each_class():
    y = np.array([9] * 5 + [10] * 5)
    f = stratified_kfold(y, 5, 3)
    for k in range(5):
        assert sorted(y[f.test_index(k)].tolist()) == [9, 10]


def test_stratified_deterministic_and_k_checks():
    y = np.repeat(CLASSES, 7)
    assert np.array_equal(stratified_kfold(y, 5, 4).fold_of, stratified_kfold(y, 5, 4).fold_of)
    with pytest.raises(ValueError):
        stratified_kfold(y[:3], 5, 0)
    with pytest.raises(ValueError):
        stratified_kfold(y, 1, 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(2, 15), min_size=6, max_size=120), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_stratified_balance_property(labels, k, seed):
    y = np.array(labels)
    if k > len(y):
        return
    f = stratified_kfold(y, k, seed)
    assert f.fold_of.min() >= 0 and f.fold_of.max() < k
    for c in np.unique(y):
        counts = np.bincount(f.fold_of[y == c], minlength=k)
        assert counts.max() - counts.min() <= 1
    sizes = np.bincount(f.fold_of, minlength=k)
    assert sizes.max() - sizes.min() <= 1


def test_grouped_folds_keep_customers_together(small_portfolio):
    ds = small_portfolio[0]
    f = grouped_kfold(ds, 5, 2)
    for cust in np.unique(ds.customer_id)[:200]:
        assert len(np.unique(f.fold_of[ds.customer_id == cust])) == 1
