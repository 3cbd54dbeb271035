import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from parbals.dataset import (
    DataError, FeatureMatrix, SyntheticSpec, assemble, generate_synthetic, load_csv,
    load_scenario, make_one_vs_all, make_subpop_shift, preprocess, quantile_bin,
    quantile_edges, sample_synthetic, save_scenario, scenario_from_csv, split,
)

from conftest import write_csv


# --- load_csv -------------------------------------------------------------


def test_load_three_rows(tmp_path):
    p = write_csv(tmp_path / "t.csv", "a,b,label\n1,x,0\n2,y,1\n3,x,0\n")
    t = load_csv(p, "label")
    assert t.n_rows == 3
    assert t.feature_names == ["a", "b"]
    assert t.kinds == {"a": "numeric", "b": "categorical"}
    assert len(t.rows) == 3 and t.rows[0]["b"] == "x"


def test_missing_label_column_is_named(tmp_path):
    p = write_csv(tmp_path / "t.csv", "a,b\n1,2\n")
    with pytest.raises(DataError, match="'target'"):
        load_csv(p, "target")


def test_categorical_levels_counted(tmp_path):
    p = write_csv(tmp_path / "t.csv", "c,label\nx,0\ny,1\nx,0\n")
    t = load_csv(p, "label")
    assert t.kinds["c"] == "categorical"
    assert len(set(t.columns["c"].tolist())) == 2 == len(t.levels("c"))


def test_empty_file(tmp_path):
    p = write_csv(tmp_path / "t.csv", "")
    with pytest.raises(DataError, match="empty"):
        load_csv(p, "label")


def test_bad_row_reports_line(tmp_path):
    p = write_csv(tmp_path / "t.csv", "a,label\n1,0\n2,1,9\n")
    with pytest.raises(DataError, match="row 3"):
        load_csv(p, "label")


@pytest.mark.parametrize("cell", ["", "NaN", "nan"])
def test_missing_cells_rejected(tmp_path, cell):
    p = write_csv(tmp_path / "t.csv", f"a,label\n1,0\n{cell},1\n")
    with pytest.raises(DataError, match="missing"):
        load_csv(p, "label")


def test_quoted_fields(tmp_path):
    p = write_csv(tmp_path / "t.csv", 'a,label\n"x, y",0\n"z",1\n')
    t = load_csv(p, "label")
    assert t.columns["a"].tolist() == ["x, y", "z"]


def test_label_codes_numeric_order(tmp_path):
    p = write_csv(tmp_path / "t.csv", "a,label\n1,10\n2,2\n3,10\n")
    codes, levels = load_csv(p, "label").label_codes()
    assert codes.tolist() == [1, 0, 1]
    assert levels == ["2", "10"]


# --- binning and one-hot --------------------------------------------------


def sort_and_cut(values, bins):
    """Reference bins: linear-interpolated order statistics, ties to the lower bin."""
    s = sorted(values)
    n = len(s)
    edges = []
    for j in range(1, bins):
        h = (n - 1) * j / bins
        lo = math.floor(h)
        hi = min(lo + 1, n - 1)
        edges.append(s[lo] + (h - lo) * (s[hi] - s[lo]))
    edges = sorted(set(edges))
    return [sum(1 for e in edges if e < v) for v in values]


def test_bins_one_to_hundred():
    values = np.arange(1, 101, dtype=float)
    codes = quantile_bin(values, 10)
    assert codes[4] == 0  # value 5
    assert codes[94] == 9  # value 95
    assert codes.tolist() == sort_and_cut(values.tolist(), 10)


def test_edges_frozen():
    np.testing.assert_allclose(quantile_edges(np.arange(1, 101.0), 4), [25.75, 50.5, 75.25])


@given(st.lists(st.integers(-50, 50), min_size=2, max_size=60), st.integers(2, 12))
def test_binning_matches_reference_and_is_monotone(values, bins):
    v = np.array(values, dtype=float)
    codes = quantile_bin(v, bins)
    assert codes.tolist() == sort_and_cut(values, bins)
    order = np.argsort(v, kind="stable")
    assert np.all(np.diff(codes[order]) >= 0)


def table_from(tmp_path, text):
    return load_csv(write_csv(tmp_path / "t.csv", text), "label")


def test_categorical_one_hot_rows_sum_to_one(tmp_path):
    t = table_from(tmp_path, "c,label\nr,0\ng,1\nb,0\ng,1\n")
    fm = preprocess(t)
    assert fm.shape == (4, 3)
    np.testing.assert_array_equal(fm.X.sum(axis=1), 1.0)
    assert set(np.unique(fm.X)) <= {0.0, 1.0}


def test_preprocess_width_and_blocks(tmp_path):
    rows = "\n".join(f"{i},{'xyz'[i % 3]},{i % 2}" for i in range(40))
    t = table_from(tmp_path, "a,c,label\n" + rows + "\n")
    fm = preprocess(t, bins=4)
    assert fm.shape == (40, 4 + 3)
    np.testing.assert_array_equal(fm.X[:, :4].sum(axis=1), 1.0)
    np.testing.assert_array_equal(fm.X[:, 4:].sum(axis=1), 1.0)
    again = preprocess(t, bins=4)
    np.testing.assert_array_equal(fm.X, again.X)
    assert fm.feature_names == again.feature_names


def test_constant_column_warns(tmp_path, caplog):
    t = table_from(tmp_path, "a,b,label\n1,5,0\n2,5,1\n3,5,0\n")
    with caplog.at_level(logging.WARNING):
        fm = preprocess(t, bins=3)
    assert "constant" in caplog.text
    assert fm.shape[1] == 3 + 1


def test_preprocess_rejects_one_bin(tmp_path):
    t = table_from(tmp_path, "a,label\n1,0\n2,1\n")
    with pytest.raises(ValueError):
        preprocess(t, bins=1)


# --- relabelling ----------------------------------------------------------


def test_one_vs_all_example():
    assert make_one_vs_all([0, 3, 0, 7], 0).tolist() == [0, 1, 0, 1]
    assert make_one_vs_all([2, 2, 2], 2).tolist() == [0, 0, 0]


@given(st.lists(st.integers(0, 5), min_size=1, max_size=50))
def test_one_vs_all_preserves_positive_count(labels):
    pos = labels[0]
    out = make_one_vs_all(labels, pos)
    assert (out == 0).sum() == labels.count(pos)


def test_subpop_example():
    labels, mask = make_subpop_shift([0, 1, 2, 3])
    assert labels.tolist() == [0, 1, 2, 2]
    assert mask.tolist() == [True, True, False, False]
    assert not np.any(labels[mask] == 2)


def test_subpop_needs_three_classes():
    with pytest.raises(ValueError):
        make_subpop_shift([0, 1, 0, 1])


# --- split ----------------------------------------------------------------


def test_split_sizes():
    a, b, c = split(10, (0.6, 0.2, 0.2), seed=0)
    assert (len(a), len(b), len(c)) == (6, 2, 2)


def test_split_disjoint_over_many_seeds():
    for seed in range(1000):
        a, b, c = split(30, (0.5, 0.25, 0.25), seed)
        assert len(set(a) | set(b) | set(c)) == len(a) + len(b) + len(c)


def test_split_seeds_differ():
    perms = {tuple(np.concatenate(split(50, (0.6, 0.2, 0.2), s))) for s in range(100)}
    assert len(perms) == 100


def test_split_too_small():
    with pytest.raises(ValueError):
        split(3, (0.6, 0.2, 0.2), 0)


# --- synthetic scenarios --------------------------------------------------


def test_zero_weights_give_uniform_labels():
    spec = SyntheticSpec(np.zeros((3, 4)), np.zeros(3), np.ones(3) / 3, 10000, 10, 10)
    _, y = sample_synthetic(spec, seed=5)
    counts = np.bincount(y[:10000], minlength=3)
    sd = math.sqrt(10000 * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - 10000 / 3) < 3 * sd)


def test_synthetic_deterministic():
    spec = SyntheticSpec.random(3, 4, 1.0, seed=2, n_pool=50, n_val=10, n_test=20)
    a = generate_synthetic(spec, 7)
    b = generate_synthetic(spec, 7)
    np.testing.assert_array_equal(a.pool.X, b.pool.X)
    np.testing.assert_array_equal(a.oracle.reveal_all(), b.oracle.reveal_all())
    np.testing.assert_array_equal(a.test_labels, b.test_labels)


def test_strong_axis_weight_nearly_separable():
    W = np.zeros((2, 3))
    W[0, 0], W[1, 0] = 8.0, -8.0
    spec = SyntheticSpec(W, np.zeros(2), np.array([0.5, 0.5]), 100, 10, 2000)
    sc = generate_synthetic(spec, seed=3)
    pred = np.argmax(spec.logits(sc.test.X), axis=1)
    assert np.mean(pred == sc.test_labels) > 0.95


def test_synthetic_class_priors_shift_frequencies():
    spec = SyntheticSpec(np.zeros((2, 2)), np.zeros(2), np.array([0.1, 0.9]), 5000, 10, 10)
    _, y = sample_synthetic(spec, seed=1)
    assert abs(np.mean(y[:5000] == 0) - 0.1) < 0.02


def test_scenario_has_no_validation_labels():
    spec = SyntheticSpec.random(2, 3, 1.0, seed=0, n_pool=20, n_val=5, n_test=5)
    sc = generate_synthetic(spec, 0)
    assert not hasattr(sc.validation, "labels")
    assert isinstance(sc.validation, FeatureMatrix)


def test_subpop_scenario_filters_eval_sets():
    spec = SyntheticSpec.random(4, 3, 1.0, seed=0, n_pool=200, n_val=100, n_test=200)
    sc = generate_synthetic(spec, 0, kind="subpop-shift")
    assert sc.num_classes == 3
    assert set(np.unique(sc.test_labels)) <= {0, 1}
    assert 2 in set(sc.oracle.reveal_all().tolist())


def test_assemble_rejects_overlap():
    X = np.eye(6)
    with pytest.raises(DataError):
        assemble(FeatureMatrix(X, list("abcdef")), [0, 1, 0, 1, 0, 1], 2, [0, 1, 2], [2, 3], [4, 5])


def test_manifest_round_trip(tmp_path):
    spec = SyntheticSpec.random(2, 3, 1.0, seed=0, n_pool=30, n_val=10, n_test=10)
    sc = generate_synthetic(spec, 4)
    path = save_scenario(sc, tmp_path / "sc")
    manifest = json.loads(path.read_text())
    assert manifest["format"] == "parbals-scenario/1"
    back = load_scenario(path)
    np.testing.assert_array_equal(back.pool.X, sc.pool.X)
    np.testing.assert_array_equal(back.validation.X, sc.validation.X)
    np.testing.assert_array_equal(back.oracle.reveal_all(), sc.oracle.reveal_all())
    np.testing.assert_array_equal(back.test_labels, sc.test_labels)
    assert back.num_classes == sc.num_classes


def test_scenario_from_csv(tmp_path):
    g = np.random.default_rng(0)
    lines = ["a,b,label"] + [f"{g.normal():.4f},{'pq'[i % 2]},{i % 3}" for i in range(60)]
    p = write_csv(tmp_path / "d.csv", "\n".join(lines) + "\n")
    sc = scenario_from_csv(p, "label", seed=1, kind="one-vs-all")
    assert sc.num_classes == 2
    assert sc.n_pool == 36 and sc.validation.shape[0] == 12 and sc.test.shape[0] == 12
    assert set(np.unique(sc.pool.X)) <= {0.0, 1.0}
