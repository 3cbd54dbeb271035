"""Tabular loading, preprocessing and scenario construction."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as _rng

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "parbals-scenario/1"


class DataError(ValueError):
    """Malformed input data."""


@dataclass(frozen=True)
class RawTable:
    """Column store of a CSV file.

    ``columns`` maps feature name to an array of raw values: ``float64`` for
    numeric columns, ``object`` (str) for categorical ones.
    """

    columns: dict
    kinds: dict
    labels: np.ndarray
    label_column: str

    @property
    def feature_names(self):
        return list(self.columns)

    @property
    def n_rows(self):
        return len(self.labels)

    @property
    def rows(self):
        names = self.feature_names
        return [
            {**{n: self.columns[n][i] for n in names}, self.label_column: self.labels[i]}
            for i in range(self.n_rows)
        ]

    def levels(self, name):
        """Distinct values of a categorical column in first-seen order."""
        return list(dict.fromkeys(self.columns[name].tolist()))

    def label_codes(self):
        """Labels mapped to ``0..c-1`` (numeric order if all numeric, else lexical)."""
        values = self.labels.tolist()
        uniq = set(values)
        try:
            ordered = sorted(uniq, key=float)
        except ValueError:
            ordered = sorted(uniq)
        lookup = {v: i for i, v in enumerate(ordered)}
        return np.array([lookup[v] for v in values], dtype=np.int64), ordered


@dataclass(frozen=True)
class FeatureMatrix:
    X: np.ndarray
    feature_names: list

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] < 1:
            raise DataError(f"feature matrix must be n x d with d >= 1, got {X.shape}")
        if X.shape[1] != len(self.feature_names):
            raise DataError("feature_names length does not match column count")
        if not np.all(np.isfinite(X)):
            raise DataError("feature matrix has non-finite entries")
        object.__setattr__(self, "X", X)

    @property
    def shape(self):
        return self.X.shape

    def rows(self, idx):
        return FeatureMatrix(self.X[np.asarray(idx, dtype=np.int64)], self.feature_names)


def _is_missing(cell):
    return cell.strip().lower() in {"", "nan", "na", "null", "none"}


def _parse_number(cell):
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load_csv(path, label_column):
    """Read an RFC-4180 CSV with a header row into a :class:`RawTable`."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not found in header {header}")
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        raw = []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(record)} fields, expected {len(header)}"
                )
            for name, cell in zip(header, record):
                if _is_missing(cell):
                    raise DataError(f"{path}: row {lineno} has a missing value in column {name!r}")
            raw.append(record)
    if not raw:
        raise DataError(f"{path}: no data rows")

    cells = {name: [r[j].strip() for r in raw] for j, name in enumerate(header)}
    columns, kinds = {}, {}
    for name in header:
        if name == label_column:
            continue
        parsed = [_parse_number(c) for c in cells[name]]
        if all(p is not None for p in parsed):
            columns[name] = np.array(parsed, dtype=np.float64)
            kinds[name] = "numeric"
        else:
            columns[name] = np.array(cells[name], dtype=object)
            kinds[name] = "categorical"
    labels = np.array(cells[label_column], dtype=object)
    return RawTable(columns=columns, kinds=kinds, labels=labels, label_column=label_column)


def quantile_edges(values, bins):
    """Interior cut points at the ``j/bins`` empirical quantiles, deduplicated."""
    qs = np.arange(1, bins) / bins
    return np.unique(np.quantile(np.asarray(values, dtype=np.float64), qs))


def quantile_bin(values, bins):
    """Bin index per value; a value equal to an edge goes to the lower bin."""
    edges = quantile_edges(values, bins)
    return np.searchsorted(edges, values, side="left")


def _one_hot(codes, levels):
    return (np.asarray(codes)[:, None] == np.asarray(levels)[None, :]).astype(np.float64)


def preprocess(table, bins=10):
    """Quantile-bin numeric columns, then one-hot encode every column."""
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    blocks, names = [], []
    for name in table.feature_names:
        col = table.columns[name]
        if table.kinds[name] == "numeric":
            codes = quantile_bin(col, bins)
            levels = np.unique(codes)
            if len(levels) == 1:
                logger.warning("numeric column %r is constant; emitting a single level", name)
            labels = [f"{name}[bin{int(b)}]" for b in levels]
        else:
            levels_raw = table.levels(name)
            lookup = {v: i for i, v in enumerate(levels_raw)}
            codes = np.array([lookup[v] for v in col.tolist()])
            levels = np.arange(len(levels_raw))
            labels = [f"{name}={v}" for v in levels_raw]
        blocks.append(_one_hot(codes, levels))
        names.extend(labels)
    if not blocks:
        raise DataError("table has no feature columns")
    return FeatureMatrix(np.hstack(blocks), names)


def make_one_vs_all(labels, positive_class):
    """Collapse to binary: 0 for ``positive_class``, 1 for everything else."""
    labels = np.asarray(labels, dtype=np.int64)
    if not np.any(labels == positive_class):
        raise ValueError(f"positive class {positive_class} does not occur in labels")
    return np.where(labels == positive_class, 0, 1).astype(np.int64)


def make_subpop_shift(labels):
    """Three-way relabel (0, 1, rest) and the mask of test-eligible rows."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 3:
        raise ValueError("subpopulation shift needs at least 3 distinct classes")
    new = np.where(labels == 0, 0, np.where(labels == 1, 1, 2)).astype(np.int64)
    return new, new != 2


def split(n, fractions, seed):
    """Disjoint pool / validation / test index arrays from a seeded permutation."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError(f"need three positive fractions, got {fractions}")
    if sum(fractions) > 1 + 1e-12:
        raise ValueError(f"fractions sum to {sum(fractions)} > 1")
    sizes = [int(math.floor(n * f + 1e-9)) for f in fractions]
    if min(sizes) < 1:
        raise ValueError(f"n={n} too small for fractions {fractions}: sizes {sizes}")
    perm = _rng.generator(seed, _rng.SPLIT).permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return perm[:a], perm[a:b], perm[b : b + sizes[2]]


class LabelOracle:
    """Holds hidden pool labels; the harness is the only caller."""

    def __init__(self, labels):
        self._labels = np.asarray(labels, dtype=np.int64).copy()
        self._labels.setflags(write=False)
        self.queries = 0

    def __len__(self):
        return len(self._labels)

    def query(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        self.queries += len(idx)
        return self._labels[idx].copy()

    def reveal_all(self):
        """Every pool label; for export and for oracle tests only."""
        return self._labels.copy()


@dataclass(frozen=True)
class Scenario:
    """Pool with hidden labels, unlabeled validation set, labeled test set.

    Validation labels are never stored here.  ``source_ids`` record the row
    of the originating table for each split (used by manifest export).
    """

    pool: FeatureMatrix
    oracle: LabelOracle
    validation: FeatureMatrix
    test: FeatureMatrix
    test_labels: np.ndarray
    num_classes: int
    initial_labeled_indices: tuple = ()
    source_ids: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.oracle) != self.pool.shape[0]:
            raise DataError("oracle size does not match pool")
        if len(self.test_labels) != self.test.shape[0]:
            raise DataError("test labels do not match test rows")
        dims = {self.pool.shape[1], self.validation.shape[1], self.test.shape[1]}
        if len(dims) != 1:
            raise DataError(f"inconsistent feature widths {dims}")
        for arr in (self.oracle.reveal_all(), self.test_labels):
            if len(arr) and (arr.min() < 0 or arr.max() >= self.num_classes):
                raise DataError(f"labels outside 0..{self.num_classes - 1}")
        ids = [np.asarray(v) for v in self.source_ids.values()]
        if ids:
            joined = np.concatenate(ids)
            if len(np.unique(joined)) != len(joined):
                raise DataError("split source ids overlap")
        init = np.asarray(self.initial_labeled_indices, dtype=np.int64)
        if len(init) and (init.min() < 0 or init.max() >= self.pool.shape[0]):
            raise DataError("initial labeled indices outside the pool")

    @property
    def n_pool(self):
        return self.pool.shape[0]

    @property
    def dim(self):
        return self.pool.shape[1]


def assemble(features, labels, num_classes, pool_idx, val_idx, test_idx, kind="plain",
             positive_class=0, initial_labeled=()):
    """Build a :class:`Scenario` from a labeled feature matrix and split indices.

    ``kind`` is ``plain``, ``one-vs-all`` (collapse around ``positive_class``)
    or ``subpop-shift`` (three classes; validation and test keep only 0/1).
    Validation labels are used only to apply the subpopulation filter.
    """
    labels = np.asarray(labels, dtype=np.int64)
    pool_idx, val_idx, test_idx = (np.asarray(a, dtype=np.int64) for a in (pool_idx, val_idx, test_idx))
    if kind == "one-vs-all":
        labels = make_one_vs_all(labels, positive_class)
        num_classes = 2
    elif kind == "subpop-shift":
        labels, keep = make_subpop_shift(labels)
        num_classes = 3
        val_idx = val_idx[keep[val_idx]]
        test_idx = test_idx[keep[test_idx]]
        if len(val_idx) == 0 or len(test_idx) == 0:
            raise DataError("subpopulation filter left an empty validation or test set")
    elif kind != "plain":
        raise ValueError(f"unknown scenario kind {kind!r}")
    if not isinstance(features, FeatureMatrix):
        X = np.asarray(features, dtype=np.float64)
        features = FeatureMatrix(X, [f"x{j}" for j in range(X.shape[1])])
    return Scenario(
        pool=features.rows(pool_idx),
        oracle=LabelOracle(labels[pool_idx]),
        validation=features.rows(val_idx),
        test=features.rows(test_idx),
        test_labels=labels[test_idx],
        num_classes=int(num_classes),
        initial_labeled_indices=tuple(int(i) for i in initial_labeled),
        source_ids={"pool": pool_idx, "validation": val_idx, "test": test_idx},
    )


@dataclass(frozen=True)
class SyntheticSpec:
    """Ground-truth softmax-linear problem with spherical Gaussian features.

    Labels are drawn from ``softmax(W x + b + ln class_priors)``, so with zero
    weights and bias the class frequencies equal ``class_priors``.
    """

    true_weights: np.ndarray
    true_bias: np.ndarray
    class_priors: np.ndarray
    n_pool: int
    n_val: int
    n_test: int
    feature_mean: float = 0.0
    feature_std: float = 1.0

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.true_weights, dtype=np.float64))
        b = np.asarray(self.true_bias, dtype=np.float64).ravel()
        pri = np.asarray(self.class_priors, dtype=np.float64).ravel()
        if b.shape[0] != W.shape[0] or pri.shape[0] != W.shape[0]:
            raise ValueError("weights, bias and priors disagree on the class count")
        if np.any(pri <= 0) or abs(pri.sum() - 1) > 1e-9:
            raise ValueError("class_priors must be positive and sum to 1")
        if min(self.n_pool, self.n_val, self.n_test) < 1:
            raise ValueError("split counts must be positive")
        if self.feature_std <= 0:
            raise ValueError("feature_std must be positive")
        object.__setattr__(self, "true_weights", W)
        object.__setattr__(self, "true_bias", b)
        object.__setattr__(self, "class_priors", pri)

    @property
    def num_classes(self):
        return self.true_weights.shape[0]

    @property
    def dim(self):
        return self.true_weights.shape[1]

    @classmethod
    def random(cls, num_classes, dim, weight_scale, seed, n_pool, n_val, n_test,
               class_priors=None):
        """Weights drawn i.i.d. ``N(0, weight_scale^2)``, zero bias."""
        g = _rng.generator(seed, _rng.SYNTH_WEIGHTS)
        W = g.normal(0.0, weight_scale, size=(num_classes, dim))
        priors = np.full(num_classes, 1.0 / num_classes) if class_priors is None else class_priors
        return cls(W, np.zeros(num_classes), priors, n_pool, n_val, n_test)

    def logits(self, X):
        return X @ self.true_weights.T + self.true_bias + np.log(self.class_priors)

    def to_dict(self):
        return {
            "true_weights": self.true_weights.tolist(),
            "true_bias": self.true_bias.tolist(),
            "class_priors": self.class_priors.tolist(),
            "n_pool": self.n_pool,
            "n_val": self.n_val,
            "n_test": self.n_test,
            "feature_mean": self.feature_mean,
            "feature_std": self.feature_std,
        }


def sample_synthetic(spec, seed):
    """Features and labels for ``n_pool + n_val + n_test`` rows, in that order."""
    n = spec.n_pool + spec.n_val + spec.n_test
    X = _rng.generator(seed, _rng.SYNTH_FEATURES).normal(
        spec.feature_mean, spec.feature_std, size=(n, spec.dim)
    )
    logits = spec.logits(X)
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    u = _rng.generator(seed, _rng.SYNTH_LABELS).random(n)
    y = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    return X, np.minimum(y, spec.num_classes - 1).astype(np.int64)


def generate_synthetic(spec, seed, kind="plain", positive_class=0):
    """Draw a synthetic :class:`Scenario`; deterministic given ``seed``."""
    X, y = sample_synthetic(spec, seed)
    a, b = spec.n_pool, spec.n_pool + spec.n_val
    n = b + spec.n_test
    return assemble(X, y, spec.num_classes, np.arange(a), np.arange(a, b), np.arange(b, n),
                    kind=kind, positive_class=positive_class)


def scenario_from_csv(path, label_column, fractions=(0.6, 0.2, 0.2), seed=0, bins=10,
                      kind="plain", positive_class=0):
    table = load_csv(path, label_column)
    features = preprocess(table, bins=bins)
    labels, _ = table.label_codes()
    pool, val, test = split(table.n_rows, fractions, seed)
    return assemble(features, labels, int(labels.max()) + 1, pool, val, test,
                    kind=kind, positive_class=positive_class)


# ---------------------------------------------------------------------------
# manifest export / import


def save_scenario(scenario, directory):
    """Write ``features.csv``, ``labels.csv`` and ``manifest.json``.

    Rows are laid out pool, validation, test.  Validation rows get an empty
    label cell because the scenario never held their labels.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    X = np.vstack([scenario.pool.X, scenario.validation.X, scenario.test.X])
    n_p, n_v = scenario.n_pool, scenario.validation.shape[0]
    labels = (
        [str(v) for v in scenario.oracle.reveal_all()]
        + [""] * n_v
        + [str(v) for v in scenario.test_labels]
    )
    with open(directory / "features.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(scenario.pool.feature_names)
        for row in X:
            w.writerow([repr(float(v)) for v in row])
    with open(directory / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label"])
        w.writerows([lab] for lab in labels)
    manifest = {
        "format": MANIFEST_FORMAT,
        "num_classes": scenario.num_classes,
        "features": "features.csv",
        "labels": "labels.csv",
        "pool": list(range(n_p)),
        "validation": list(range(n_p, n_p + n_v)),
        "test": list(range(n_p + n_v, X.shape[0])),
        "initial_labeled": list(scenario.initial_labeled_indices),
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path


def load_scenario(manifest_path):
    """Rebuild a :class:`Scenario` from a manifest; validation labels are ignored."""
    manifest_path = Path(manifest_path)
    spec = json.loads(manifest_path.read_text(encoding="utf-8"))
    if spec.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{manifest_path}: unsupported manifest format {spec.get('format')!r}")
    missing = {"num_classes", "features", "labels", "pool", "validation", "test"} - set(spec)
    if missing:
        raise DataError(f"{manifest_path}: manifest missing keys {sorted(missing)}")
    base = manifest_path.parent
    with open(base / spec["features"], newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        X = np.array([[float(c) for c in row] for row in reader if row], dtype=np.float64)
    with open(base / spec["labels"], newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        raw = [row[0] if row else "" for row in reader]
    pool, val, test = (np.asarray(spec[k], dtype=np.int64) for k in ("pool", "validation", "test"))
    labels = np.full(len(raw), -1, dtype=np.int64)
    for i in np.concatenate([pool, test]):
        if raw[i] == "":
            raise DataError(f"{manifest_path}: row {i} in pool/test has no label")
        labels[i] = int(raw[i])
    # validation labels, if present in the file, are deliberately not read
    return Scenario(
        pool=FeatureMatrix(X[pool], names),
        oracle=LabelOracle(labels[pool]),
        validation=FeatureMatrix(X[val], names),
        test=FeatureMatrix(X[test], names),
        test_labels=labels[test],
        num_classes=int(spec["num_classes"]),
        initial_labeled_indices=tuple(spec.get("initial_labeled") or ()),
        source_ids={"pool": pool, "validation": val, "test": test},
    )
