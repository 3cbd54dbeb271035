"""Active-learning loop, evaluation, multi-seed suites and result files."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as _rng
from ._backend import thread_cap
from .acquisition import (
    STOCHASTIC_VARIANTS,
    bald_scores,
    batchbald_select,
    confidence_scores,
    epig_scores,
    select_stochastic,
    select_top_b,
    validation_subsample,
)
from .bait import bait_greedy
from .bayes_linear import DEFAULT_K, Prior, laplace_posterior, predict
from .dataset import SyntheticSpec, generate_synthetic, load_scenario, scenario_from_csv
from .partial_batch import COUPLINGS, ParbalsConfig, parbals_select

logger = logging.getLogger(__name__)

BASE_ALGORITHMS = ("random", "confidence", "bald", "epig", "batchbald", "bait",
                   "parbals-epig", "parbals-map-epig")
ALGORITHMS = BASE_ALGORITHMS + tuple(
    f"{v}-{s}" for v in STOCHASTIC_VARIANTS for s in ("bald", "epig")
)
PARBALS_ALGORITHMS = ("parbals-epig", "parbals-map-epig")
NLL_FLOOR = 1e-12


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class PoolExhaustedError(RuntimeError):
    pass


class ExperimentError(RuntimeError):
    def __init__(self, message, iteration):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: dict
    algorithm: str
    T: int
    B: int
    initial_labeled: int
    k: int = DEFAULT_K
    m: int | None = None
    beta: float | None = None
    prior_variance: float = 1.0
    seed: int = 0
    val_subsample: int | None = 500
    universe_coupling: str = "independent"
    bait_pool_subsample: int | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
        if not isinstance(self.scenario, dict) or "type" not in self.scenario:
            raise ConfigError("scenario must be an object with a 'type' key")
        for name, lo in (("T", 0), ("B", 1), ("initial_labeled", 1), ("k", 1)):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < lo:
                raise ConfigError(f"{name} must be an integer >= {lo}, got {value!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.val_subsample is not None and self.val_subsample < 1:
            raise ConfigError("val_subsample must be >= 1 or null")
        if not self.prior_variance > 0:
            raise ConfigError("prior_variance must be positive")
        if self.algorithm in PARBALS_ALGORITHMS:
            m = 8 if self.m is None else self.m
            if self.algorithm == "parbals-map-epig":
                if self.m not in (None, 1):
                    raise ConfigError("parbals-map-epig uses a single universe; m must be 1")
                m = 1
            if not isinstance(m, int) or m < 1:
                raise ConfigError(f"m must be an integer >= 1, got {m!r}")
            object.__setattr__(self, "m", m)
        elif self.m is not None:
            raise ConfigError(f"m applies only to parbals algorithms, not {self.algorithm}")
        if self.stochastic_variant:
            beta = 1.0 if self.beta is None else self.beta
            if not beta > 0:
                raise ConfigError(f"beta must be positive, got {beta}")
            object.__setattr__(self, "beta", float(beta))
        elif self.beta is not None:
            raise ConfigError(f"beta applies only to power/softmax/softrank algorithms")
        if self.universe_coupling not in COUPLINGS:
            raise ConfigError(f"universe_coupling must be one of {COUPLINGS}")

    @property
    def stochastic_variant(self):
        head = self.algorithm.split("-")[0]
        return head if head in STOCHASTIC_VARIANTS else None

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        missing = {f.name for f in dataclasses.fields(cls)
                   if f.default is dataclasses.MISSING} - set(data)
        if missing:
            raise ConfigError(f"missing config keys: {', '.join(sorted(missing))}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def build_scenario(source, seed):
    """Scenario from a config ``scenario`` object.

    ``{"type": "manifest", "path": ...}``; ``{"type": "csv", "path", "label_column",
    ...}``; ``{"type": "synthetic", ...}`` with either an explicit ``spec`` or
    ``num_classes``/``dim``/``weight_scale``/counts for random true weights.
    ``data_seed`` overrides the experiment seed for data generation.
    """
    kind = source["type"]
    data_seed = int(source.get("data_seed", seed))
    if kind == "manifest":
        return load_scenario(source["path"])
    if kind == "csv":
        return scenario_from_csv(
            source["path"], source["label_column"],
            fractions=tuple(source.get("fractions", (0.6, 0.2, 0.2))),
            seed=data_seed, bins=int(source.get("bins", 10)),
            kind=source.get("kind", "plain"), positive_class=int(source.get("positive_class", 0)),
        )
    if kind == "synthetic":
        if "spec" in source:
            s = dict(source["spec"])
            spec = SyntheticSpec(
                np.array(s.pop("true_weights")), np.array(s.pop("true_bias")),
                np.array(s.pop("class_priors")), **s,
            )
        else:
            spec = SyntheticSpec.random(
                int(source["num_classes"]), int(source["dim"]), float(source.get("weight_scale", 1.0)),
                data_seed, int(source["n_pool"]), int(source["n_val"]), int(source["n_test"]),
                class_priors=source.get("class_priors"),
            )
        return generate_synthetic(spec, data_seed, kind=source.get("kind", "plain"),
                                  positive_class=int(source.get("positive_class", 0)))
    raise ConfigError(f"unknown scenario type {kind!r}")


def evaluate(ensemble, X, y):
    """Accuracy of the averaged prediction and its mean NLL (probabilities floored at 1e-12)."""
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty test set")
    _, bma = predict(ensemble, X)
    return evaluate_probs(bma, y)


def evaluate_probs(bma, y):
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty test set")
    bma = np.asarray(bma, dtype=np.float64)
    acc = float(np.mean(np.argmax(bma, axis=1) == y))
    nll = float(np.mean(-np.log(np.maximum(bma[np.arange(len(y)), y], NLL_FLOOR))))
    return acc, nll


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    labeled_count: int
    test_accuracy: float
    test_mean_nll: float
    selected_ids: list
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self, timing=False):
        d = {
            "kind": "iteration",
            "iteration": self.iteration,
            "labeled_count": self.labeled_count,
            "test_accuracy": self.test_accuracy,
            "test_mean_nll": self.test_mean_nll,
            "selected_ids": list(self.selected_ids),
        }
        if timing:
            d["wall_time"] = self.wall_time
        return d


@dataclass
class LearningCurve:
    config: ExperimentConfig
    records: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    final_model: dict = field(default_factory=dict)
    labeled_ids: list = field(default_factory=list)

    @property
    def labeled_counts(self):
        return [r.labeled_count for r in self.records]

    @property
    def accuracies(self):
        return [r.test_accuracy for r in self.records]

    @property
    def final_accuracy(self):
        return self.records[-1].test_accuracy

    def summary(self):
        last = self.records[-1]
        return {
            "kind": "summary",
            "algorithm": self.config.algorithm,
            "seed": self.config.seed,
            "T": self.config.T,
            "B": self.config.B,
            "final_labeled_count": last.labeled_count,
            "final_test_accuracy": last.test_accuracy,
            "final_test_mean_nll": last.test_mean_nll,
            "final_model": self.final_model,
            "config": self.config.to_dict(),
        }

    def lines(self, timing=False):
        by_iter = {}
        for t in self.traces:
            by_iter.setdefault(t["iteration"], []).append(t)
        out = []
        for rec in self.records:
            out.extend(by_iter.get(rec.iteration, []))
            out.append(rec.to_dict(timing=timing))
        out.append(self.summary())
        return [json.dumps(o, sort_keys=False) for o in out]

    def to_jsonl(self, timing=False):
        return "\n".join(self.lines(timing=timing)) + "\n"

    def write(self, path, timing=False):
        Path(path).write_text(self.to_jsonl(timing=timing), encoding="utf-8")


class _ScoreSink:
    def __init__(self, path):
        self.rows = [] if path is not None else None
        self.path = path

    def add(self, point_ids, scores, kind, iteration):
        if self.rows is None:
            return
        self.rows.extend((int(i), float(s), kind, iteration) for i, s in zip(point_ids, scores))

    def flush(self):
        if self.rows is None:
            return
        with open(self.path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["point_id", "score", "kind", "iteration"])
            for pid, s, kind, it in self.rows:
                w.writerow([pid, repr(s), kind, it])


def _select(config, t, ensemble, scenario, labeled, labels, remaining, prior, sink, traces):
    """Pool indices chosen at iteration ``t`` (never reads validation or test labels)."""
    algo, B, seed = config.algorithm, config.B, config.seed
    remaining = np.asarray(remaining, dtype=np.int64)
    X_rem = scenario.pool.X[remaining]
    if algo == "random":
        pick = _rng.generator(seed, _rng.RANDOM_ACQ, t).choice(len(remaining), B, replace=False)
        return [int(remaining[i]) for i in pick]
    if algo == "bait":
        batch, objs = bait_greedy(ensemble.map, scenario.pool.X[labeled], X_rem, B, prior,
                                  pool_subsample=config.bait_pool_subsample, seed=seed)
        for step, (row, obj) in enumerate(zip(batch, objs[1:])):
            traces.append({"kind": "selection", "iteration": t, "step": step,
                           "chosen_id": int(remaining[row]), "objective": obj})
        return [int(remaining[r]) for r in batch]
    val_idx = validation_subsample(scenario.validation.shape[0], config.val_subsample, seed, t)
    V_X = scenario.validation.X[val_idx]
    if algo in PARBALS_ALGORITHMS:
        pcfg = ParbalsConfig(
            B=B, m=config.m, variant="map" if algo == "parbals-map-epig" else "sampled",
            val_subsample=config.val_subsample, seed=seed, iteration=t,
            coupling=config.universe_coupling,
        )
        batch, trace, _ = parbals_select(ensemble, scenario.pool.X[labeled], labels, X_rem, V_X,
                                         pcfg, prior)
        for rec in trace:
            traces.append({
                "kind": "selection", "iteration": t, "step": rec["step"],
                "chosen_id": int(remaining[rec["chosen_row"]]), "mean_score": rec["mean_score"],
                "per_universe_scores": rec["per_universe_scores"],
                "pseudo_labels": rec["pseudo_labels"],
            })
        return [int(remaining[r]) for r in batch]
    tensor, bma = predict(ensemble, X_rem)
    if algo == "batchbald":
        batch, gains = batchbald_select(tensor.probs, B)
        for step, (row, g) in enumerate(zip(batch, gains)):
            traces.append({"kind": "selection", "iteration": t, "step": step,
                           "chosen_id": int(remaining[row]), "joint_mi": g})
        return [int(remaining[r]) for r in batch]
    score_name = algo.split("-")[-1]
    if score_name == "confidence":
        scores = confidence_scores(bma)
    elif score_name == "bald":
        scores = bald_scores(tensor.probs)
    else:
        val_t, _ = predict(ensemble, V_X)
        scores = epig_scores(tensor.probs, val_t.probs)
    sink.add(remaining, scores, score_name, t)
    if config.stochastic_variant:
        rows = select_stochastic(scores, B, config.stochastic_variant, config.beta, seed=seed,
                                 iteration=t, point_ids=remaining)
    else:
        rows = select_top_b(scores, B)
    return [int(remaining[r]) for r in rows]


def run_experiment(config, scenario=None, score_csv=None):
    """Run the acquire / label / refit / evaluate loop for ``config.T`` rounds."""
    if scenario is None:
        scenario = build_scenario(config.scenario, config.seed)
    prior = Prior(config.prior_variance)
    n_pool = scenario.n_pool
    needed = config.initial_labeled + config.T * config.B
    if needed > n_pool:
        raise PoolExhaustedError(
            f"pool of {n_pool} cannot supply {config.initial_labeled} initial + "
            f"{config.T} x {config.B} selections"
        )
    if scenario.initial_labeled_indices:
        init = list(scenario.initial_labeled_indices)
        if len(init) != config.initial_labeled:
            raise ConfigError(
                f"scenario pins {len(init)} initial labels but config asks for {config.initial_labeled}"
            )
    else:
        g = _rng.generator(config.seed, _rng.INITIAL)
        init = sorted(int(i) for i in g.choice(n_pool, config.initial_labeled, replace=False))
    labeled = list(init)
    labels = scenario.oracle.query(labeled)
    in_pool = np.ones(n_pool, dtype=bool)
    in_pool[labeled] = False
    curve = LearningCurve(config)
    sink = _ScoreSink(score_csv)

    def fit(t, warm):
        try:
            return laplace_posterior(scenario.pool.X[labeled], labels, scenario.num_classes, prior,
                                     k=config.k, seed=(config.seed, t),
                                     init=None if warm is None else warm.map.theta)
        except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            raise ExperimentError(f"fit failed: {exc}", t) from exc

    start = time.perf_counter()
    ensemble = fit(0, None)
    acc, nll = evaluate(ensemble, scenario.test.X, scenario.test_labels)
    curve.records.append(IterationRecord(0, len(labeled), acc, nll, [],
                                         time.perf_counter() - start))
    for t in range(1, config.T + 1):
        start = time.perf_counter()
        remaining = np.flatnonzero(in_pool)
        try:
            batch = _select(config, t, ensemble, scenario, labeled, labels, remaining, prior,
                            sink, curve.traces)
        except (RuntimeError, np.linalg.LinAlgError) as exc:
            raise ExperimentError(f"selection failed: {exc}", t) from exc
        if len(set(batch)) != len(batch) or not np.all(in_pool[batch]):
            raise ExperimentError("selection returned duplicate or unavailable points", t)
        in_pool[batch] = False
        labeled.extend(batch)
        labels = np.concatenate([labels, scenario.oracle.query(batch)])
        ensemble = fit(t, ensemble)
        acc, nll = evaluate(ensemble, scenario.test.X, scenario.test_labels)
        curve.records.append(IterationRecord(t, len(labeled), acc, nll, list(batch),
                                             time.perf_counter() - start))
    curve.labeled_ids = labeled
    curve.final_model = {
        "num_classes": ensemble.num_classes,
        "dim": ensemble.dim,
        "k": ensemble.k,
        "map_W": ensemble.map.W.tolist(),
        "map_b": ensemble.map.b.tolist(),
    }
    sink.flush()
    return curve


# ---------------------------------------------------------------------------
# suites


@dataclass(frozen=True)
class SuiteRow:
    name: str
    finals: tuple
    mean: float
    two_se: float
    top: bool = False
    best: bool = False

    def to_dict(self):
        return {"name": self.name, "mean": self.mean, "two_se": self.two_se,
                "top": self.top, "best": self.best, "finals": list(self.finals)}


def _mean(values):
    # fsum is correctly rounded, so the result does not depend on seed order
    return math.fsum(values) / len(values)


def two_standard_errors(values):
    """``2 * sample std / sqrt(n)``."""
    values = [float(v) for v in values]
    if len(values) < 2:
        raise ValueError("need at least two values for a standard error")
    mu = _mean(values)
    var = math.fsum((v - mu) ** 2 for v in values) / (len(values) - 1)
    return 2.0 * math.sqrt(var) / math.sqrt(len(values))


def mark_top(rows):
    """Flag the best mean and every row whose ``mean +- 2SE`` interval overlaps it."""
    if not rows:
        return []
    best = max(range(len(rows)), key=lambda i: (rows[i].mean, -i))
    b = rows[best]
    out = []
    for i, r in enumerate(rows):
        overlaps = abs(r.mean - b.mean) <= r.two_se + b.two_se
        out.append(dataclasses.replace(r, top=bool(i == best or overlaps), best=i == best))
    return out


def summarize(named_finals):
    """Suite table from ``[(name, [final accuracies...]), ...]``."""
    rows = [
        SuiteRow(name, tuple(float(v) for v in finals), _mean([float(v) for v in finals]),
                 two_standard_errors(finals))
        for name, finals in named_finals
    ]
    return mark_top(rows)


def run_suite(configs, repeats, names=None, workers=None):
    """Run every config for ``repeats`` consecutive seeds starting at its own seed.

    Runs execute concurrently (``PARBALS_THREADS`` caps the workers); results
    are gathered in config/seed order so the table does not depend on scheduling.
    Returns ``(rows, curves)``.
    """
    if repeats < 2:
        raise ValueError("repeats must be >= 2 to report standard errors")
    configs = list(configs)
    names = names or [c.algorithm for c in configs]
    jobs = [(ci, c.replace(seed=c.seed + r)) for ci, c in enumerate(configs) for r in range(repeats)]
    workers = workers or thread_cap() or 1
    if workers == 1:
        curves = [run_experiment(cfg) for _, cfg in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            curves = list(pool.map(lambda job: run_experiment(job[1]), jobs))
    finals = [[] for _ in configs]
    grouped = [[] for _ in configs]
    for (ci, _), curve in zip(jobs, curves):
        finals[ci].append(curve.final_accuracy)
        grouped[ci].append(curve)
    return summarize(list(zip(names, finals))), grouped


def format_table(rows, scale=100.0):
    width = max(len(r.name) for r in rows) if rows else 4
    lines = [f"{'method':<{width}}  {'mean':>8}  {'2SE':>7}  top"]
    for r in rows:
        flag = "**" if r.best else ("*" if r.top else "")
        lines.append(f"{r.name:<{width}}  {r.mean * scale:8.2f}  {r.two_se * scale:7.2f}  {flag}")
    return "\n".join(lines)


def read_results(path):
    """Iteration records and summary of a JSONL result file."""
    records, summary = [], None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if obj.get("kind") == "iteration":
            records.append(obj)
        elif obj.get("kind") == "summary":
            summary = obj
    return records, summary
