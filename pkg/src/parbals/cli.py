"""Command-line entry point: ``parbals run|suite|oracle-check|plot|make-synthetic``.

Exit codes: 0 success, 1 validation error (bad flags, bad config, missing
files), 2 runtime failure (fit divergence, exhausted pool, failed oracle).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import oracles
from .bayes_linear import ConvergenceError
from .dataset import DataError, save_scenario
from .harness import (
    ALGORITHMS, ConfigError, ExperimentConfig, ExperimentError, PoolExhaustedError,
    build_scenario, format_table, run_experiment, run_suite,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_config_flags(p):
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--scenario", help="scenario manifest.json, or a JSON file holding a scenario object")
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--T", "--t", dest="T", type=int)
    p.add_argument("--B", "--b", dest="B", type=int)
    p.add_argument("--initial-labeled", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--prior-variance", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--val-subsample", type=int)
    p.add_argument("--universe-coupling", choices=("independent", "per_universe_weight"))
    p.add_argument("--bait-pool-subsample", type=int)


FLAG_FIELDS = ("algorithm", "T", "B", "initial_labeled", "k", "m", "beta", "prior_variance",
               "seed", "val_subsample", "universe_coupling", "bait_pool_subsample")


def _scenario_source(arg):
    path = Path(arg)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(data, dict) and "format" in data:
        return {"type": "manifest", "path": str(path)}
    if isinstance(data, dict) and "type" in data:
        return data
    raise ConfigError(f"{path}: neither a scenario manifest nor a scenario object")


def config_from_args(args):
    data = {}
    if args.config:
        base = ExperimentConfig.from_json(args.config)
        data = base.to_dict()
    if args.scenario:
        data["scenario"] = _scenario_source(args.scenario)
    for name in FLAG_FIELDS:
        value = getattr(args, name)
        if value is not None:
            data[name] = value
    if "algorithm" in data and data["algorithm"] not in ("parbals-epig", "parbals-map-epig"):
        # a config file for one algorithm may be reused with --algorithm overridden
        if args.m is None:
            data["m"] = None
    return ExperimentConfig.from_dict(data)


def cmd_run(args):
    config = config_from_args(args)
    curve = run_experiment(config, score_csv=args.scores_csv)
    if args.no_trace:
        curve.traces = []
    text = curve.to_jsonl(timing=args.timing)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    last = curve.records[-1]
    print(f"{config.algorithm} seed={config.seed}: labeled={last.labeled_count} "
          f"accuracy={last.test_accuracy:.4f} nll={last.test_mean_nll:.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_suite(args):
    if args.repeats < 2:
        raise ConfigError("--repeats must be >= 2")
    algorithms = args.algorithms.split(",") if args.algorithms else None
    if algorithms and args.algorithm is None:
        args.algorithm = algorithms[0]
        if args.m is not None and algorithms[0] not in ("parbals-epig", "parbals-map-epig"):
            args.algorithm = next((a for a in algorithms if a.startswith("parbals")), algorithms[0])
    config = config_from_args(args)
    algorithms = algorithms or [config.algorithm]
    configs = []
    for algo in algorithms:
        changes = {"algorithm": algo}
        if algo not in ("parbals-epig", "parbals-map-epig"):
            changes["m"] = None
        elif config.algorithm not in ("parbals-epig", "parbals-map-epig"):
            changes["m"] = args.m
        if not algo.split("-")[0] in ("power", "softmax", "softrank"):
            changes["beta"] = None
        configs.append(ExperimentConfig.from_dict({**config.to_dict(), **changes}))
    rows, curves = run_suite(configs, args.repeats, names=algorithms)
    print(format_table(rows))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for algo, group in zip(algorithms, curves):
            for curve in group:
                curve.write(out / f"{algo}-seed{curve.config.seed}.jsonl")
    return EXIT_OK


def cmd_oracle_check(args):
    names = list(oracles.SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        kwargs = {"trials": args.trials} if name == "parbals-mc" and args.trials else {}
        result = oracles.SUITES[name](**kwargs)
        print(result.report(), flush=True)
        ok &= result.passed
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_plot(args):
    from .plotting import load_curves, plot_curves

    paths = [Path(p) for p in args.results]
    for p in paths:
        if not p.exists():
            raise ConfigError(f"results file not found: {p}")
    plot_curves(load_curves(paths), args.out)
    print(f"wrote {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_make_synthetic(args):
    source = {"type": "synthetic", "num_classes": args.num_classes, "dim": args.dim,
              "weight_scale": args.weight_scale, "n_pool": args.n_pool, "n_val": args.n_val,
              "n_test": args.n_test, "kind": args.kind}
    if args.class_priors:
        source["class_priors"] = [float(v) for v in args.class_priors.split(",")]
    scenario = build_scenario(source, args.seed)
    path = save_scenario(scenario, args.out_dir)
    print(path)
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="parbals", description="Bayesian active learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one experiment and write JSONL results")
    _add_config_flags(run)
    run.add_argument("--out", help="JSONL output path (default: stdout)")
    run.add_argument("--scores-csv", help="write every acquisition score to this CSV")
    run.add_argument("--no-trace", action="store_true",
                     help="drop ParBaLS selection traces from the JSONL")
    run.add_argument("--timing", action="store_true", help="include wall_time in records")
    run.set_defaults(func=cmd_run)

    suite = sub.add_parser("suite", help="multi-seed comparison table")
    _add_config_flags(suite)
    suite.add_argument("--algorithms", help="comma-separated algorithm list")
    suite.add_argument("--repeats", type=int, default=5)
    suite.add_argument("--out-dir", help="write one JSONL per run here")
    suite.set_defaults(func=cmd_suite)

    check = sub.add_parser("oracle-check", help="run brute-force oracle batteries")
    check.add_argument("--suite", choices=tuple(oracles.SUITES) + ("all",), default="all")
    check.add_argument("--trials", type=int, help="Monte Carlo trials for parbals-mc")
    check.set_defaults(func=cmd_oracle_check)

    plot = sub.add_parser("plot", help="SVG learning curves from JSONL results")
    plot.add_argument("results", nargs="+")
    plot.add_argument("--out", required=True)
    plot.set_defaults(func=cmd_plot)

    synth = sub.add_parser("make-synthetic", help="write a synthetic scenario manifest")
    synth.add_argument("--out-dir", required=True)
    synth.add_argument("--num-classes", type=int, default=2)
    synth.add_argument("--dim", type=int, default=5)
    synth.add_argument("--weight-scale", type=float, default=1.0)
    synth.add_argument("--n-pool", type=int, default=200)
    synth.add_argument("--n-val", type=int, default=50)
    synth.add_argument("--n-test", type=int, default=200)
    synth.add_argument("--class-priors")
    synth.add_argument("--kind", choices=("plain", "one-vs-all", "subpop-shift"), default="plain")
    synth.add_argument("--seed", type=int, default=0)
    synth.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, DataError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConvergenceError, PoolExhaustedError, ExperimentError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
