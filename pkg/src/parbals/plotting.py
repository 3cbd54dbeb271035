"""SVG learning curves from JSONL result files."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .harness import read_results


def load_curves(paths):
    """Group result files by algorithm: ``{algorithm: [(counts, accuracies), ...]}``."""
    curves = defaultdict(list)
    for path in paths:
        records, summary = read_results(path)
        if not records:
            raise ValueError(f"{path}: no iteration records")
        name = summary["algorithm"] if summary else str(path)
        curves[name].append((
            np.array([r["labeled_count"] for r in records]),
            np.array([r["test_accuracy"] for r in records]),
        ))
    return dict(curves)


def plot_curves(curves, out_path, metric_label="test accuracy"):
    """Mean line with a ±1 standard-deviation band across seeds, one line per algorithm."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted(curves):
        runs = curves[name]
        length = min(len(c) for c, _ in runs)
        x = runs[0][0][:length]
        ys = np.stack([a[:length] for _, a in runs])
        mean = ys.mean(axis=0)
        (line,) = ax.plot(x, mean, label=f"{name} (n={len(runs)})")
        if len(runs) > 1:
            sd = ys.std(axis=0, ddof=1)
            ax.fill_between(x, mean - sd, mean + sd, color=line.get_color(), alpha=0.2, lw=0)
    ax.set_xlabel("labeled examples")
    ax.set_ylabel(metric_label)
    ax.legend(fontsize="small")
    fig.tight_layout()
    # fixed hash salt keeps the SVG stable between runs
    matplotlib.rcParams["svg.hashsalt"] = "parbals"
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
