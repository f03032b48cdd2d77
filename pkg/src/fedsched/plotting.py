"""Learning-curve rendering from metrics CSV files.

One labeled series per input file: x is the cumulative number of training
episodes, y the evaluation-phase mean reward averaged across seeds. This is
a pure rendering of the CSV contents; the only computation is the cross-seed
mean, and seeds that diverged (phase == failed) are excluded and flagged.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

from .harness import MetricsRow, read_metrics

__all__ = ["eval_curve", "plot_curves"]

logger = logging.getLogger(__name__)


def eval_curve(rows: Sequence[MetricsRow]) -> tuple[list[int], list[float], set[int]]:
    """Cross-seed mean evaluation reward per block.

    Returns (cumulative training episodes per block, mean eval reward per
    block, excluded seeds). A seed is excluded entirely if it has any failed
    row or does not cover every block.
    """
    failed = {r.seed for r in rows if r.phase == "failed"}
    blocks = sorted({r.block for r in rows if r.phase == "eval"})
    eval_rows: dict[tuple[int, int], MetricsRow] = {
        (r.seed, r.block): r for r in rows if r.phase == "eval" and r.seed not in failed
    }
    seeds = {r.seed for r in rows} - failed
    complete_seeds = {
        s for s in seeds if all((s, b) in eval_rows for b in blocks)
    }
    excluded = {r.seed for r in rows} - complete_seeds
    if not complete_seeds:
        raise ValueError("no seed covers every evaluation block")

    train_episodes: dict[int, int] = {}
    for r in rows:
        if r.phase == "train" and r.seed in complete_seeds:
            train_episodes.setdefault(r.block, r.episodes)
    xs: list[int] = []
    cumulative = 0
    for b in blocks:
        cumulative += train_episodes.get(b, 0)
        xs.append(cumulative)
    ys = [
        sum(eval_rows[(s, b)].mean_extrinsic_reward for s in complete_seeds)
        / len(complete_seeds)
        for b in blocks
    ]
    return xs, ys, excluded


def plot_curves(inputs: Sequence, out) -> None:
    """Render the eval-reward curves of one or more metrics files to a
    vector-graphics file (format from the output extension, e.g. .svg).

    Series labels come from the file stems (a ``metrics_`` prefix is
    stripped). All inputs must share the same block structure.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not inputs:
        raise ValueError("at least one metrics file is required")
    series = []
    reference_xs = None
    for path in inputs:
        rows = read_metrics(path)
        xs, ys, excluded = eval_curve(rows)
        if excluded:
            logger.warning("%s: excluding seeds %s from curve", path, sorted(excluded))
        if reference_xs is None:
            reference_xs = xs
        elif xs != reference_xs:
            raise ValueError(
                f"mismatched block structure: {path} has eval points {xs}, "
                f"expected {reference_xs}"
            )
        label = Path(path).stem
        if label.startswith("metrics_"):
            label = label[len("metrics_") :]
        series.append((label, xs, ys))

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, xs, ys in series:
        ax.plot(xs, ys, marker="o", markersize=3, label=label)
    ax.set_xlabel("training episodes")
    ax.set_ylabel("mean evaluation reward")
    ax.set_ylim(-0.05, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
