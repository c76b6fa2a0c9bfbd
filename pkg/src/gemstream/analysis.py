"""Summaries of metrics logs: final errors, forgetting and compute ratios."""

from __future__ import annotations

import numpy as np

from .continual import MetricsLog


def final_error(log: MetricsLog) -> float:
    return log.final().val_err


def split_trajectories(log: MetricsLog) -> dict[int, list[float]]:
    """Validation accuracy while training on each split.

    Each trajectory starts with the accuracy the model had when the split
    arrived (the previous split's summary row), followed by one value per
    epoch.
    """
    ends = {r.split: r.val_acc for r in log.summary_rows()}
    out: dict[int, list[float]] = {}
    for r in log.epoch_rows():
        if r.split == 0:
            continue
        out.setdefault(r.split, [ends[r.split - 1]]).append(r.val_acc)
    return out


def max_within_split_drop(log: MetricsLog) -> float:
    """Largest fall from a running peak to a later value inside one split."""
    worst = 0.0
    for traj in split_trajectories(log).values():
        peak = -np.inf
        for acc in traj:
            peak = max(peak, acc)
            worst = max(worst, peak - acc)
    return worst


def split_end_accuracies(log: MetricsLog) -> list[float]:
    return [r.val_acc for r in log.summary_rows()]


def max_split_end_decrease(log: MetricsLog) -> float:
    """Largest drop between consecutive split-end accuracies (seed end included)."""
    ends = split_end_accuracies(log)
    return max([0.0] + [a - b for a, b in zip(ends[:-1], ends[1:])])


def post_seed_steps(log: MetricsLog) -> int:
    ends = log.summary_rows()
    return ends[-1].cum_steps - ends[0].cum_steps


def median_iqr(values) -> tuple[float, float, float]:
    q1, med, q3 = np.percentile(np.asarray(values, dtype=np.float64), [25, 50, 75])
    return float(med), float(q1), float(q3)
