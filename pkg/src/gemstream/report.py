"""Cross-seed summaries and a dependency-free SVG of the learning curves.

``summary.csv`` has one row per method: median and quartiles of the final
validation error over seeds, and the median final cumulative step count.

``curves.svg`` has two panels, one polyline per method (median over seeds):
validation accuracy against the epoch position in the stream, and validation
error against cumulative SGD steps.  AllData's retraining epochs at split
``n`` are squeezed into that split's window so every method shares one
x-axis.
"""

from __future__ import annotations

import csv
import io
from xml.sax.saxutils import escape

import numpy as np

from .analysis import final_error, median_iqr
from .continual import MetricsLog

SUMMARY_COLUMNS = [
    "method",
    "seeds",
    "val_err_median",
    "val_err_q1",
    "val_err_q3",
    "cum_steps_final",
]
PALETTE = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"]


def summarize(logs: dict[str, list[MetricsLog]]) -> list[dict]:
    rows = []
    for method, runs in logs.items():
        med, q1, q3 = median_iqr([final_error(log) for log in runs])
        steps = int(np.median([log.final().cum_steps for log in runs]))
        rows.append(
            {
                "method": method,
                "seeds": len(runs),
                "val_err_median": med,
                "val_err_q1": q1,
                "val_err_q3": q3,
                "cum_steps_final": steps,
            }
        )
    return rows


def summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow(
            [
                r["method"],
                r["seeds"],
                f"{r['val_err_median']:.6g}",
                f"{r['val_err_q1']:.6g}",
                f"{r['val_err_q3']:.6g}",
                r["cum_steps_final"],
            ]
        )
    return buf.getvalue()


def epoch_positions(log: MetricsLog, epochs_d0: int, epochs_per_split: int) -> list[float]:
    """x position of every epoch row.

    Seed epochs sit at 1..E0; split ``n`` occupies (E0 + (n-1)eps, E0 + n eps].
    A method running ``E_n`` epochs in that split is spread evenly over it.
    """
    counts: dict[int, int] = {}
    for r in log.epoch_rows():
        counts[r.split] = max(counts.get(r.split, 0), r.epoch)
    xs = []
    for r in log.epoch_rows():
        if r.split == 0:
            xs.append(float(r.epoch))
        else:
            base = epochs_d0 + (r.split - 1) * epochs_per_split
            xs.append(base + r.epoch * epochs_per_split / counts[r.split])
    return xs


def _median_curve(runs: list[MetricsLog], fn) -> tuple[np.ndarray, np.ndarray]:
    pairs = [fn(log) for log in runs]
    n = min(len(x) for x, _ in pairs)
    xs = np.median([np.asarray(x[:n], dtype=float) for x, _ in pairs], axis=0)
    ys = np.median([np.asarray(y[:n], dtype=float) for _, y in pairs], axis=0)
    return xs, ys


class _Panel:
    def __init__(self, left, top, width, height, x_range, y_range, title, x_label, y_label):
        self.left, self.top, self.width, self.height = left, top, width, height
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        self.title, self.x_label, self.y_label = title, x_label, y_label

    def point(self, x, y):
        fx = (x - self.x0) / ((self.x1 - self.x0) or 1.0)
        fy = (y - self.y0) / ((self.y1 - self.y0) or 1.0)
        return self.left + fx * self.width, self.top + (1.0 - fy) * self.height

    def frame(self) -> list[str]:
        l, t, w, h = self.left, self.top, self.width, self.height
        out = [
            f'<rect x="{l}" y="{t}" width="{w}" height="{h}" fill="none" stroke="#333"/>',
            f'<text x="{l + w / 2}" y="{t - 10}" text-anchor="middle" font-size="14">{escape(self.title)}</text>',
            f'<text x="{l + w / 2}" y="{t + h + 36}" text-anchor="middle" font-size="12">{escape(self.x_label)}</text>',
            f'<text x="{l - 48}" y="{t + h / 2}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 {l - 48} {t + h / 2})">{escape(self.y_label)}</text>',
        ]
        for frac in np.linspace(0.0, 1.0, 5):
            xv = self.x0 + frac * (self.x1 - self.x0)
            yv = self.y0 + frac * (self.y1 - self.y0)
            px, _ = self.point(xv, self.y0)
            _, py = self.point(self.x0, yv)
            out.append(f'<text x="{px:.1f}" y="{t + h + 16}" text-anchor="middle" font-size="10">{xv:.4g}</text>')
            out.append(f'<text x="{l - 6}" y="{py + 3:.1f}" text-anchor="end" font-size="10">{yv:.3g}</text>')
            out.append(f'<line x1="{l}" y1="{py:.1f}" x2="{l + w}" y2="{py:.1f}" stroke="#ddd"/>')
        return out

    def polyline(self, xs, ys, color) -> str:
        pts = " ".join("{:.2f},{:.2f}".format(*self.point(x, y)) for x, y in zip(xs, ys))
        return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'


def _range(values, pad=0.02):
    lo, hi = float(np.min(values)), float(np.max(values))
    span = (hi - lo) or 1.0
    return lo - pad * span, hi + pad * span


def curves_svg(logs: dict[str, list[MetricsLog]], epochs_d0: int, epochs_per_split: int) -> str:
    acc_curves, cost_curves = {}, {}
    for method, runs in logs.items():
        acc_curves[method] = _median_curve(
            runs,
            lambda log: (
                epoch_positions(log, epochs_d0, epochs_per_split),
                [r.val_acc for r in log.epoch_rows()],
            ),
        )
        cost_curves[method] = _median_curve(
            runs, lambda log: ([r.cum_steps for r in log.rows], [r.val_err for r in log.rows])
        )

    width, height = 1160, 440
    acc = _Panel(
        70, 40, 380, 320,
        _range(np.concatenate([x for x, _ in acc_curves.values()]), 0.0),
        _range(np.concatenate([y for _, y in acc_curves.values()])),
        "Validation accuracy vs. epochs", "epoch (stream position)", "validation accuracy",
    )
    cost = _Panel(
        560, 40, 380, 320,
        _range(np.concatenate([x for x, _ in cost_curves.values()]), 0.0),
        _range(np.concatenate([y for _, y in cost_curves.values()])),
        "Validation error vs. cumulative steps", "cumulative SGD steps", "validation error",
    )
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    parts += acc.frame() + cost.frame()
    for i, method in enumerate(logs):
        color = PALETTE[i % len(PALETTE)]
        parts.append(acc.polyline(*acc_curves[method], color))
        parts.append(cost.polyline(*cost_curves[method], color))
        y = 60 + 16 * i
        parts.append(f'<line x1="960" y1="{y}" x2="980" y2="{y}" stroke="{color}" stroke-width="3"/>')
        parts.append(f'<text x="986" y="{y + 4}" font-size="11">{escape(method)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
