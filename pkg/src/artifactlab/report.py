"""Reward-curve output: smoothed CSV and a dependency-free SVG line chart."""

from __future__ import annotations

import csv
import io
from html import escape

import numpy as np

from .ddpo import TrainingHistory


def moving_average(values, window: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if window <= 1 or len(v) == 0:
        return v.copy()
    c = np.cumsum(np.insert(v, 0, 0.0))
    out = np.empty_like(v)
    for i in range(len(v)):
        lo = max(0, i - window + 1)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def curve_csv(history: TrainingHistory, window: int = 10, batch_size: int = 24) -> str:
    """Per-batch rewards with cumulative classifier queries and a trailing moving average."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["batch", "queries", "mean_reward", "smoothed_reward", "artifact_rate"])
    sm = moving_average(history.mean_reward, window)
    for i, (r, s, a) in enumerate(zip(history.mean_reward, sm, history.artifact_rate)):
        w.writerow([i, (i + 1) * batch_size, f"{r:.6f}", f"{s:.6f}", f"{a:.6f}"])
    return buf.getvalue()


def svg_line_chart(series: dict[str, list[float]], title: str = "", xlabel: str = "batch", ylabel: str = "reward",
                   width: int = 640, height: int = 360) -> str:
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    left, right, top, bottom = 60, 20, 30, 45
    pw, ph = width - left - right, height - top - bottom
    all_vals = np.concatenate([np.asarray(v, dtype=float) for v in series.values()]) if series else np.zeros(1)
    all_vals = all_vals[np.isfinite(all_vals)]
    lo, hi = (float(all_vals.min()), float(all_vals.max())) if all_vals.size else (0.0, 1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    n = max((len(v) for v in series.values()), default=1)

    def px(i):
        return left + pw * (i / max(n - 1, 1))

    def py(v):
        return top + ph * (1 - (v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        parts.append(f'<text x="{left - 6}" y="{py(v) + 4:.1f}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.3g}</text>')
        parts.append(f'<line x1="{left}" y1="{py(v):.1f}" x2="{left + pw}" y2="{py(v):.1f}" stroke="#ddd"/>')
    for k in range(5):
        i = (n - 1) * k / 4
        parts.append(f'<text x="{px(i):.1f}" y="{top + ph + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{i:.0f}</text>')
    parts.append(f'<text x="{left + pw / 2:.1f}" y="{height - 6}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>')
    parts.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for j, (name, vals) in enumerate(series.items()):
        pts = " ".join(f"{px(i):.1f},{py(v):.1f}" for i, v in enumerate(vals) if np.isfinite(v))
        color = colors[j % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{left + 10}" y="{top + 14 + 14 * j}" font-family="sans-serif" font-size="11" fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def reward_curve_svg(history: TrainingHistory, window: int = 10) -> str:
    return svg_line_chart(
        {"mean reward": history.mean_reward, f"moving average ({window})": list(moving_average(history.mean_reward, window))},
        title="Artifact classification reward during fine-tuning",
    )
