"""Dependency-free SVG line charts for metrics CSVs.

Output bytes depend only on the input numbers, so plots of identical runs
are identical files.
"""
from __future__ import annotations

import math
from html import escape
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from ..theory import normalize_series
from .metrics import read_metrics

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
BOUND_SERIES = ("gap_estimate", "disagreement", "oracle_gap")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _num(v: float) -> str:
    return f"{v:.4g}"


def line_chart(series: dict[str, tuple], title: str, xlabel: str, ylabel: str,
               width: int = 640, height: int = 360, ylim: tuple | None = None) -> str:
    """Render ``{name: (x, y)}`` as an SVG document; NaN points are skipped."""
    left, right, top, bottom = 64, 150, 36, 48
    pw, ph = width - left - right, height - top - bottom
    xs = [np.asarray(x, float) for x, _ in series.values()]
    ys = [np.asarray(y, float) for _, y in series.values()]
    finite = [v for arr in ys for v in arr if math.isfinite(v)]
    allx = [v for arr in xs for v in arr]
    x0, x1 = (min(allx), max(allx)) if allx else (0.0, 1.0)
    if ylim is not None:
        y0, y1 = ylim
    else:
        y0, y1 = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2:.1f}" y="20" text-anchor="middle" font-size="14">'
           f'{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.1f}" y1="{top + ph}" x2="{px(t):.1f}" y2="{top + ph + 4}" '
                   'stroke="#444"/>')
        out.append(f'<text x="{px(t):.1f}" y="{top + ph + 16}" text-anchor="middle">{_num(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{left - 4}" y1="{py(t):.1f}" x2="{left + pw}" y2="{py(t):.1f}" '
                   'stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{py(t) + 4:.1f}" text-anchor="end">{_num(t)}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (name, (x, y)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = [f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, y) if math.isfinite(b)]
        if pts:
            out.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" '
                       'stroke-width="1.8"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 28}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 32}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>\n")
    return "\n".join(out)


def bound_tracking(cols: dict[str, list]) -> dict[str, np.ndarray]:
    """Per-series [0, 1] normalization of the logged bound estimates.

    Rows where a series is missing (e.g. the pretraining row has no
    discriminator yet) stay NaN.
    """
    out = {}
    for name in BOUND_SERIES:
        v = np.asarray(cols[name], dtype=float)
        ok = np.isfinite(v)
        norm = np.full_like(v, np.nan)
        if ok.any():
            norm[ok] = normalize_series(v[ok])
        out[name] = norm
    return out


def disagreement_trend(cols: dict[str, list]) -> float:
    """Spearman correlation between env steps and logged ensemble disagreement."""
    steps = np.asarray(cols["env_steps"], dtype=float)
    dis = np.asarray(cols["disagreement"], dtype=float)
    ok = np.isfinite(dis)
    if ok.sum() < 3:
        raise ValueError("need at least 3 logged disagreement values for a trend")
    return float(spearmanr(steps[ok], dis[ok]).statistic)


def _label(path: Path) -> str:
    return path.parent.name or path.stem


def plot_metrics(csv_paths, out_path) -> Path:
    """Success curves (each run plus their mean) and normalized bound series.

    Writes ``out_path`` (success rates) and ``<stem>-bounds.svg`` next to it
    (normalized bound estimates of the first run).
    """
    csv_paths = [Path(p) for p in csv_paths]
    if not csv_paths:
        raise ValueError("nothing to plot")
    runs = [read_metrics(p) for p in csv_paths]
    series = {_label(p): (c["env_steps"], c["success_rate"]) for p, c in zip(csv_paths, runs)}
    if len(series) < len(runs):  # duplicate labels: fall back to full paths
        series = {str(p): (c["env_steps"], c["success_rate"]) for p, c in zip(csv_paths, runs)}
    if len(runs) > 1:
        n = min(len(c["env_steps"]) for c in runs)
        mean = np.mean([np.asarray(c["success_rate"][:n]) for c in runs], axis=0)
        series["mean"] = (runs[0]["env_steps"][:n], mean)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(line_chart(series, "Evaluation success rate", "environment steps",
                                   "success rate", ylim=(0.0, 1.0)), encoding="utf-8")
    norm = bound_tracking(runs[0])
    bounds = {k: (runs[0]["env_steps"], v) for k, v in norm.items()}
    bounds_path = out_path.with_name(out_path.stem + "-bounds.svg")
    bounds_path.write_text(line_chart(bounds, "Bound estimates (normalized)", "environment steps",
                                      "normalized value", ylim=(0.0, 1.0)), encoding="utf-8")
    return out_path
