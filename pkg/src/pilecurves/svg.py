"""Dependency-free SVG charts: line/scatter plots, violins, beeswarms and bars."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"]

WIDTH = 720
HEIGHT = 480
MARGIN = (70, 30, 50, 60)  # left, right, top, bottom


def _escape(text: str) -> str:
    return (
        str(text)
        .replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _range(values, pad: float = 0.05) -> tuple[float, float]:
    arr = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    if arr.size == 0:
        return 0.0, 1.0
    lo, hi = float(arr.min()), float(arr.max())
    if hi == lo:
        return lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - pad * span, hi + pad * span


class _Canvas:
    def __init__(self, title: str, x_label: str, y_label: str, xlim, ylim, invert_y: bool = False):
        self.parts: list[str] = []
        self.xlim, self.ylim = xlim, ylim
        self.invert_y = invert_y
        left, right, top, bottom = MARGIN
        self.x0, self.x1 = left, WIDTH - right
        self.y0, self.y1 = top, HEIGHT - bottom
        self.parts.append(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">'
        )
        self.parts.append(f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
        self.parts.append(
            f'<text x="{WIDTH / 2:.1f}" y="28" text-anchor="middle" font-size="16" '
            f'font-family="sans-serif">{_escape(title)}</text>'
        )
        self._axes(x_label, y_label)

    def sx(self, x: float) -> float:
        lo, hi = self.xlim
        return self.x0 + (x - lo) / (hi - lo) * (self.x1 - self.x0)

    def sy(self, y: float) -> float:
        lo, hi = self.ylim
        frac = (y - lo) / (hi - lo)
        if self.invert_y:
            return self.y0 + frac * (self.y1 - self.y0)
        return self.y1 - frac * (self.y1 - self.y0)

    def _axes(self, x_label: str, y_label: str) -> None:
        p = self.parts
        p.append(
            f'<rect x="{self.x0}" y="{self.y0}" width="{self.x1 - self.x0}" height="{self.y1 - self.y0}" '
            f'fill="none" stroke="#333"/>'
        )
        for t in _nice_ticks(*self.xlim):
            x = self.sx(t)
            p.append(f'<line x1="{x:.1f}" y1="{self.y1}" x2="{x:.1f}" y2="{self.y1 + 5}" stroke="#333"/>')
            p.append(f'<text x="{x:.1f}" y="{self.y1 + 18}" text-anchor="middle" font-size="11" '
                     f'font-family="sans-serif">{t:g}</text>')
        for t in _nice_ticks(*self.ylim):
            y = self.sy(t)
            p.append(f'<line x1="{self.x0 - 5}" y1="{y:.1f}" x2="{self.x0}" y2="{y:.1f}" stroke="#333"/>')
            p.append(f'<text x="{self.x0 - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="11" '
                     f'font-family="sans-serif">{t:g}</text>')
        p.append(f'<text x="{(self.x0 + self.x1) / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle" '
                 f'font-size="13" font-family="sans-serif">{_escape(x_label)}</text>')
        ym = (self.y0 + self.y1) / 2
        p.append(f'<text x="18" y="{ym:.1f}" text-anchor="middle" font-size="13" font-family="sans-serif" '
                 f'transform="rotate(-90 18 {ym:.1f})">{_escape(y_label)}</text>')

    def polyline(self, xs, ys, color: str, dashed: bool = False) -> None:
        pts = " ".join(f"{self.sx(x):.2f},{self.sy(y):.2f}" for x, y in zip(xs, ys) if np.isfinite(x) and np.isfinite(y))
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')

    def circles(self, xs, ys, color: str, r: float = 2.5) -> None:
        for x, y in zip(xs, ys):
            if np.isfinite(x) and np.isfinite(y):
                self.parts.append(f'<circle cx="{self.sx(x):.2f}" cy="{self.sy(y):.2f}" r="{r}" '
                                  f'fill="{color}" fill-opacity="0.6"/>')

    def legend(self, labels: Sequence[str], colors: Sequence[str]) -> None:
        for i, (lab, col) in enumerate(zip(labels, colors)):
            y = self.y0 + 14 + 16 * i
            self.parts.append(f'<rect x="{self.x1 - 150}" y="{y - 9}" width="10" height="10" fill="{col}"/>')
            self.parts.append(f'<text x="{self.x1 - 135}" y="{y}" font-size="11" '
                              f'font-family="sans-serif">{_escape(lab)}</text>')

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.parts + ["</svg>"]) + "\n")
        return path


def line_chart(path, series: Sequence[tuple[str, Sequence[float], Sequence[float]]], title: str,
               x_label: str, y_label: str, markers: bool = False, invert_y: bool = False,
               scatter: Sequence[tuple[str, Sequence[float], Sequence[float]]] = ()) -> Path:
    """Lines for ``series`` plus optional point clouds, each given as (label, xs, ys)."""
    all_x = [x for _, xs, _ in list(series) + list(scatter) for x in xs]
    all_y = [y for _, _, ys in list(series) + list(scatter) for y in ys]
    c = _Canvas(title, x_label, y_label, _range(all_x), _range(all_y), invert_y=invert_y)
    labels, colors = [], []
    for i, (label, xs, ys) in enumerate(scatter):
        col = COLORS[(i + len(series)) % len(COLORS)]
        c.circles(xs, ys, col)
        labels.append(label)
        colors.append(col)
    for i, (label, xs, ys) in enumerate(series):
        col = COLORS[i % len(COLORS)]
        c.polyline(xs, ys, col)
        if markers:
            c.circles(xs, ys, col, r=2)
        labels.append(label)
        colors.append(col)
    c.legend(labels, colors)
    return c.write(path)


def parity_plot(path, groups: Sequence[tuple[str, Sequence[float], Sequence[float]]], title: str) -> Path:
    """Observed (x) vs predicted (y) per group with the 1:1 line."""
    vals = [v for _, o, p in groups for v in list(o) + list(p)]
    lim = _range(vals)
    c = _Canvas(title, "observed p/(gamma' z D)", "predicted p/(gamma' z D)", lim, lim)
    c.polyline(lim, lim, "#333", dashed=True)
    labels, colors = [], []
    for i, (label, obs, pred) in enumerate(groups):
        col = COLORS[i % len(COLORS)]
        c.circles(obs, pred, col, r=2)
        labels.append(label)
        colors.append(col)
    c.legend(labels, colors)
    return c.write(path)


def violin_plot(path, names: Sequence[str], summaries: Sequence[dict], title: str = "Feature distributions") -> Path:
    """Violins from normalized KDE grids with box, whiskers and median dot."""
    n = len(names)
    c = _Canvas(title, "", "normalized value", (0.0, float(n)), (-0.05, 1.05))
    for i, (name, s) in enumerate(zip(names, summaries)):
        cx = i + 0.5
        lo, hi = s["min"], s["max"]
        span = (hi - lo) or 1.0
        norm = lambda v: (v - lo) / span  # noqa: E731
        grid = s["kde"]["grid"]
        dens = s["kde"]["density"]
        if grid:
            dmax = max(dens) or 1.0
            half = [0.4 * d / dmax for d in dens]
            right = [f"{c.sx(cx + h):.2f},{c.sy(g):.2f}" for g, h in zip(grid, half)]
            left = [f"{c.sx(cx - h):.2f},{c.sy(g):.2f}" for g, h in reversed(list(zip(grid, half)))]
            c.parts.append(f'<polygon points="{" ".join(right + left)}" fill="{COLORS[i % len(COLORS)]}" '
                           f'fill-opacity="0.45" stroke="#333" stroke-width="0.5"/>')
        c.parts.append(f'<line x1="{c.sx(cx):.2f}" y1="{c.sy(norm(s["whisker_low"])):.2f}" '
                       f'x2="{c.sx(cx):.2f}" y2="{c.sy(norm(s["whisker_high"])):.2f}" stroke="#111"/>')
        y_top, y_bot = c.sy(norm(s["Q3"])), c.sy(norm(s["Q1"]))
        c.parts.append(f'<rect x="{c.sx(cx - 0.04):.2f}" y="{y_top:.2f}" width="{c.sx(cx + 0.04) - c.sx(cx - 0.04):.2f}" '
                       f'height="{max(y_bot - y_top, 0.5):.2f}" fill="white" stroke="#111"/>')
        c.parts.append(f'<circle cx="{c.sx(cx):.2f}" cy="{c.sy(norm(s["median"])):.2f}" r="3" fill="#111"/>')
        c.parts.append(f'<text x="{c.sx(cx):.2f}" y="{c.y1 + 34}" text-anchor="middle" font-size="11" '
                       f'font-family="sans-serif">{_escape(name)}</text>')
    return c.write(path)


def _blue_red(t: float) -> str:
    t = min(1.0, max(0.0, t))
    r = int(30 + 225 * t)
    b = int(255 - 225 * t)
    return f"#{r:02x}40{b:02x}"


def beeswarm(path, names: Sequence[str], X: np.ndarray, V: np.ndarray, order: Sequence[int],
             title: str = "SHAP summary", seed: int = 0) -> Path:
    """One row per feature (most important on top); x is the SHAP value, colour the normalized feature value."""
    X = np.asarray(X, dtype=float)
    V = np.asarray(V, dtype=float)
    n_feat = len(order)
    c = _Canvas(title, "SHAP value", "", _range(V.ravel()), (-0.5, n_feat - 0.5))
    rng = np.random.default_rng(seed)
    c.polyline([0.0, 0.0], [-0.5, n_feat - 0.5], "#999", dashed=True)
    for row, j in enumerate(order):
        level = n_feat - 1 - row
        col = X[:, j]
        lo, hi = col.min(), col.max()
        t = (col - lo) / (hi - lo) if hi > lo else np.full_like(col, 0.5)
        jitter = rng.uniform(-0.3, 0.3, size=col.size)
        for v, tt, jj in zip(V[:, j], t, jitter):
            c.parts.append(f'<circle cx="{c.sx(v):.2f}" cy="{c.sy(level + jj):.2f}" r="2" '
                           f'fill="{_blue_red(tt)}" fill-opacity="0.7"/>')
        c.parts.append(f'<text x="{c.x0 + 4}" y="{c.sy(level) - 12:.2f}" font-size="11" '
                       f'font-family="sans-serif">{_escape(names[j])}</text>')
    return c.write(path)


def bar_chart(path, labels: Sequence[str], values: Sequence[float], title: str, x_label: str = "") -> Path:
    n = len(labels)
    vmax = max([float(v) for v in values] + [1e-12])
    c = _Canvas(title, x_label, "", (0.0, vmax * 1.05), (-0.5, n - 0.5))
    for i, (lab, v) in enumerate(zip(labels, values)):
        level = n - 1 - i
        y_top = c.sy(level + 0.35)
        y_bot = c.sy(level - 0.35)
        c.parts.append(f'<rect x="{c.x0:.2f}" y="{y_top:.2f}" width="{c.sx(v) - c.x0:.2f}" '
                       f'height="{y_bot - y_top:.2f}" fill="{COLORS[0]}"/>')
        c.parts.append(f'<text x="{c.x0 + 4}" y="{(y_top + y_bot) / 2 + 4:.2f}" font-size="11" fill="white" '
                       f'font-family="sans-serif">{_escape(lab)}</text>')
    return c.write(path)
