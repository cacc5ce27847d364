"""Standalone SVG line charts for result tables (no plotting library needed)."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from ..errors import ColumnMissing, DataError
from .emit import ResultTable

WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 70, "right": 180, "top": 40, "bottom": 60}
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _nice_ticks(lo, hi, count=5):
    if hi == lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 10))
        t += step
    return ticks


def _numeric(rows, col):
    out = []
    for r in rows:
        v = r.get(col)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise DataError(f"column {col!r} holds a non-numeric value {v!r}")
        out.append(float(v))
    return out


def series_points(table: ResultTable, x: str, ys, group: str | None = None) -> list[tuple[str, list]]:
    """(label, [(x, y), ...]) for every plotted series, sorted by x.

    ``group`` names one column, or several joined by commas, whose distinct
    values split each y column into separate series.
    """
    ys = [ys] if isinstance(ys, str) else list(ys)
    gcols = [g.strip() for g in group.split(",")] if group else []
    for col in [x, *ys] + gcols:
        if col not in table.columns:
            raise ColumnMissing(f"column {col!r} not in table (have {', '.join(table.columns)})")

    def key(r):
        return tuple(r.get(c) for c in gcols)

    groups = sorted({key(r) for r in table.rows}, key=lambda k: tuple((str(type(v)), v) for v in k))
    series = []
    for y in ys:
        for g in groups:
            rows = [r for r in table.rows if key(r) == g]
            pts = sorted(zip(_numeric(rows, x), _numeric(rows, y)))
            label = y if not gcols else f"{y} ({', '.join(f'{c}={v}' for c, v in zip(gcols, g))})"
            series.append((label, pts))
    return series


def plot_svg(table: ResultTable, x: str, ys, out, group: str | None = None, title: str | None = None) -> Path:
    """Line chart of ``ys`` against ``x``, one series per y column (and per ``group`` value)."""
    series = series_points(table, x, ys, group)
    all_pts = [p for _, pts in series for p in pts]
    xs = [p[0] for p in all_pts] or [0.0]
    yv = [p[1] for p in all_pts if math.isfinite(p[1])] or [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(yv), max(yv)
    if x0 == x1:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y0 == y1:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (1 - (v - y0) / (y1 - y0)) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
             f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
             f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        parts.append(f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    bx, by = MARGIN["left"], MARGIN["top"] + ph
    parts.append(f'<line class="axis" x1="{bx}" y1="{by}" x2="{bx + pw}" y2="{by}" stroke="black"/>')
    parts.append(f'<line class="axis" x1="{bx}" y1="{MARGIN["top"]}" x2="{bx}" y2="{by}" stroke="black"/>')
    for t in _nice_ticks(x0, x1):
        parts.append(f'<line x1="{sx(t):.2f}" y1="{by}" x2="{sx(t):.2f}" y2="{by + 5}" stroke="black"/>')
        parts.append(f'<text x="{sx(t):.2f}" y="{by + 18}" text-anchor="middle">{t:g}</text>')
    for t in _nice_ticks(y0, y1):
        parts.append(f'<line x1="{bx - 5}" y1="{sy(t):.2f}" x2="{bx}" y2="{sy(t):.2f}" stroke="black"/>')
        parts.append(f'<text x="{bx - 8}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:g}</text>')
    parts.append(f'<text class="xlabel" x="{bx + pw / 2:.1f}" y="{HEIGHT - 18}" text-anchor="middle">{escape(x)}</text>')
    ylabel = ", ".join(dict.fromkeys(label.split(" (")[0] for label, _ in series))
    parts.append(f'<text class="ylabel" transform="translate(18 {MARGIN["top"] + ph / 2:.1f}) rotate(-90)" '
                 f'text-anchor="middle">{escape(ylabel)}</text>')
    for i, (label, pts) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        coords = [(sx(px), sy(py)) for px, py in pts if math.isfinite(py)]
        if len(coords) > 1:
            path = " ".join(f"{cx:.2f},{cy:.2f}" for cx, cy in coords)
            parts.append(f'<polyline class="series" points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for cx, cy in coords:
            parts.append(f'<circle class="marker" cx="{cx:.2f}" cy="{cy:.2f}" r="3" fill="{color}"/>')
        ly = MARGIN["top"] + 10 + 18 * i
        lx = WIDTH - MARGIN["right"] + 15
        parts.append(f'<g class="legend-entry"><line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/><text x="{lx + 26}" y="{ly + 4}">{escape(label)}</text></g>')
    parts.append("</svg>")
    out = Path(out)
    out.write_text("\n".join(parts) + "\n")
    return out
