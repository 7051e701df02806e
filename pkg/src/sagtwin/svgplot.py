"""Tiny dependency-free SVG line/band/histogram plotter for run reports.

Every figure the workflow emits has a sibling CSV with the exact plotted
numbers; these SVGs are purely for eyeballing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

_W, _H = 860, 360
_ML, _MR, _MT, _MB = 64, 16, 28, 40
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e5 or abs(v) < 1e-3:
        return f"{v:.2e}"
    return f"{v:.4g}"


@dataclass
class LinePlot:
    title: str
    xlabel: str = ""
    ylabel: str = ""
    series: list = field(default_factory=list)   # (label, xs, ys, color?)
    bands: list = field(default_factory=list)    # (label, xs, lo, hi, color?)
    vlines: list = field(default_factory=list)   # (label, x)

    def add_line(self, label, xs, ys, color=None):
        self.series.append((label, list(xs), list(ys), color))

    def add_band(self, label, xs, lo, hi, color=None):
        self.bands.append((label, list(xs), list(lo), list(hi), color))

    def add_vline(self, label, x):
        self.vlines.append((label, float(x)))

    def _extent(self):
        xs, ys = [], []
        for _, x, y, _c in self.series:
            xs += x
            ys += y
        for _, x, lo, hi, _c in self.bands:
            xs += x
            ys += lo + hi
        for _, x in self.vlines:
            xs.append(x)
        if not xs:
            xs, ys = [0.0, 1.0], [0.0, 1.0]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        if x1 == x0:
            x1 = x0 + 1.0
        if y1 == y0:
            y1 = y0 + 1.0
        pad = 0.05 * (y1 - y0)
        return x0, x1, y0 - pad, y1 + pad

    def render(self) -> str:
        x0, x1, y0, y1 = self._extent()
        pw, ph = _W - _ML - _MR, _H - _MT - _MB

        def px(x):
            return _ML + (x - x0) / (x1 - x0) * pw

        def py(y):
            return _MT + (1.0 - (y - y0) / (y1 - y0)) * ph

        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'font-family="sans-serif" font-size="11">',
            f'<rect width="{_W}" height="{_H}" fill="white"/>',
            f'<text x="{_W/2:.0f}" y="16" text-anchor="middle" font-size="13">{self.title}</text>',
        ]
        # axes + ticks
        parts.append(f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" '
                     'fill="none" stroke="#888"/>')
        for i in range(5):
            xv = x0 + i * (x1 - x0) / 4
            yv = y0 + i * (y1 - y0) / 4
            parts.append(f'<line x1="{px(xv):.1f}" y1="{_MT+ph}" x2="{px(xv):.1f}" '
                         f'y2="{_MT+ph+4}" stroke="#888"/>')
            parts.append(f'<text x="{px(xv):.1f}" y="{_MT+ph+16}" text-anchor="middle">{_fmt(xv)}</text>')
            parts.append(f'<line x1="{_ML-4}" y1="{py(yv):.1f}" x2="{_ML}" y2="{py(yv):.1f}" stroke="#888"/>')
            parts.append(f'<text x="{_ML-6}" y="{py(yv)+3:.1f}" text-anchor="end">{_fmt(yv)}</text>')
        if self.xlabel:
            parts.append(f'<text x="{_ML+pw/2:.0f}" y="{_H-6}" text-anchor="middle">{self.xlabel}</text>')
        if self.ylabel:
            parts.append(f'<text x="14" y="{_MT+ph/2:.0f}" text-anchor="middle" '
                         f'transform="rotate(-90 14 {_MT+ph/2:.0f})">{self.ylabel}</text>')
        for bi, (label, xs, lo, hi, color) in enumerate(self.bands):
            c = color or _COLORS[bi % len(_COLORS)]
            pts = [f"{px(x):.1f},{py(v):.1f}" for x, v in zip(xs, hi)]
            pts += [f"{px(x):.1f},{py(v):.1f}" for x, v in zip(reversed(xs), reversed(lo))]
            parts.append(f'<polygon points="{" ".join(pts)}" fill="{c}" opacity="0.15"/>')
        for si, (label, xs, ys, color) in enumerate(self.series):
            c = color or _COLORS[si % len(_COLORS)]
            pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys)
                           if math.isfinite(x) and math.isfinite(y))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.2"/>')
            parts.append(f'<text x="{_ML+8}" y="{_MT+14+12*si}" fill="{c}">{label}</text>')
        for label, x in self.vlines:
            parts.append(f'<line x1="{px(x):.1f}" y1="{_MT}" x2="{px(x):.1f}" y2="{_MT+ph}" '
                         'stroke="#444" stroke-dasharray="4 3"/>')
            parts.append(f'<text x="{px(x)+3:.1f}" y="{_MT+12}" fill="#444">{label}</text>')
        parts.append("</svg>")
        return "\n".join(parts)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.render())


def histogram_svg(title: str, values, bins: int = 30, xlabel: str = "") -> str:
    lo, hi = min(values), max(values)
    if hi == lo:
        hi = lo + 1.0
    counts = [0] * bins
    for v in values:
        idx = min(int((v - lo) / (hi - lo) * bins), bins - 1)
        counts[idx] += 1
    plot = LinePlot(title=title, xlabel=xlabel, ylabel="count")
    xs, ys = [], []
    for i, c in enumerate(counts):
        x0 = lo + i * (hi - lo) / bins
        x1 = lo + (i + 1) * (hi - lo) / bins
        xs += [x0, x0, x1]
        ys += [0, c, c]
    xs.append(hi)
    ys.append(0)
    plot.add_line("histogram", xs, ys)
    return plot.render()
