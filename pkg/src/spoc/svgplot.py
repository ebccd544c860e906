"""Minimal SVG emission for log-log rate plots and 1-d density overlays.

Hand-rolled so no plotting dependency leaks into the library layers; output is
plain SVG 1.1 with polylines, decade ticks, and an optional slope reference line.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

_W, _H = 640, 440
_ML, _MR, _MT, _MB = 70, 20, 30, 50
_COLORS = ("#1f6fb2", "#d1495b", "#2e8b57", "#8e6cb8", "#c98a00", "#4a4a4a")


def _svg_header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="monospace" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.0f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
    ]


def _frame(lines: list[str], xlabel: str, ylabel: str) -> None:
    x0, y0 = _ML, _H - _MB
    x1, y1 = _W - _MR, _MT
    lines.append(
        f'<path d="M {x0} {y1} L {x0} {y0} L {x1} {y0}" stroke="black" fill="none"/>'
    )
    lines.append(
        f'<text x="{(x0 + x1) / 2:.0f}" y="{_H - 12}" text-anchor="middle">{xlabel}</text>'
    )
    lines.append(
        f'<text x="16" y="{(y0 + y1) / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(y0 + y1) / 2:.0f})">{ylabel}</text>'
    )


class _LogMap:
    def __init__(self, lo: float, hi: float, px0: float, px1: float):
        self.lo, self.hi = math.log10(lo), math.log10(hi)
        if self.hi - self.lo < 1e-12:
            self.hi = self.lo + 1.0
        self.px0, self.px1 = px0, px1

    def __call__(self, v: float) -> float:
        f = (math.log10(v) - self.lo) / (self.hi - self.lo)
        return self.px0 + f * (self.px1 - self.px0)

    def decades(self):
        lo = math.floor(self.lo)
        hi = math.ceil(self.hi)
        return [10.0**k for k in range(int(lo), int(hi) + 1) if self.lo - 1e-9 <= k <= self.hi + 1e-9]


def loglog_rate_plot(
    path,
    series: dict[str, tuple],
    title: str = "",
    xlabel: str = "n",
    ylabel: str = "error",
    ref_slope: float | None = -0.5,
) -> None:
    """Write a log-log plot of one or more (ns, errs) series, with an optional
    dashed reference line of the given slope anchored at the first series."""
    all_x = np.concatenate([np.asarray(s[0], dtype=float) for s in series.values()])
    all_y = np.concatenate([np.asarray(s[1], dtype=float) for s in series.values()])
    all_x = all_x[all_x > 0]
    all_y = all_y[all_y > 0]
    if all_x.size == 0 or all_y.size == 0:
        raise ValueError("nothing positive to plot on log axes")
    mx = _LogMap(all_x.min(), all_x.max(), _ML, _W - _MR)
    my = _LogMap(all_y.min() * 0.8, all_y.max() * 1.25, _H - _MB, _MT)
    lines = _svg_header(title)
    _frame(lines, xlabel, ylabel)
    for v in mx.decades():
        px = mx(v)
        lines.append(
            f'<line x1="{px:.1f}" y1="{_H - _MB}" x2="{px:.1f}" y2="{_MT}" '
            f'stroke="#dddddd"/>'
        )
        lines.append(
            f'<text x="{px:.1f}" y="{_H - _MB + 16}" text-anchor="middle">1e{int(round(math.log10(v)))}</text>'
        )
    for v in my.decades():
        py = my(v)
        lines.append(
            f'<line x1="{_ML}" y1="{py:.1f}" x2="{_W - _MR}" y2="{py:.1f}" stroke="#dddddd"/>'
        )
        lines.append(
            f'<text x="{_ML - 6}" y="{py + 4:.1f}" text-anchor="end">1e{int(round(math.log10(v)))}</text>'
        )
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(
            f"{mx(float(x)):.1f},{my(float(y)):.1f}"
            for x, y in zip(xs, ys)
            if x > 0 and y > 0
        )
        lines.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y in zip(xs, ys):
            if x > 0 and y > 0:
                lines.append(
                    f'<circle cx="{mx(float(x)):.1f}" cy="{my(float(y)):.1f}" r="3" fill="{color}"/>'
                )
        lines.append(
            f'<text x="{_W - _MR - 8}" y="{_MT + 16 + 16 * i}" text-anchor="end" '
            f'fill="{color}">{name}</text>'
        )
    if ref_slope is not None:
        first = next(iter(series.values()))
        xs = np.asarray(first[0], dtype=float)
        ys = np.asarray(first[1], dtype=float)
        x_a, x_b = float(xs.min()), float(xs.max())
        anchor = float(ys[np.argmin(xs)])
        y_b = anchor * (x_b / x_a) ** ref_slope
        lines.append(
            f'<line x1="{mx(x_a):.1f}" y1="{my(anchor):.1f}" x2="{mx(x_b):.1f}" '
            f'y2="{my(max(y_b, 1e-300)):.1f}" stroke="#888888" stroke-dasharray="6,4"/>'
        )
        lines.append(
            f'<text x="{mx(x_b) - 4:.1f}" y="{my(max(y_b, 1e-300)) - 6:.1f}" '
            f'text-anchor="end" fill="#888888">slope {ref_slope:g}</text>'
        )
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines))


def density_plot(
    path,
    curves: dict[str, tuple],
    title: str = "",
    xlabel: str = "x",
    ylabel: str = "density",
) -> None:
    """Write overlaid 1-d density curves given as (x, density) pairs."""
    all_x = np.concatenate([np.asarray(c[0], dtype=float) for c in curves.values()])
    all_y = np.concatenate([np.asarray(c[1], dtype=float) for c in curves.values()])
    x_lo, x_hi = float(all_x.min()), float(all_x.max())
    y_hi = float(all_y.max()) * 1.1 or 1.0
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0

    def px(v):
        return _ML + (v - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)

    def py(v):
        return (_H - _MB) - v / y_hi * (_H - _MB - _MT)

    lines = _svg_header(title)
    _frame(lines, xlabel, ylabel)
    for i, x in enumerate(np.linspace(x_lo, x_hi, 5)):
        lines.append(
            f'<text x="{px(x):.1f}" y="{_H - _MB + 16}" text-anchor="middle">{x:.2g}</text>'
        )
    for y in np.linspace(0, y_hi, 5):
        lines.append(f'<text x="{_ML - 6}" y="{py(y) + 4:.1f}" text-anchor="end">{y:.2g}</text>')
    for i, (name, (xs, ys)) in enumerate(curves.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(float(x)):.1f},{py(float(y)):.1f}" for x, y in zip(xs, ys))
        lines.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        lines.append(
            f'<text x="{_W - _MR - 8}" y="{_MT + 16 + 16 * i}" text-anchor="end" '
            f'fill="{color}">{name}</text>'
        )
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines))
