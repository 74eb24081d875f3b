"""Hand-written SVG charts with a fixed 800x600 layout.

All coordinates are printed with two decimals so output is byte-stable.
"""
from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 800, 600
LEFT, RIGHT, TOP, BOTTOM = 170, 40, 50, 70
DOT_R = 2.5
LOW_COLOR = (0x1E, 0x88, 0xE5)
HIGH_COLOR = (0xFF, 0x0D, 0x57)
SERIES_COLORS = ("#1e88e5", "#ff0d57")


def _f(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _tick(x: float) -> str:
    s = f"{x:.3g}"
    return "0" if s in ("-0", "0") else s


def _header(title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:.2f}" y="28.00" text-anchor="middle" font-family="sans-serif" '
        f'font-size="16">{escape(title)}</text>',
    ]


def _mix(t: float) -> str:
    c = [round(lo + (hi - lo) * t) for lo, hi in zip(LOW_COLOR, HIGH_COLOR)]
    return "#{:02x}{:02x}{:02x}".format(*c)


def _swarm_offsets(xs: np.ndarray, half_height: float) -> np.ndarray:
    """Vertical offsets that stack points sharing an x-bucket, alternating up/down."""
    offsets = np.zeros(xs.size)
    step = DOT_R * 1.6
    buckets: dict[int, int] = {}
    for i in np.argsort(xs, kind="stable"):
        b = int(xs[i] // (2 * DOT_R))
        k = buckets.get(b, 0)
        buckets[b] = k + 1
        mag = ((k + 1) // 2) * step
        off = mag if k % 2 == 1 else -mag
        offsets[i] = max(-half_height, min(half_height, off))
    return offsets


def beeswarm_svg(
    phi: np.ndarray,
    feature_names: Sequence[str],
    feature_values: np.ndarray | None = None,
    title: str = "SHAP summary",
) -> str:
    """One horizontal band per feature, most important (mean |phi|) at the top.

    Point x is the attribution; colour runs blue to red with the feature's
    value when ``feature_values`` is given.
    """
    phi = np.asarray(phi, dtype=np.float64)
    n, m = phi.shape
    importance = np.abs(phi).mean(axis=0) if n else np.zeros(m)
    order = sorted(range(m), key=lambda j: (-importance[j], j))
    lo = float(phi.min()) if n else 0.0
    hi = float(phi.max()) if n else 0.0
    if hi - lo <= 0:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    plot_w = WIDTH - LEFT - RIGHT
    plot_h = HEIGHT - TOP - BOTTOM
    band = plot_h / m

    def xpix(v):
        return LEFT + (v - lo) / (hi - lo) * plot_w

    out = _header(title)
    out.append(f'<line x1="{_f(xpix(0.0))}" y1="{_f(TOP)}" x2="{_f(xpix(0.0))}" y2="{_f(TOP + plot_h)}" '
               'stroke="#999999" stroke-width="1"/>')
    for rank, j in enumerate(order):
        y0 = TOP + rank * band
        yc = y0 + band / 2
        out.append(f'<line x1="{_f(LEFT)}" y1="{_f(yc)}" x2="{_f(LEFT + plot_w)}" y2="{_f(yc)}" '
                   'stroke="#eeeeee" stroke-width="1"/>')
        out.append(f'<text class="band-label" x="{_f(LEFT - 8)}" y="{_f(yc + 4)}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="12">{escape(str(feature_names[j]))}</text>')
        if n == 0:
            continue
        xs = np.array([xpix(v) for v in phi[:, j]])
        offs = _swarm_offsets(xs, max(0.0, band / 2 - DOT_R))
        if feature_values is not None:
            col = np.asarray(feature_values[:, j], dtype=np.float64)
            span = col.max() - col.min()
            shade = (col - col.min()) / span if span > 0 else np.full(n, 0.5)
        else:
            shade = np.full(n, 0.5)
        out.append(f'<g class="band" data-feature="{escape(str(feature_names[j]))}">')
        for i in range(n):
            out.append(f'<circle cx="{_f(xs[i])}" cy="{_f(yc + offs[i])}" r="{DOT_R}" '
                       f'fill="{_mix(float(shade[i]))}" fill-opacity="0.8"/>')
        out.append("</g>")
    axis_y = TOP + plot_h + 10
    out.append(f'<line x1="{_f(LEFT)}" y1="{_f(axis_y)}" x2="{_f(LEFT + plot_w)}" y2="{_f(axis_y)}" '
               'stroke="#333333" stroke-width="1"/>')
    for v in np.linspace(lo, hi, 5):
        out.append(f'<text x="{_f(xpix(v))}" y="{_f(axis_y + 18)}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{_tick(v)}</text>')
    out.append(f'<text x="{_f(LEFT + plot_w / 2)}" y="{_f(HEIGHT - 14)}" text-anchor="middle" '
               'font-family="sans-serif" font-size="12">SHAP value (raw model output)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def grouped_bar_svg(
    values_a: np.ndarray,
    values_b: np.ndarray,
    feature_names: Sequence[str],
    labels: tuple[str, str] = ("model A", "model B"),
    title: str = "Per-feature SHAP variance",
) -> str:
    """Side-by-side bars per feature for two series."""
    a = np.asarray(values_a, dtype=np.float64)
    b = np.asarray(values_b, dtype=np.float64)
    m = a.size
    top = float(max(a.max(initial=0.0), b.max(initial=0.0)))
    if top <= 0:
        top = 1.0
    plot_w = WIDTH - LEFT - RIGHT
    plot_h = HEIGHT - TOP - BOTTOM
    base_y = TOP + plot_h
    group = plot_w / m
    bar = group * 0.35
    out = _header(title)
    out.append(f'<line x1="{_f(LEFT)}" y1="{_f(base_y)}" x2="{_f(LEFT + plot_w)}" y2="{_f(base_y)}" '
               'stroke="#333333" stroke-width="1"/>')
    out.append(f'<line x1="{_f(LEFT)}" y1="{_f(TOP)}" x2="{_f(LEFT)}" y2="{_f(base_y)}" '
               'stroke="#333333" stroke-width="1"/>')
    for v in np.linspace(0.0, top, 5):
        y = base_y - v / top * plot_h
        out.append(f'<text x="{_f(LEFT - 6)}" y="{_f(y + 4)}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">{_tick(v)}</text>')
    for j in range(m):
        gx = LEFT + j * group + group * 0.15
        for s, (vals, color) in enumerate(((a, SERIES_COLORS[0]), (b, SERIES_COLORS[1]))):
            h = vals[j] / top * plot_h
            out.append(f'<rect class="bar series-{s}" x="{_f(gx + s * bar)}" y="{_f(base_y - h)}" '
                       f'width="{_f(bar)}" height="{_f(h)}" fill="{color}"/>')
        out.append(f'<text class="bar-label" x="{_f(gx + bar)}" y="{_f(base_y + 16)}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{escape(str(feature_names[j]))}</text>')
    for s, (label, color) in enumerate(zip(labels, SERIES_COLORS)):
        lx = WIDTH - RIGHT - 200 + s * 100
        out.append(f'<rect x="{_f(lx)}" y="{_f(HEIGHT - 30)}" width="12.00" height="12.00" fill="{color}"/>')
        out.append(f'<text x="{_f(lx + 16)}" y="{_f(HEIGHT - 20)}" font-family="sans-serif" '
                   f'font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
