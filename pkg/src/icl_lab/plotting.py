"""Minimal deterministic SVG charts for experiment previews."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 160, 40, 50
COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _num(v: float) -> str:
    return f"{v:.2f}"


def _scale(values, log: bool):
    vals = [math.log10(v) if log else v for v in values]
    lo, hi = min(vals), max(vals)
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    return lo, hi


def _finite(points, logx: bool, logy: bool):
    out = []
    for x, y in points:
        if x is None or y is None or not (math.isfinite(x) and math.isfinite(y)):
            continue
        if (logx and x <= 0) or (logy and y <= 0):
            continue
        out.append((x, y))
    return out


def _frame(title: str, xlabel: str, ylabel: str) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{LEFT + (WIDTH - LEFT - RIGHT) / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="15" y="{TOP + (HEIGHT - TOP - BOTTOM) / 2}" text-anchor="middle" '
        f'transform="rotate(-90 15 {TOP + (HEIGHT - TOP - BOTTOM) / 2})">{escape(ylabel)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{WIDTH - LEFT - RIGHT}" height="{HEIGHT - TOP - BOTTOM}" '
        'fill="none" stroke="black"/>',
    ]


def line_chart(series: dict, title: str, xlabel: str, ylabel: str, logx=False, logy=False) -> str:
    """``series`` maps a legend label to a list of ``(x, y)`` points."""
    clean = {name: _finite(pts, logx, logy) for name, pts in series.items()}
    xs = [x for pts in clean.values() for x, _ in pts] or [0.0, 1.0]
    ys = [y for pts in clean.values() for _, y in pts] or [0.0, 1.0]
    x0, x1 = _scale(xs, logx)
    y0, y1 = _scale(ys, logy)
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(x):
        v = math.log10(x) if logx else x
        return LEFT + (v - x0) / (x1 - x0) * pw

    def py(y):
        v = math.log10(y) if logy else y
        return TOP + ph - (v - y0) / (y1 - y0) * ph

    parts = _frame(title, xlabel, ylabel)
    for label, v in (("lo", x0), ("hi", x1)):
        x = LEFT if label == "lo" else LEFT + pw
        shown = 10**v if logx else v
        parts.append(f'<text x="{_num(x)}" y="{TOP + ph + 15}" text-anchor="middle">{shown:.3g}</text>')
    for label, v in (("lo", y0), ("hi", y1)):
        y = TOP + ph if label == "lo" else TOP
        shown = 10**v if logy else v
        parts.append(f'<text x="{LEFT - 5}" y="{_num(y + 4)}" text-anchor="end">{shown:.3g}</text>')
    for i, (name, pts) in enumerate(clean.items()):
        colour = COLOURS[i % len(COLOURS)]
        if pts:
            path = " ".join(f"{_num(px(x))},{_num(py(y))}" for x, y in pts)
            parts.append(f'<polyline points="{path}" fill="none" stroke="{colour}" stroke-width="2"/>')
            for x, y in pts:
                parts.append(f'<circle cx="{_num(px(x))}" cy="{_num(py(y))}" r="3" fill="{colour}"/>')
        ly = TOP + 15 * (i + 1)
        parts.append(f'<rect x="{WIDTH - RIGHT + 10}" y="{ly - 8}" width="10" height="10" fill="{colour}"/>')
        parts.append(f'<text x="{WIDTH - RIGHT + 25}" y="{ly + 1}">{escape(str(name))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bar_chart(values: dict, title: str, ylabel: str) -> str:
    """``values`` maps a bar label to its height; non-finite bars are left empty."""
    items = list(values.items())
    finite = [v for _, v in items if v is not None and math.isfinite(v)]
    top = max([0.0] + finite)
    bottom = min([0.0] + finite)
    if top == bottom:
        top = bottom + 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    slot = pw / max(len(items), 1)

    def py(v):
        return TOP + ph - (v - bottom) / (top - bottom) * ph

    parts = _frame(title, "", ylabel)
    parts.append(f'<text x="{LEFT - 5}" y="{TOP + 4}" text-anchor="end">{top:.3g}</text>')
    parts.append(f'<text x="{LEFT - 5}" y="{TOP + ph + 4}" text-anchor="end">{bottom:.3g}</text>')
    for i, (name, v) in enumerate(items):
        x = LEFT + i * slot + 0.15 * slot
        if v is not None and math.isfinite(v):
            y_top, y_base = py(max(v, 0.0)), py(min(v, 0.0))
            parts.append(
                f'<rect x="{_num(x)}" y="{_num(y_top)}" width="{_num(0.7 * slot)}" '
                f'height="{_num(y_base - y_top)}" fill="{COLOURS[i % len(COLOURS)]}"/>'
            )
        parts.append(
            f'<text x="{_num(x + 0.35 * slot)}" y="{TOP + ph + 15}" text-anchor="middle" '
            f'font-size="10">{escape(str(name))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
