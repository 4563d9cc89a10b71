"""Minimal self-contained SVG line charts (no external references)."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def _fmt(v):
    return f"{v:.3g}"


def line_chart(series, title="", xlabel="", ylabel="", width=640, height=400, logy=False) -> str:
    """``series`` maps a label to ``(x, y)`` or ``(x, y, half_width)``.

    Half-widths are drawn as vertical whiskers. Points with non-finite values
    are skipped.
    """
    ml, mr, mt, mb = 70, 150, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs, ys = [], []
    for data in series.values():
        x, y = np.asarray(data[0], float), np.asarray(data[1], float)
        h = np.asarray(data[2], float) if len(data) > 2 else np.zeros_like(y)
        ok = np.isfinite(x) & np.isfinite(y)
        if logy:
            ok &= y - h > 0
        xs.append(x[ok])
        ys.extend([(y - h)[ok], (y + h)[ok]])
    xs, ys = np.concatenate(xs) if xs else np.zeros(1), np.concatenate(ys) if ys else np.zeros(1)
    if xs.size == 0 or ys.size == 0:
        xs = ys = np.ones(1)
    tf = (lambda v: np.log10(v)) if logy else (lambda v: v)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(tf(ys).min()), float(tf(ys).max())
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + ph - (tf(v) - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.1f}" y1="{mt + ph}" x2="{px(t):.1f}" y2="{mt + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px(t):.1f}" y="{mt + ph + 16}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        yy = mt + ph - (t - y0) / (y1 - y0) * ph
        label = _fmt(10**t) if logy else _fmt(t)
        out.append(f'<line x1="{ml - 4}" y1="{yy:.1f}" x2="{ml}" y2="{yy:.1f}" stroke="black"/>')
        out.append(f'<text x="{ml - 6}" y="{yy + 4:.1f}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{mt + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 15 {mt + ph / 2})">{escape(ylabel)}</text>')
    for k, (label, data) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        x, y = np.asarray(data[0], float), np.asarray(data[1], float)
        h = np.asarray(data[2], float) if len(data) > 2 else None
        ok = np.isfinite(x) & np.isfinite(y)
        if logy:
            ok &= y > 0
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], y[ok]))
        if pts:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        if h is not None:
            for a, b, e in zip(x[ok], y[ok], h[ok]):
                if e > 0 and (not logy or b - e > 0):
                    out.append(f'<line x1="{px(a):.2f}" y1="{py(b - e):.2f}" x2="{px(a):.2f}" '
                               f'y2="{py(b + e):.2f}" stroke="{color}"/>')
        ly = mt + 14 * k + 8
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, svg: str):
    with open(path, "w") as fh:
        fh.write(svg)


