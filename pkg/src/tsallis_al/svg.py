"""Minimal line plots with a shaded +-1 std band, written as plain SVG."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _ticks(lo, hi, n=5):
    if not hi > lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def _fmt(v):
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        return f"{v:.0e}"
    return f"{v:g}"


def line_plot(series, title="", xlabel="", ylabel="", width=640, height=400) -> str:
    """``series`` is a list of ``(label, x, mean, std)``; NaN points are skipped."""
    ml, mr, mt, mb = 70, 150, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs, ys = [], []
    for _, x, m, s in series:
        x, m, s = (np.asarray(a, float) for a in (x, m, s))
        ok = np.isfinite(m)
        xs.append(x[ok])
        sd = np.where(np.isfinite(s), s, 0.0)[ok]
        ys.extend([m[ok] - sd, m[ok] + sd])
    xall = np.concatenate(xs) if xs else np.zeros(0)
    yall = np.concatenate(ys) if ys else np.zeros(0)
    x0, x1 = (float(xall.min()), float(xall.max())) if xall.size else (0.0, 1.0)
    y0, y1 = (float(yall.min()), float(yall.max())) if yall.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{ml + pw / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.2f}" y1="{mt + ph}" x2="{px(t):.2f}" y2="{mt + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px(t):.2f}" y="{mt + ph + 16}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{ml - 4}" y1="{py(t):.2f}" x2="{ml}" y2="{py(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 6}" y="{py(t) + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {mt + ph / 2})">'
        f"{escape(ylabel)}</text>"
    )
    for i, (label, x, m, s) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        x, m, s = (np.asarray(a, float) for a in (x, m, s))
        ok = np.isfinite(m)
        x, m, s = x[ok], m[ok], np.where(np.isfinite(s[ok]), s[ok], 0.0)
        if x.size:
            upper = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, m + s))
            lower = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[::-1], (m - s)[::-1]))
            out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
            line = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, m))
            out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 14 + 18 * i
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
