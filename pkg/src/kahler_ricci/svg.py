"""Minimal self-contained SVG line plots (axes, ticks, legend; no external assets).

Output depends only on the input numbers, so identical data gives identical
bytes.
"""

from __future__ import annotations

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=150, top=40, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _ticks(lo: float, hi: float, count: int = 5):
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def line_plot(x, series: dict, title: str, xlabel: str, ylabel: str = "") -> str:
    """Render series (label -> y array over x) to an SVG document string."""
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()]) if ys else np.zeros(1)
    if finite.size == 0:
        finite = np.zeros(1)
    ylo, yhi = float(finite.min()), float(finite.max())
    if yhi - ylo < 1e-300:
        ylo, yhi = ylo - 1.0, yhi + 1.0
    xlo, xhi = float(x.min()), float(x.max())
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - xlo) / (xhi - xlo) * pw

    def sy(v):
        return MARGIN["top"] + (yhi - v) / (yhi - ylo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(xlo, xhi):
        out.append(f'<line x1="{sx(t):.2f}" y1="{MARGIN["top"] + ph}" x2="{sx(t):.2f}" y2="{MARGIN["top"] + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(ylo, yhi):
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{sy(t):.2f}" x2="{MARGIN["left"]}" y2="{sy(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{MARGIN["left"] - 8}" y="{sy(t) + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    if ylo < 0 < yhi:
        out.append(f'<line x1="{MARGIN["left"]}" y1="{sy(0):.2f}" x2="{MARGIN["left"] + pw}" y2="{sy(0):.2f}" '
                   'stroke="gray" stroke-dasharray="4 3"/>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})">{ylabel}</text>')
    for idx, (label, y) in enumerate(ys.items()):
        color = COLORS[idx % len(COLORS)]
        ok = np.isfinite(y)
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = MARGIN["top"] + 12 + 18 * idx
        lx = MARGIN["left"] + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
