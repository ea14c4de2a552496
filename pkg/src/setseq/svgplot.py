"""Static SVG line charts; data-only plot emission with no plotting stack."""

from __future__ import annotations

import math
from pathlib import Path

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
W, H = 640, 400
MARGIN = dict(left=64, right=16, top=36, bottom=48)


def _ticks(lo: float, hi: float, n: int = 5):
    if hi == lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-12 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1000 or abs(v) < 0.01:
        return f"{v:.2g}"
    return f"{v:g}"


def write_line_chart(path, x, series: dict, title: str = "",
                     xlabel: str = "", ylabel: str = ""):
    """Write a chart of named series sharing the x grid to ``path``.

    Non-finite values break the polyline rather than being interpolated.
    """
    xs = [float(v) for v in x]
    all_y = [float(v) for ys in series.values() for v in ys if math.isfinite(float(v))]
    if not all_y or not xs:
        raise ValueError("write_line_chart needs at least one finite point")
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    plot_w = W - MARGIN["left"] - MARGIN["right"]
    plot_h = H - MARGIN["top"] - MARGIN["bottom"]

    def px(v):
        return MARGIN["left"] + (v - x_lo) / (x_hi - x_lo) * plot_w

    def py(v):
        return MARGIN["top"] + (1.0 - (v - y_lo) / (y_hi - y_lo)) * plot_h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>']
    if title:
        out.append(f'<text x="{W/2:.0f}" y="20" text-anchor="middle" '
                   f'font-size="14">{title}</text>')
    # axes and grid
    for tv in _ticks(x_lo, x_hi):
        out.append(f'<line x1="{px(tv):.1f}" y1="{MARGIN["top"]}" x2="{px(tv):.1f}" '
                   f'y2="{H - MARGIN["bottom"]}" stroke="#eee"/>')
        out.append(f'<text x="{px(tv):.1f}" y="{H - MARGIN["bottom"] + 16}" '
                   f'text-anchor="middle">{_fmt(tv)}</text>')
    for tv in _ticks(y_lo, y_hi):
        out.append(f'<line x1="{MARGIN["left"]}" y1="{py(tv):.1f}" '
                   f'x2="{W - MARGIN["right"]}" y2="{py(tv):.1f}" stroke="#eee"/>')
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{py(tv):.1f}" '
                   f'text-anchor="end" dominant-baseline="middle">{_fmt(tv)}</text>')
    out.append(f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{plot_w}" '
               f'height="{plot_h}" fill="none" stroke="#444"/>')
    if xlabel:
        out.append(f'<text x="{MARGIN["left"] + plot_w / 2:.0f}" y="{H - 8}" '
                   f'text-anchor="middle">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{MARGIN["top"] + plot_h / 2:.0f}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {MARGIN["top"] + plot_h / 2:.0f})">{ylabel}</text>')
    # series
    for idx, (name, ys) in enumerate(series.items()):
        color = PALETTE[idx % len(PALETTE)]
        segments, cur = [], []
        for xv, yv in zip(xs, ys):
            yv = float(yv)
            if math.isfinite(yv):
                cur.append(f"{px(xv):.1f},{py(yv):.1f}")
            elif cur:
                segments.append(cur)
                cur = []
        if cur:
            segments.append(cur)
        for seg in segments:
            out.append(f'<polyline points="{" ".join(seg)}" fill="none" '
                       f'stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN["top"] + 14 * idx + 4
        out.append(f'<line x1="{W - MARGIN["right"] - 110}" y1="{ly}" '
                   f'x2="{W - MARGIN["right"] - 90}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - MARGIN["right"] - 85}" y="{ly + 4}">{name}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out), encoding="utf-8")
    return Path(path)
