"""Minimal SVG line/scatter/heatmap renderings of plot data."""

from __future__ import annotations

import math

import numpy as np

W, H, PAD = 640, 420, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b")


def _finite_range(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if len(v) == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def _frame(title: str, xlabel: str, ylabel: str, xr, yr) -> list[str]:
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
           f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>',
           f'<text x="{W / 2}" y="{PAD / 2}" text-anchor="middle">{title}</text>',
           f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle">{xlabel}</text>',
           f'<text x="15" y="{H / 2}" text-anchor="middle" transform="rotate(-90 15 {H / 2})">{ylabel}</text>',
           f'<text x="{PAD}" y="{H - PAD + 15}">{xr[0]:.4g}</text>',
           f'<text x="{W - PAD}" y="{H - PAD + 15}" text-anchor="end">{xr[1]:.4g}</text>',
           f'<text x="{PAD - 5}" y="{H - PAD}" text-anchor="end">{yr[0]:.4g}</text>',
           f'<text x="{PAD - 5}" y="{PAD + 10}" text-anchor="end">{yr[1]:.4g}</text>']
    return out


def _mapper(xr, yr, logx=False):
    fx = (lambda x: math.log10(x)) if logx else (lambda x: x)
    x0, x1 = fx(xr[0]), fx(xr[1])

    def px(x, y):
        return (PAD + (fx(x) - x0) / (x1 - x0) * (W - 2 * PAD),
                H - PAD - (y - yr[0]) / (yr[1] - yr[0]) * (H - 2 * PAD))
    return px


def line_plot(path, series, title="", xlabel="", ylabel="", logx=False, markers=False) -> None:
    """``series`` is a list of (x, y, label) triples."""
    xs = np.concatenate([np.asarray(s[0], dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    xr, yr = _finite_range(xs), _finite_range(ys)
    px = _mapper(xr, yr, logx)
    out = _frame(title, xlabel, ylabel, xr, yr)
    for n, (x, y, label) in enumerate(series):
        c = COLORS[n % len(COLORS)]
        pts = [px(a, b) for a, b in zip(x, y) if math.isfinite(a) and math.isfinite(b)]
        if markers:
            out += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2" fill="{c}"/>' for a, b in pts]
        else:
            out.append(f'<polyline fill="none" stroke="{c}" points="' +
                       " ".join(f"{a:.2f},{b:.2f}" for a, b in pts) + '"/>')
        out.append(f'<text x="{W - PAD - 5}" y="{PAD + 15 + 14 * n}" text-anchor="end" fill="{c}">{label}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def heatmap(path, x, y, values, title="", xlabel="", ylabel="") -> None:
    """``values[i, j]`` at (x[j], y[i]); non-finite cells are drawn grey."""
    v = np.asarray(values, dtype=float)
    lo, hi = _finite_range(v)
    out = _frame(title, xlabel, ylabel, (x[0], x[-1]), (y[0], y[-1]))
    cw = (W - 2 * PAD) / v.shape[1]
    ch = (H - 2 * PAD) / v.shape[0]
    for i in range(v.shape[0]):
        for j in range(v.shape[1]):
            val = v[i, j]
            if math.isfinite(val):
                s = (val - lo) / (hi - lo)
                fill = f"rgb({int(68 + 185 * s)},{int(1 + 230 * s)},{int(84 - 48 * s)})"
            else:
                fill = "#999999"
            out.append(f'<rect x="{PAD + j * cw:.2f}" y="{H - PAD - (i + 1) * ch:.2f}" '
                       f'width="{cw:.2f}" height="{ch:.2f}" fill="{fill}"/>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
