"""Tiny hand-rolled SVG plots (line with band, box plot, histogram pair).

Static, dependency-free figures; enough for the report renderer, not a
general plotting layer.
"""

from __future__ import annotations

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = 56


def _scale(lo, hi, pixel_lo, pixel_hi):
    span = hi - lo if hi > lo else 1.0

    def f(v):
        return pixel_lo + (np.asarray(v, dtype=np.float64) - lo) / span * (pixel_hi - pixel_lo)

    return f


def _frame(title, xlabel, ylabel, xticks, yticks, sx, sy):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle">{xlabel}</text>',
        f'<text x="16" y="{HEIGHT / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {HEIGHT / 2})">{ylabel}</text>',
    ]
    for v in xticks:
        px = float(sx(v))
        parts.append(f'<line x1="{px:.1f}" y1="{HEIGHT - MARGIN}" x2="{px:.1f}" '
                     f'y2="{HEIGHT - MARGIN + 4}" stroke="black"/>')
        parts.append(f'<text x="{px:.1f}" y="{HEIGHT - MARGIN + 18}" '
                     f'text-anchor="middle">{v:g}</text>')
    for v in yticks:
        py = float(sy(v))
        parts.append(f'<line x1="{MARGIN - 4}" y1="{py:.1f}" x2="{MARGIN}" '
                     f'y2="{py:.1f}" stroke="black"/>')
        parts.append(f'<text x="{MARGIN - 8}" y="{py + 4:.1f}" text-anchor="end">{v:g}</text>')
    return parts


def _ticks(lo, hi, n=5):
    return np.linspace(lo, hi, n)


def _polyline(xs, ys, color, width=2, dash=None):
    pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'


def line_with_band(path, x, mean, std, title="", xlabel="", ylabel=""):
    """Mean curve with a +-1 std band."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    ylo = min(0.0, float((mean - std).min()))
    yhi = float((mean + std).max()) * 1.05 or 1.0
    sx = _scale(x.min(), x.max(), MARGIN, WIDTH - MARGIN)
    sy = _scale(ylo, yhi, HEIGHT - MARGIN, MARGIN)
    parts = _frame(title, xlabel, ylabel, _ticks(x.min(), x.max()), _ticks(ylo, yhi), sx, sy)
    upper = list(zip(sx(x), sy(mean + std)))
    lower = list(zip(sx(x)[::-1], sy(np.maximum(mean - std, ylo))[::-1]))
    pts = " ".join(f"{px:.1f},{py:.1f}" for px, py in upper + lower)
    parts.append(f'<polygon points="{pts}" fill="#4878cf" fill-opacity="0.2" stroke="none"/>')
    parts.append(_polyline(sx(x), sy(mean), "#4878cf"))
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def box_plot(path, boxes, title="", ylabel=""):
    """Box plots from precomputed five-number summaries plus outliers."""
    names = list(boxes)
    vals = []
    for b in boxes.values():
        vals += [b["min"], b["max"]] + b["outliers"]
    ylo, yhi = 0.0, max(vals) * 1.1 or 1.0
    sy = _scale(ylo, yhi, HEIGHT - MARGIN, MARGIN)
    sx = _scale(-0.5, len(names) - 0.5, MARGIN, WIDTH - MARGIN)
    parts = _frame(title, "", ylabel, [], _ticks(ylo, yhi), sx, sy)
    half = 0.18
    for i, name in enumerate(names):
        b = boxes[name]
        cx, x0, x1 = float(sx(i)), float(sx(i - half)), float(sx(i + half))
        q1, q3, med = float(sy(b["q1"])), float(sy(b["q3"])), float(sy(b["median"]))
        wlo, whi = float(sy(b["min"])), float(sy(b["max"]))
        parts.append(f'<rect x="{x0:.1f}" y="{q3:.1f}" width="{x1 - x0:.1f}" '
                     f'height="{q1 - q3:.1f}" fill="#c9d7f0" stroke="black"/>')
        parts.append(f'<line x1="{x0:.1f}" y1="{med:.1f}" x2="{x1:.1f}" y2="{med:.1f}" '
                     f'stroke="black" stroke-width="2"/>')
        for w in (wlo, whi):
            parts.append(f'<line x1="{cx:.1f}" y1="{q1 if w == wlo else q3:.1f}" '
                         f'x2="{cx:.1f}" y2="{w:.1f}" stroke="black"/>')
            parts.append(f'<line x1="{float(sx(i - half / 2)):.1f}" y1="{w:.1f}" '
                         f'x2="{float(sx(i + half / 2)):.1f}" y2="{w:.1f}" stroke="black"/>')
        for o in b["outliers"]:
            parts.append(f'<circle cx="{cx:.1f}" cy="{float(sy(o)):.1f}" r="2.5" '
                         f'fill="none" stroke="black"/>')
        parts.append(f'<text x="{cx:.1f}" y="{HEIGHT - MARGIN + 18}" '
                     f'text-anchor="middle">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def histogram_pair(path, data, title=None):
    """Overlayed step curves of a real vs generated histogram pair."""
    edges = np.asarray(data["edges"])
    real = np.asarray(data["real"])
    gen = np.asarray(data["generated"])
    if title is None:
        ts = ", ".join(f"{v:.2f}" for v in data["theta_star"])
        th = ", ".join(f"{v:.2f}" for v in data["theta_hat"])
        title = f"true [{ts}] vs inferred [{th}]"
    yhi = float(max(real.max(), gen.max())) * 1.1 or 1.0
    sx = _scale(edges[0], edges[-1], MARGIN, WIDTH - MARGIN)
    sy = _scale(0.0, yhi, HEIGHT - MARGIN, MARGIN)
    parts = _frame(title, "observable", "density",
                   _ticks(edges[0], edges[-1]), _ticks(0.0, yhi), sx, sy)
    for vals, color, dash in ((real, "#333333", None), (gen, "#d1495b", "6,3")):
        xs, ys = [], []
        for i, v in enumerate(vals):
            xs += [float(sx(edges[i])), float(sx(edges[i + 1]))]
            ys += [float(sy(v)), float(sy(v))]
        parts.append(_polyline(xs, ys, color, dash=dash))
    parts.append(f'<text x="{WIDTH - MARGIN}" y="{MARGIN + 14}" text-anchor="end" '
                 f'fill="#333333">real</text>')
    parts.append(f'<text x="{WIDTH - MARGIN}" y="{MARGIN + 30}" text-anchor="end" '
                 f'fill="#d1495b">generated</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
