"""Minimal static SVG plots: heatmaps, eigenvalue clouds, line charts.

Coordinates are written with fixed precision so output bytes are deterministic.
"""
import math

import numpy as np


def _f(v):
    return f"{v:.3f}"


def _doc(width, height, body):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n'
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n')
    return head + "".join(body) + "</svg>\n"


def _color(t):
    # blue (-1) -> white (0) -> red (+1)
    t = max(-1.0, min(1.0, t))
    if t >= 0:
        g = round(255 * (1 - t))
        return f"rgb(255,{g},{g})"
    g = round(255 * (1 + t))
    return f"rgb({g},{g},255)"


def heatmap(matrix, title="", segments=None, cell=24, labels=None):
    """Square heatmap of values in [-1, 1]; optional segments [[b, e], ...] drawn as
    outlined diagonal blocks (1-based, inclusive, in row order)."""
    m = np.asarray(matrix, dtype=np.float64)
    n = m.shape[0]
    pad = 40
    size = pad * 2 + cell * n
    body = []
    if title:
        body.append(f'<text x="{pad}" y="{pad - 16}" font-size="12">{_esc(title)}</text>\n')
    for i in range(n):
        for j in range(n):
            body.append(f'<rect x="{pad + j * cell}" y="{pad + i * cell}" width="{cell}" '
                        f'height="{cell}" fill="{_color(m[i, j])}"/>\n')
    labels = labels if labels is not None else [str(i) for i in range(n)]
    for i, lab in enumerate(labels):
        c = pad + i * cell + cell / 2
        body.append(f'<text x="{_f(c)}" y="{pad - 4}" font-size="9" text-anchor="middle">{lab}</text>\n')
        body.append(f'<text x="{pad - 4}" y="{_f(c + 3)}" font-size="9" text-anchor="end">{lab}</text>\n')
    for b, e in segments or ():
        x = pad + (b - 1) * cell
        w = (e - b + 1) * cell
        body.append(f'<rect x="{x}" y="{x}" width="{w}" height="{w}" fill="none" '
                    f'stroke="black" stroke-width="2"/>\n')
    return _doc(size, size, body)


def eigen_cloud(points, title="", size=320):
    """Eigenvalues {label: complex array} on the complex plane with the unit circle."""
    pts = {k: np.asarray(v, dtype=complex) for k, v in points.items()}
    extent = max([1.0] + [float(np.max(np.abs(v))) for v in pts.values() if v.size])
    extent *= 1.1
    half = size / 2
    scale = (half - 20) / extent

    def xy(z):
        return half + z.real * scale, half - z.imag * scale

    body = [f'<line x1="10" y1="{_f(half)}" x2="{size - 10}" y2="{_f(half)}" stroke="gray"/>\n',
            f'<line x1="{_f(half)}" y1="10" x2="{_f(half)}" y2="{size - 10}" stroke="gray"/>\n',
            f'<circle cx="{_f(half)}" cy="{_f(half)}" r="{_f(scale)}" fill="none" stroke="black"/>\n']
    if title:
        body.append(f'<text x="10" y="14" font-size="12">{_esc(title)}</text>\n')
    palette = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd")
    for n, (label, vals) in enumerate(pts.items()):
        color = palette[n % len(palette)]
        for z in vals:
            x, y = xy(z)
            body.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="2.5" fill="{color}" fill-opacity="0.7"/>\n')
        body.append(f'<text x="{size - 80}" y="{16 + 14 * n}" font-size="11" fill="{color}">'
                    f'{_esc(str(label))}</text>\n')
    return _doc(size, size, body)


def line_chart(series, title="", width=480, height=300, xlabel="layer"):
    """Polylines for {label: (x, y)}; NaN values break the line."""
    pad = 40
    xs = [np.asarray(x, float) for x, _ in series.values()]
    ys = [np.asarray(y, float) for _, y in series.values()]
    allx = np.concatenate(xs) if xs else np.zeros(1)
    ally = np.concatenate(ys) if ys else np.zeros(1)
    ally = ally[np.isfinite(ally)]
    x0, x1 = float(np.min(allx)), float(np.max(allx))
    y0, y1 = (float(np.min(ally)), float(np.max(ally))) if ally.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    body = [f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>\n',
            f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>\n',
            f'<text x="{width / 2}" y="{height - 8}" font-size="11" text-anchor="middle">{xlabel}</text>\n',
            f'<text x="4" y="{pad - 6}" font-size="10">{y1:.3g}</text>\n',
            f'<text x="4" y="{height - pad}" font-size="10">{y0:.3g}</text>\n']
    if title:
        body.append(f'<text x="{pad}" y="16" font-size="12">{_esc(title)}</text>\n')
    palette = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e")
    for n, (label, (x, y)) in enumerate(series.items()):
        color = palette[n % len(palette)]
        run = []
        for a, b in zip(np.asarray(x, float), np.asarray(y, float)):
            if math.isfinite(b):
                run.append(f"{_f(px(a))},{_f(py(b))}")
                continue
            if len(run) > 1:
                body.append(f'<polyline points="{" ".join(run)}" fill="none" stroke="{color}"/>\n')
            run = []
        if len(run) > 1:
            body.append(f'<polyline points="{" ".join(run)}" fill="none" stroke="{color}"/>\n')
        body.append(f'<text x="{width - pad - 60}" y="{pad + 12 * n}" font-size="10" fill="{color}">'
                    f'{_esc(str(label))}</text>\n')
    return _doc(width, height, body)


def _esc(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
