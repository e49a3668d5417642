"""Minimal dependency-free SVG emitters for the command-line reports.

Deterministic output: fixed palette, fixed float formatting, no timestamps.
"""

from __future__ import annotations

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#ff7f0e"]

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 60, 20, 30, 45


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def line_chart(series: dict, title: str, xlabel: str, ylabel: str, path) -> None:
    """Write a polyline chart. ``series`` maps label -> (xs, ys)."""
    xs_all = np.concatenate([np.asarray(xs, dtype=float) for xs, _ in series.values()])
    ys_all = np.concatenate([np.asarray(ys, dtype=float) for _, ys in series.values()])
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(x: float) -> float:
        return _ML + (x - x0) / (x1 - x0) * (_W - _ML - _MR)

    def py(y: float) -> float:
        return _H - _MB - (y - y0) / (y1 - y0) * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="monospace" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="18" text-anchor="middle">{title}</text>',
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>',
        f'<text x="{_W // 2}" y="{_H - 10}" text-anchor="middle">{xlabel}</text>',
        f'<text x="14" y="{_H // 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {_H // 2})">{ylabel}</text>',
        f'<text x="{_ML - 4}" y="{_H - _MB + 4}" text-anchor="end">{_fmt(y0)}</text>',
        f'<text x="{_ML - 4}" y="{_MT + 4}" text-anchor="end">{_fmt(y1)}</text>',
        f'<text x="{_ML}" y="{_H - _MB + 16}" text-anchor="middle">{_fmt(x0)}</text>',
        f'<text x="{_W - _MR}" y="{_H - _MB + 16}" text-anchor="middle">{_fmt(x1)}</text>',
    ]
    for i, (label, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_fmt(px(float(x)))},{_fmt(py(float(y)))}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = _MT + 14 + 16 * i
        parts.append(f'<line x1="{_W - _MR - 130}" y1="{ly - 4}" x2="{_W - _MR - 106}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{_W - _MR - 100}" y="{ly}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def mask_image(mask: np.ndarray, path, cell: int = 4) -> None:
    """Render a mask as an SVG grid: unmasked cells drawn dark on white."""
    m = np.asarray(mask, dtype=bool)
    rows, cols = m.shape
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{cols * cell}" '
        f'height="{rows * cell}" viewBox="0 0 {cols * cell} {rows * cell}">',
        f'<rect width="{cols * cell}" height="{rows * cell}" fill="white"/>',
    ]
    for i, j in zip(*np.nonzero(m)):
        parts.append(f'<rect x="{int(j) * cell}" y="{int(i) * cell}" '
                     f'width="{cell}" height="{cell}" fill="#26456e"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
