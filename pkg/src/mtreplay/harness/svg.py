"""Minimal native SVG line charts: polylines, error bands, axes, legend.

All quantitative results live in the CSVs; these charts are a convenience
view shaped like the training/evaluation figures of the experiment logs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

_W, _H = 720, 440
_ML, _MR, _MT, _MB = 70, 20, 40, 50


@dataclass(slots=True)
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    band: np.ndarray | None = None  # half-width of the shaded band (e.g. SE)


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, n)
    return [float(v) for v in raw]


def _fmt(v: float) -> str:
    if abs(v) >= 10000 or (abs(v) < 0.01 and v != 0):
        return f"{v:.2e}"
    return f"{v:.4g}"


def line_chart(path: str | Path, title: str, x_label: str, y_label: str,
               series: list[Series]) -> None:
    xs = np.concatenate([s.x for s in series if len(s.x)]) if series else np.array([0.0])
    ys_parts = []
    for s in series:
        if len(s.y) == 0:
            continue
        ys_parts.append(s.y if s.band is None else s.y - s.band)
        ys_parts.append(s.y if s.band is None else s.y + s.band)
    ys = np.concatenate(ys_parts) if ys_parts else np.array([0.0])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(x: float) -> float:
        return _ML + (x - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)

    def py(y: float) -> float:
        return _H - _MB - (y - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="15">{title}</text>',
    ]
    for tx in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{px(tx):.1f}" y1="{_H - _MB}" x2="{px(tx):.1f}" '
                     f'y2="{_H - _MB + 5}" stroke="black"/>')
        parts.append(f'<text x="{px(tx):.1f}" y="{_H - _MB + 18}" '
                     f'text-anchor="middle">{_fmt(tx)}</text>')
    for ty in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{_ML - 5}" y1="{py(ty):.1f}" x2="{_ML}" '
                     f'y2="{py(ty):.1f}" stroke="black"/>')
        parts.append(f'<text x="{_ML - 8}" y="{py(ty) + 4:.1f}" '
                     f'text-anchor="end">{_fmt(ty)}</text>')
    parts.append(f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" '
                 f'y2="{_H - _MB}" stroke="black"/>')
    parts.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" '
                 f'stroke="black"/>')
    parts.append(f'<text x="{(_ML + _W - _MR) / 2}" y="{_H - 10}" '
                 f'text-anchor="middle">{x_label}</text>')
    parts.append(f'<text x="18" y="{(_MT + _H - _MB) / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 18 {(_MT + _H - _MB) / 2})">{y_label}</text>')

    for i, s in enumerate(series):
        if len(s.x) == 0:
            continue
        color = _COLORS[i % len(_COLORS)]
        if s.band is not None and len(s.x) > 1:
            upper = [f"{px(x):.1f},{py(y + b):.1f}"
                     for x, y, b in zip(s.x, s.y, s.band)]
            lower = [f"{px(x):.1f},{py(y - b):.1f}"
                     for x, y, b in zip(s.x[::-1], s.y[::-1], s.band[::-1])]
            parts.append(f'<polygon points="{" ".join(upper + lower)}" '
                         f'fill="{color}" fill-opacity="0.18" stroke="none"/>')
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(s.x, s.y))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        ly = _MT + 16 * i
        parts.append(f'<line x1="{_W - _MR - 150}" y1="{ly}" '
                     f'x2="{_W - _MR - 130}" y2="{ly}" stroke="{color}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{_W - _MR - 125}" y="{ly + 4}">{s.label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
