"""Minimal static SVG scatter and trace plots (no plotting dependency)."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

_W, _H, _PAD = 480, 360, 48
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _scale(v, lo, hi, a, b):
    span = hi - lo if hi > lo else 1.0
    return a + (np.asarray(v, dtype=float) - lo) / span * (b - a)


def _frame(title, xlabel, ylabel, xlim, ylim):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" font-family="sans-serif" font-size="11">',
        f'<rect x="{_PAD}" y="{_PAD // 2}" width="{_W - 1.5 * _PAD}" height="{_H - 1.5 * _PAD}" fill="none" stroke="#444"/>',
        f'<text x="{_W / 2}" y="14" text-anchor="middle">{title}</text>',
        f'<text x="{_W / 2}" y="{_H - 6}" text-anchor="middle">{xlabel} [{xlim[0]:.3g}, {xlim[1]:.3g}]</text>',
        f'<text x="12" y="{_H / 2}" transform="rotate(-90 12 {_H / 2})" text-anchor="middle">'
        f"{ylabel} [{ylim[0]:.3g}, {ylim[1]:.3g}]</text>",
    ]


def scatter(path: Path, x, y, title="", xlabel="true", ylabel="estimate", diagonal=True) -> Path:
    x, y = np.asarray(x, float).ravel(), np.asarray(y, float).ravel()
    lo, hi = float(min(x.min(), y.min())), float(max(x.max(), y.max()))
    parts = _frame(title, xlabel, ylabel, (lo, hi), (lo, hi))
    px = _scale(x, lo, hi, _PAD, _W - _PAD / 2)
    py = _scale(y, lo, hi, _H - _PAD, _PAD / 2)
    if diagonal:
        parts.append(f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD / 2}" y2="{_PAD / 2}" stroke="#999" stroke-dasharray="4"/>')
    parts += [f'<circle cx="{a:.1f}" cy="{b:.1f}" r="1.5" fill="{_COLORS[0]}" fill-opacity="0.5"/>' for a, b in zip(px, py)]
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
    return Path(path)


def traces(path: Path, series: Sequence[Sequence[float]], title="", xlabel="iteration", ylabel="value") -> Path:
    series = [np.asarray(s, float) for s in series]
    n = max(len(s) for s in series)
    lo = float(min(s.min() for s in series))
    hi = float(max(s.max() for s in series))
    parts = _frame(title, xlabel, ylabel, (0, n - 1), (lo, hi))
    for k, s in enumerate(series):
        step = max(1, len(s) // 1000)
        idx = np.arange(0, len(s), step)
        px = _scale(idx, 0, max(n - 1, 1), _PAD, _W - _PAD / 2)
        py = _scale(s[idx], lo, hi, _H - _PAD, _PAD / 2)
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(px, py))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{_COLORS[k % len(_COLORS)]}" stroke-width="1"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
    return Path(path)
