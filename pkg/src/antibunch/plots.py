"""Minimal hand-emitted SVG line/step charts (no plotting dependency)."""

from __future__ import annotations

import numpy as np

__all__ = ["write_line_svg"]

_W, _H = 800, 500
_MARGIN = 60


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo
    if span == 0:
        span = 1.0
    return out_lo + (np.asarray(values, dtype=float) - lo) * (out_hi - out_lo) / span


def write_line_svg(path, x, y, title="", xlabel="", ylabel="", step=False) -> None:
    """Write a single-series line (or step) chart."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0:
        raise ValueError("nothing to plot")
    x_lo, x_hi = float(x.min()), float(x.max())
    y_lo, y_hi = float(min(y.min(), 0.0)), float(y.max())
    px = _scale(x, x_lo, x_hi, _MARGIN, _W - _MARGIN / 2)
    py = _scale(y, y_lo, y_hi, _H - _MARGIN, _MARGIN / 2)
    if step:
        points = []
        for i in range(x.size - 1):
            points.append((px[i], py[i]))
            points.append((px[i + 1], py[i]))
        points.append((px[-1], py[-1]))
    else:
        points = list(zip(px, py))
    poly = " ".join(f"{a:.1f},{b:.1f}" for a, b in points)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<line x1="{_MARGIN}" y1="{_H - _MARGIN}" x2="{_W - _MARGIN / 2:.0f}" '
        f'y2="{_H - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_H - _MARGIN}" x2="{_MARGIN}" '
        f'y2="{_MARGIN / 2:.0f}" stroke="black"/>',
        f'<polyline points="{poly}" fill="none" stroke="#1f6fb2" stroke-width="1.2"/>',
        f'<text x="{_W / 2:.0f}" y="24" text-anchor="middle" font-size="16">'
        f"{title}</text>",
        f'<text x="{_W / 2:.0f}" y="{_H - 16}" text-anchor="middle" font-size="13">'
        f"{xlabel}</text>",
        f'<text x="18" y="{_H / 2:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 18 {_H / 2:.0f})">{ylabel}</text>',
        f'<text x="{_MARGIN}" y="{_H - _MARGIN + 16}" font-size="11">{x_lo:.6g}</text>',
        f'<text x="{_W - _MARGIN / 2:.0f}" y="{_H - _MARGIN + 16}" font-size="11" '
        f'text-anchor="end">{x_hi:.6g}</text>',
        f'<text x="{_MARGIN - 6}" y="{_H - _MARGIN}" font-size="11" '
        f'text-anchor="end">{y_lo:.6g}</text>',
        f'<text x="{_MARGIN - 6}" y="{_MARGIN / 2 + 4:.0f}" font-size="11" '
        f'text-anchor="end">{y_hi:.6g}</text>',
        "</svg>",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
