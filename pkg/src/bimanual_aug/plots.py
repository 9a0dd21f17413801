"""Minimal SVG line plots of end-effector traces (top-down x/y view)."""

from __future__ import annotations

from typing import Dict, Sequence
from xml.sax.saxutils import escape

import numpy as np

COLORS = {"left": "#1f77b4", "right": "#d62728", "robot": "#2ca02c", "human": "#ff7f0e"}


def ee_trace_svg(traces: Dict[str, Sequence[Sequence[float]]], title: str = "", size: int = 400,
                 margin: int = 30) -> str:
    """Polyline per named trace of world xy points, sharing one equal-aspect frame."""
    pts = [np.asarray(t, dtype=np.float64)[:, :2] for t in traces.values() if len(t)]
    if pts:
        allp = np.vstack(pts)
        lo, hi = allp.min(axis=0), allp.max(axis=0)
    else:
        lo, hi = np.zeros(2), np.ones(2)
    span = float(max(hi - lo)) or 1.0
    scale = (size - 2 * margin) / span

    def xy(p):
        # y grows upward in the plot
        return margin + (p[0] - lo[0]) * scale, size - margin - (p[1] - lo[1]) * scale

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>']
    if title:
        out.append(f'<text x="{margin}" y="{margin - 10}" font-size="12">{escape(title)}</text>')
    for k, (name, t) in enumerate(traces.items()):
        a = np.asarray(t, dtype=np.float64)
        if not len(a):
            continue
        color = COLORS.get(name, "#444444")
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in map(xy, a[:, :2]))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        sx, sy = xy(a[0])
        out.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="3" fill="{color}"/>')
        out.append(f'<text x="{size - margin - 60}" y="{margin + 14 * k}" font-size="11" '
                   f'fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
