"""Static SVG output: per-scene prediction overlays and training curves."""
from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT, PAD = 640, 320, 40
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _header(title: str, stamp: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f"<!-- {escape(stamp)} -->",
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{PAD}" y="22" font-family="sans-serif" font-size="13">{escape(title)}</text>',
    ]


def _scaler(points: np.ndarray):
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    sx = (WIDTH - 2 * PAD) / span[0]
    sy = (HEIGHT - 2 * PAD) / span[1]

    def to_px(p):
        p = np.atleast_2d(p)
        x = PAD + (p[:, 0] - lo[0]) * sx
        y = HEIGHT - PAD - (p[:, 1] - lo[1]) * sy
        return np.stack([x, y], axis=1)
    return to_px


def _polyline(px: np.ndarray, color: str, dash: str | None = None, width: float = 2.0) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in px)
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'


def scene_svg(history: np.ndarray, future: np.ndarray, predicted: np.ndarray, probs: Sequence[float],
              maneuver_names: Sequence[str], title: str, stamp: str) -> str:
    """Observed history, ground truth and the top mode, with per-maneuver probabilities.

    Lateral offsets are small next to highway distances, so the y axis is
    stretched independently of x.
    """
    history, future, predicted = (np.asarray(a, dtype=np.float64) for a in (history, future, predicted))
    to_px = _scaler(np.vstack([history, future, predicted]))
    out = _header(title, stamp)
    out.append(_polyline(to_px(history), "#444444"))
    out.append(_polyline(to_px(np.vstack([history[-1:], future])), "#2ca02c"))
    out.append(_polyline(to_px(np.vstack([history[-1:], predicted])), "#d62728", dash="6,4"))
    top = int(np.argmax(probs))
    for i, (name, p) in enumerate(zip(maneuver_names, probs)):
        weight = "bold" if i == top else "normal"
        out.append(f'<text x="{WIDTH - 170}" y="{44 + 15 * i}" font-family="sans-serif" font-size="11" '
                   f'font-weight="{weight}">{escape(name)}: {p:.3f}</text>')
    legend = (("history", "#444444"), ("ground truth", "#2ca02c"), ("top mode", "#d62728"))
    for i, (name, color) in enumerate(legend):
        y = HEIGHT - 12
        x = PAD + 130 * i
        out.append(f'<line x1="{x}" y1="{y - 4}" x2="{x + 20}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x + 26}" y="{y}" font-family="sans-serif" font-size="11">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def curves_svg(series: dict[str, np.ndarray], title: str, stamp: str, log_scale: bool = False) -> str:
    """One polyline per named series against step index."""
    out = _header(title, stamp)
    values = [np.asarray(v, dtype=np.float64) for v in series.values()]
    if not values or not any(len(v) for v in values):
        out.append("</svg>")
        return "\n".join(out) + "\n"
    if log_scale:
        values = [np.log10(np.maximum(np.abs(v), 1e-12)) for v in values]
    n = max(len(v) for v in values)
    pts = np.vstack([np.stack([np.arange(len(v)), v], axis=1) for v in values if len(v)])
    pts = np.vstack([pts, [[0, pts[:, 1].min()], [max(n - 1, 1), pts[:, 1].max()]]])
    to_px = _scaler(pts)
    for i, (name, v) in enumerate(zip(series, values)):
        if not len(v):
            continue
        color = COLORS[i % len(COLORS)]
        out.append(_polyline(to_px(np.stack([np.arange(len(v)), v], axis=1)), color, width=1.2))
        out.append(f'<text x="{WIDTH - 150}" y="{44 + 15 * i}" font-family="sans-serif" font-size="11" '
                   f'fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
