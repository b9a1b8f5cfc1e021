"""SVG skeleton rendering of tracked hands.

Landmark circles encode depth: the wrist (z = 0) gets the base radius, and
points closer to the camera (negative z) are drawn larger and lighter.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable
from xml.sax.saxutils import escape

import numpy as np

from .types import HAND_CONNECTIONS, HandLandmarks

BASE_RADIUS = 4.0
MIN_SCALE = 0.25
MAX_SCALE = 3.0
HAND_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def landmark_radius(z: float, base: float = BASE_RADIUS) -> float:
    return base * float(np.clip(1.0 - z, MIN_SCALE, MAX_SCALE))


def landmark_shade(z: float) -> str:
    """Gray level: mid gray at the wrist depth, lighter toward the camera."""
    level = int(round(np.clip(128 - 160 * z, 40, 235)))
    return f"#{level:02x}{level:02x}{level:02x}"


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(hands: Iterable[tuple[int, HandLandmarks, str]], width: int = 640, height: int = 640,
               title: str = "") -> str:
    """One SVG document; ``hands`` yields (id, landmarks, label) per hand."""
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="black"/>',
    ]
    if title:
        out.append(f"<title>{escape(title)}</title>")
    for hand_id, lm, label in hands:
        color = HAND_COLORS[hand_id % len(HAND_COLORS)]
        px = np.asarray(lm.points[:, 0]) * width
        py = np.asarray(lm.points[:, 1]) * height
        out.append(f'<g class="hand" data-id="{hand_id}" data-label="{escape(label)}">')
        for a, b in HAND_CONNECTIONS:
            out.append(
                f'<line x1="{_fmt(px[a])}" y1="{_fmt(py[a])}" x2="{_fmt(px[b])}" y2="{_fmt(py[b])}" '
                f'stroke="{color}" stroke-width="2"/>'
            )
        # Far points first so nearer circles are drawn on top.
        for i in sorted(range(len(px)), key=lambda k: -lm.points[k, 2]):
            z = float(lm.points[i, 2])
            out.append(
                f'<circle data-index="{i}" cx="{_fmt(px[i])}" cy="{_fmt(py[i])}" '
                f'r="{_fmt(landmark_radius(z))}" fill="{landmark_shade(z)}"/>'
            )
        out.append(
            f'<text x="{_fmt(px[0])}" y="{_fmt(py[0] + 16)}" fill="{color}" font-size="12">'
            f"{hand_id}: {escape(label)}</text>"
        )
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_tracks(records, out_dir: str | Path, width: int = 640, height: int = 640) -> list[Path]:
    """Write frame_00000.svg, ... for each track record; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for n, rec in enumerate(records):
        hands = [(h.id, h.landmarks, getattr(h.gesture, "value", str(h.gesture))) for h in rec.hands]
        path = out_dir / f"frame_{n:05d}.svg"
        path.write_text(render_svg(hands, width, height, title=f"t={rec.timestamp}us"))
        paths.append(path)
    return paths
