"""Path overlays: robot paths drawn over the field as an SVG."""
from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
from PIL import Image

from ..field import Field, GridSpec
from ..team import Partition, TrialResult

SCALE = 8.0  # SVG pixels per meter
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#bcbd22", "#17becf", "#7f7f7f")
_CROSS = 3.0


def to_svg_xy(x: float, y: float, grid: GridSpec) -> tuple[float, float]:
    """Workspace meters to SVG coordinates (y axis pointing down)."""
    return x * SCALE, (grid.height_m - y) * SCALE


def from_svg_xy(sx: float, sy: float, grid: GridSpec) -> tuple[float, float]:
    return sx / SCALE, grid.height_m - sy / SCALE


def _background(field: Field) -> str:
    # row 0 of the raster is the bottom of the workspace; images run top-down
    pixels = np.round(np.flipud(field.values) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="L").save(buf, format="PNG", optimize=False)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _pt(x: float, y: float) -> str:
    return f"{x:.2f},{y:.2f}"


def paths_svg(result: TrialResult, field: Field) -> str:
    grid = field.grid
    w, h = grid.width_m * SCALE, grid.height_m * SCALE
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
           f'width="{w:.0f}" height="{h:.0f}" viewBox="0 0 {w:.0f} {h:.0f}">',
           f'<image class="field" x="0" y="0" width="{w:.0f}" height="{h:.0f}" preserveAspectRatio="none" '
           f'style="image-rendering:pixelated" xlink:href="data:image/png;base64,{_background(field)}"/>']
    if result.partition is not None:
        part = Partition(grid, tuple(tuple(s) for s in result.starts), np.asarray(result.partition))
        for (ax, ay), (bx, by) in part.boundary_segments():
            a, b = to_svg_xy(ax, ay, grid), to_svg_xy(bx, by, grid)
            out.append(f'<polyline class="boundary" points="{_pt(*a)} {_pt(*b)}" fill="none" '
                       f'stroke="#ffffff" stroke-width="2"/>')
    for rid, path in enumerate(result.paths):
        color = PALETTE[rid % len(PALETTE)]
        pts = [to_svg_xy(*grid.cell_center(tuple(c)), grid) for c in path]
        if len(pts) > 1:
            out.append(f'<polyline class="path" data-robot="{rid}" points="{" ".join(_pt(*p) for p in pts)}" '
                       f'fill="none" stroke="{color}" stroke-width="2"/>')
            d = " ".join(f"M{x - _CROSS:.2f} {y - _CROSS:.2f}L{x + _CROSS:.2f} {y + _CROSS:.2f}"
                         f"M{x - _CROSS:.2f} {y + _CROSS:.2f}L{x + _CROSS:.2f} {y - _CROSS:.2f}"
                         for x, y in pts[1:])
            out.append(f'<path class="cross" data-robot="{rid}" d="{d}" stroke="{color}" stroke-width="1.5"/>')
    for rid, start in enumerate(result.starts):
        x, y = to_svg_xy(*grid.cell_center(tuple(start)), grid)
        out.append(f'<circle class="start" data-robot="{rid}" cx="{x:.2f}" cy="{y:.2f}" r="4" fill="#000000"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_paths(result: TrialResult, field: Field, out) -> Path:
    """Write the path overlay of ``result`` on ``field`` to ``out``.

    Raises ``OSError`` when ``out`` cannot be written.
    """
    out = Path(out)
    out.write_text(paths_svg(result, field))
    return out
