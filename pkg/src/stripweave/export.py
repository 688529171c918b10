"""SVG cutting patterns, papercraft kit pages and strain-field exports."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .bspline import BSplineManifold2D, bezier_segments, elevate_bezier

SVG_HEAD = '<?xml version="1.0" encoding="UTF-8"?>\n'
SVG_NS = 'xmlns="http://www.w3.org/2000/svg" version="1.1"'


class ExportError(ValueError):
    pass


def fmt(x: float) -> str:
    """Fixed six decimals, never exponent notation, no negative zero."""
    s = f"{float(x):.6f}"
    return "0.000000" if s == "-0.000000" else s


def _edge_segments(space, control) -> list[np.ndarray]:
    return [elevate_bezier(seg, 3) for seg in bezier_segments(space, control)]


def boundary_beziers(m: BSplineManifold2D) -> list[np.ndarray]:
    """Closed counter-clockwise (in parameter space) boundary as cubic Bezier segments ``(4, 2)``."""
    p1, p2 = m.degrees
    if p1 > 3 or p2 > 3:
        raise ExportError(f"degrees {m.degrees} exceed 3; cannot emit cubic paths")
    if p1 < 1 or p2 < 1:
        raise ExportError("boundary extraction needs degree >= 1 in both directions")
    P = m.control
    bottom = _edge_segments(m.space1, P[:, 0])
    right = _edge_segments(m.space2, P[-1, :])
    top = [seg[::-1] for seg in reversed(_edge_segments(m.space1, P[:, -1]))]
    left = [seg[::-1] for seg in reversed(_edge_segments(m.space2, P[0, :]))]
    return [np.array(seg, dtype=float) for seg in bottom + right + top + left]


def sample_bezier(seg: np.ndarray, t) -> np.ndarray:
    """Evaluate a cubic segment at parameters ``t`` (de Casteljau)."""
    t = np.asarray(t, dtype=float)[:, None]
    pts = [seg[i] * np.ones_like(t) for i in range(len(seg))]
    while len(pts) > 1:
        pts = [(1 - t) * a + t * b for a, b in zip(pts[:-1], pts[1:])]
    return pts[0]


def path_data(segments: list[np.ndarray], transform=None) -> str:
    """SVG path ``d`` attribute; ``transform`` maps ``(n, 2)`` model points to user units."""
    transform = transform or (lambda x: x)
    segs = [transform(np.asarray(s, dtype=float)) for s in segments]
    parts = [f"M {fmt(segs[0][0, 0])} {fmt(segs[0][0, 1])}"]
    for s in segs:
        parts.append("C " + " ".join(f"{fmt(x)} {fmt(y)}" for x, y in s[1:]))
    parts.append("Z")
    return " ".join(parts)


@dataclass(frozen=True)
class StripStyle:
    scale: float = 100.0          # mm per model unit
    margin: float = 5.0           # mm around the drawing
    stroke: str = "#000000"
    stroke_width: float = 0.2     # mm


def _bbox(points: np.ndarray) -> tuple[float, float, float, float]:
    return (float(points[:, 0].min()), float(points[:, 1].min()),
            float(points[:, 0].max()), float(points[:, 1].max()))


def export_strip_svg(m: BSplineManifold2D, style: StripStyle | None = None) -> str:
    """Single strip in mm; the canvas is the control-polygon bounding box plus margin."""
    style = style or StripStyle()
    segs = boundary_beziers(m)
    pts = np.concatenate(segs) * style.scale
    x0, y0, x1, y1 = _bbox(pts)
    mg = style.margin
    w, h = x1 - x0 + 2 * mg, y1 - y0 + 2 * mg
    d = path_data(segs, lambda p: p * style.scale)
    return (SVG_HEAD
            + f'<svg {SVG_NS} width="{fmt(w)}mm" height="{fmt(h)}mm" '
              f'viewBox="{fmt(x0 - mg)} {fmt(y0 - mg)} {fmt(w)} {fmt(h)}">\n'
            + f'<path d="{d}" fill="none" stroke="{style.stroke}" stroke-width="{fmt(style.stroke_width)}"/>\n'
            + "</svg>\n")


# ---------------------------------------------------------------------------
# kit pages


@dataclass(frozen=True)
class Placement:
    index: int
    page: int
    angle: float                      # rotation applied before translation (radians)
    offset: tuple[float, float]       # mm
    bbox: tuple[float, float, float, float]  # placed box in mm (x0, y0, x1, y1)


@dataclass
class KitLayout:
    page_width: float = 210.0
    page_height: float = 297.0
    margin: float = 10.0
    scale: float = 100.0
    spacing: float = 5.0
    stroke_width: float = 0.2
    label_size: float = 4.0
    labels: list | None = None
    placements: list = field(default_factory=list)


@dataclass(frozen=True)
class Kit:
    pages: list
    placements: list


def chord_angle(m: BSplineManifold2D) -> float:
    """Direction of the center-curve chord (start to end of the mid-breadth line)."""
    a1, b1 = m.space1.domain
    a2, b2 = m.space2.domain
    mid = 0.5 * (a2 + b2)
    p = m.evaluate(np.array([a1, b1]), np.array([mid, mid]))
    d = p[1] - p[0]
    return math.atan2(d[1], d[0])


def _rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def boxes_disjoint(a, b) -> bool:
    return a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1]


def export_kit(strips: list[BSplineManifold2D], layout: KitLayout | None = None) -> Kit:
    """Shelf-pack strips (center chord horizontal) onto pages; returns SVG page texts and placements."""
    layout = layout or KitLayout()
    labels = layout.labels or [str(i) for i in range(len(strips))]
    if len(labels) != len(strips):
        raise ExportError("one label per strip required")
    W, H, mg, gap = layout.page_width, layout.page_height, layout.margin, layout.spacing
    placed, page_items = [], [[]]
    x = y = mg
    row_h = 0.0
    page = 0
    for idx, m in enumerate(strips):
        angle = -chord_angle(m)
        R = _rotation(angle)
        segs = [seg @ R.T * layout.scale for seg in boundary_beziers(m)]
        bx0, by0, bx1, by1 = _bbox(np.concatenate(segs))
        w, h = bx1 - bx0, by1 - by0
        if w > W - 2 * mg or h > H - 2 * mg:
            raise ExportError(f"strip {labels[idx]} ({w:.1f} x {h:.1f} mm) does not fit the page")
        if x + w > W - mg:
            x, y, row_h = mg, y + row_h + gap, 0.0
        if y + h > H - mg:
            page += 1
            page_items.append([])
            x, y, row_h = mg, mg, 0.0
        off = (x - bx0, y - by0)
        pl = Placement(idx, page, angle, off, (x, y, x + w, y + h))
        placed.append(pl)
        page_items[page].append((pl, [s + np.array(off) for s in segs], labels[idx]))
        x += w + gap
        row_h = max(row_h, h)
    layout.placements = placed
    pages = [_kit_page(items, layout) for items in page_items]
    return Kit(pages, placed)


def _kit_page(items, layout: KitLayout) -> str:
    out = io.StringIO()
    out.write(SVG_HEAD)
    out.write(f'<svg {SVG_NS} width="{fmt(layout.page_width)}mm" height="{fmt(layout.page_height)}mm" '
              f'viewBox="0 0 {fmt(layout.page_width)} {fmt(layout.page_height)}">\n')
    for pl, segs, label in items:
        out.write(f'<path id="strip-{pl.index}" d="{path_data(segs)}" fill="none" stroke="#000000" '
                  f'stroke-width="{fmt(layout.stroke_width)}"/>\n')
        cx = 0.5 * (pl.bbox[0] + pl.bbox[2])
        cy = 0.5 * (pl.bbox[1] + pl.bbox[3])
        out.write(f'<text x="{fmt(cx)}" y="{fmt(cy)}" font-size="{fmt(layout.label_size)}" '
                  f'text-anchor="middle" dominant-baseline="middle">{label}</text>\n')
    out.write("</svg>\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# strain fields

CSV_COLUMNS = ("u1", "u2", "x", "y", "E11o", "E22o", "E12o", "density")
HEATMAP_FLOOR = 1e-12  # |E11| limits below this are rounding noise; drawn as unstrained


def _check_field(fld) -> None:
    if fld.xy.size == 0 or len(fld.u1) == 0 or len(fld.u2) == 0:
        raise ExportError("empty strain field")


def export_strain_csv(fld) -> str:
    """One row per sample, ``u1`` major; LF line endings."""
    _check_field(fld)
    out = io.StringIO()
    out.write(",".join(CSV_COLUMNS) + "\n")
    E = fld.E_ortho
    for i, u1 in enumerate(fld.u1):
        for j, u2 in enumerate(fld.u2):
            row = (u1, u2, fld.xy[i, j, 0], fld.xy[i, j, 1],
                   E[i, j, 0, 0], E[i, j, 1, 1], E[i, j, 0, 1], fld.density[i, j])
            out.write(",".join(f"{float(v):.17g}" for v in row) + "\n")
    return out.getvalue()


_NEG = np.array([59.0, 76.0, 192.0])
_MID = np.array([255.0, 255.0, 255.0])
_POS = np.array([180.0, 4.0, 38.0])


def diverging_color(t: float) -> str:
    """``t`` in ``[-1, 1]`` to a blue-white-red hex colour."""
    t = min(1.0, max(-1.0, float(t)))
    end = _POS if t > 0 else _NEG
    rgb = _MID + abs(t) * (end - _MID)
    return "#" + "".join(f"{int(round(c)):02x}" for c in rgb)


def _dual_corners(xy: np.ndarray) -> np.ndarray:
    """Cell corners around every sample: means of the (index-clamped) neighbouring samples."""
    n, m = xy.shape[:2]
    ia = np.clip(np.arange(n + 1)[:, None] + np.array([-1, 0]), 0, n - 1)
    ja = np.clip(np.arange(m + 1)[:, None] + np.array([-1, 0]), 0, m - 1)
    P = xy[ia[:, :, None, None], ja[None, None, :, :]]  # (n+1, 2, m+1, 2, 2)
    return P.mean(axis=(1, 3))


def export_strain_heatmap(fld, scale: float = 100.0, margin: float = 5.0) -> str:
    """One filled quad per sample coloured by ``E11`` in the orthonormal frame, limits ``+-max|E11|``."""
    _check_field(fld)
    E11 = fld.E_ortho[..., 0, 0]
    vmax = float(np.max(np.abs(E11)))
    C = _dual_corners(np.asarray(fld.xy, dtype=float)) * scale
    x0, y0, x1, y1 = _bbox(C.reshape(-1, 2))
    w, h = x1 - x0 + 2 * margin, y1 - y0 + 2 * margin
    out = io.StringIO()
    out.write(SVG_HEAD)
    out.write(f'<svg {SVG_NS} width="{fmt(w)}mm" height="{fmt(h)}mm" '
              f'viewBox="{fmt(x0 - margin)} {fmt(y0 - margin)} {fmt(w)} {fmt(h)}">\n')
    out.write(f'<desc>E11 limits {vmax:.6e}</desc>\n')
    n, m = E11.shape
    for i in range(n):
        for j in range(m):
            quad = (C[i, j], C[i + 1, j], C[i + 1, j + 1], C[i, j + 1])
            pts = " ".join(f"{fmt(px)},{fmt(py)}" for px, py in quad)
            color = diverging_color(E11[i, j] / vmax if vmax > HEATMAP_FLOOR else 0.0)
            out.write(f'<polygon points="{pts}" fill="{color}" stroke="none"/>\n')
    out.write("</svg>\n")
    return out.getvalue()
