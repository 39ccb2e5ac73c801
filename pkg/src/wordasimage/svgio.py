"""SVG serialization of glyph paths and debug overlays.

All subpaths of a glyph are emitted as M/C/Z groups inside a single path
element so the nonzero fill rule carves counters out of outer contours.
Coordinates are written y-flipped into the em viewBox (SVG y grows down);
parsing our own output restores the original em coordinates.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET

import numpy as np

from .errors import MissingArtifact, WordAsImageError
from .fonts import GlyphPath, Subpath


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def path_d(path: GlyphPath, dx: float = 0.0) -> str:
    """SVG path data, one closed cubic run per subpath, y flipped."""
    parts = []
    for sp in path.subpaths:
        first = path.points[sp.start]
        parts.append(f"M {_fmt(first[0] + dx)} {_fmt(1.0 - first[1])}")
        for s in range(sp.n_segments):
            _, c1, c2, p3 = (path.points[i] for i in sp.segment_indices(s))
            parts.append(
                "C "
                + " ".join(
                    f"{_fmt(q[0] + dx)} {_fmt(1.0 - q[1])}" for q in (c1, c2, p3)
                )
            )
        parts.append("Z")
    return " ".join(parts)


def export_svg(path: GlyphPath, out_path) -> None:
    """Write a standalone SVG of the glyph (em viewBox, black nonzero fill)."""
    if not path.subpaths or path.point_count == 0:
        raise WordAsImageError("cannot export an empty path")
    doc = (
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 1 1" '
        f'data-letter="{_xml_escape(path.letter)}" '
        f'data-font-id="{_xml_escape(path.font_id)}" '
        f'data-advance="{_fmt(path.advance)}">\n'
        f'  <path d="{path_d(path)}" fill="black" fill-rule="nonzero"/>\n'
        "</svg>\n"
    )
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(doc)


def _xml_escape(s: str) -> str:
    return (
        s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        .replace('"', "&quot;")
    )


_TOKEN = re.compile(r"[MCZ]|[-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?")


def parse_path_d(d: str) -> tuple[np.ndarray, tuple[Subpath, ...]]:
    """Parse absolute M/C/Z path data back into shared-endpoint cubics."""
    tokens = _TOKEN.findall(d)
    pos = 0

    def take_floats(n):
        nonlocal pos
        vals = [float(t) for t in tokens[pos : pos + n]]
        if len(vals) != n:
            raise WordAsImageError("truncated path data")
        pos += n
        return vals

    points: list[np.ndarray] = []
    subpaths: list[Subpath] = []
    current: list[np.ndarray] = []
    start_pt = None

    def close_subpath():
        nonlocal current, start_pt
        if start_pt is None:
            return
        if not current:
            raise WordAsImageError("empty subpath in path data")
        if np.linalg.norm(current[-1] - start_pt) > 1e-9:
            raise WordAsImageError("subpath does not close onto its start")
        flat = sum(len(c) for c in points)
        n = (len(current) - 1) // 3
        for q in current[:-1]:
            points.append(q[None, :])
        subpaths.append(Subpath(start=flat, n_segments=n))
        current = []
        start_pt = None

    while pos < len(tokens):
        tok = tokens[pos]
        if tok == "M":
            pos += 1
            close_subpath()
            x, y = take_floats(2)
            start_pt = np.array([x, 1.0 - y])
            current = [start_pt]
        elif tok == "C":
            pos += 1
            if start_pt is None:
                raise WordAsImageError("C before M in path data")
            vals = take_floats(6)
            for i in range(3):
                current.append(np.array([vals[2 * i], 1.0 - vals[2 * i + 1]]))
        elif tok == "Z":
            pos += 1
            close_subpath()
        else:
            raise WordAsImageError(f"unsupported path token {tok!r}")
    close_subpath()
    if not subpaths:
        raise WordAsImageError("no subpaths in path data")
    return np.concatenate(points, axis=0), tuple(subpaths)


def parse_svg(svg_path) -> GlyphPath:
    """Load a glyph from an SVG produced by :func:`export_svg`."""
    try:
        tree = ET.parse(svg_path)
    except (ET.ParseError, OSError) as exc:
        raise MissingArtifact(f"cannot read SVG {svg_path}: {exc}") from exc
    root = tree.getroot()
    ns = {"svg": "http://www.w3.org/2000/svg"}
    el = root.find("svg:path", ns)
    if el is None:
        el = root.find("path")
    if el is None:
        raise WordAsImageError(f"no path element in {svg_path}")
    points, subpaths = parse_path_d(el.get("d", ""))
    return GlyphPath(
        points=points,
        subpaths=subpaths,
        letter=root.get("data-letter", "?"),
        font_id=root.get("data-font-id", ""),
        advance=float(root.get("data-advance", "0")),
    )


def compose_svg(entries: list[tuple[GlyphPath, float]], total_advance: float, out_path) -> None:
    """Compose letters at given x offsets (em units) on a shared baseline."""
    if not entries:
        raise WordAsImageError("nothing to compose")
    width = max(total_advance, 1e-6)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_fmt(width)} 1">'
    ]
    for glyph, dx in entries:
        parts.append(
            f'  <path d="{path_d(glyph, dx=dx)}" fill="black" fill-rule="nonzero"/>'
        )
    parts.append("</svg>\n")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))


def triangulation_overlay_svg(path: GlyphPath, tri, out_path) -> None:
    """Glyph silhouette with the triangulation stroked on top (debug view)."""
    lines = []
    pts = path.points
    for t in tri.triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            lines.append(
                f'  <line x1="{_fmt(pts[a][0])}" y1="{_fmt(1 - pts[a][1])}" '
                f'x2="{_fmt(pts[b][0])}" y2="{_fmt(1 - pts[b][1])}" '
                'stroke="#d04000" stroke-width="0.003"/>'
            )
    doc = [
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 1 1">',
        f'  <path d="{path_d(path)}" fill="#cccccc" fill-rule="nonzero"/>',
        *lines,
        "</svg>\n",
    ]
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(doc))
