"""Font outline ingestion: parse a glyph, convert to cubics, subdivide.

Pipeline: ``load_glyph`` extracts closed contours in font units,
``to_cubics`` normalizes them into a :class:`GlyphPath` of cubic segments in
em-box coordinates (y-up, em box = [0,1]^2), and ``subdivide_to_target``
densifies the control points without changing the traced curve.
"""

from __future__ import annotations

import hashlib
import io
import warnings
from dataclasses import dataclass, replace

import numpy as np
from fontTools.ttLib import TTFont

from . import bezier
from .errors import (
    EmptyGlyph,
    MissingGlyph,
    TargetUnreachableWarning,
    UnsupportedFont,
)

# segment kinds stored in GlyphOutline
LINE = "line"
QUAD = "quad"
CUBIC = "cubic"


@dataclass(frozen=True)
class GlyphOutline:
    """Raw closed contours of one glyph, in font units.

    Each contour is a list of ``(kind, points)`` segments where ``points``
    includes both endpoints: line (p0, p1), quad (p0, q, p1),
    cubic (p0, c1, c2, p1). Contours are closed: each segment starts where
    the previous one ends and the last ends at the first's start.
    """

    contours: tuple
    units_per_em: int
    letter: str
    font_id: str
    advance: float
    winding_rule: str = "nonzero"


@dataclass(frozen=True)
class Subpath:
    """One closed run of cubic segments inside a GlyphPath.

    Segment ``s`` of a subpath with ``n`` segments uses point indices
    ``start + 3s .. start + 3s + 2`` plus ``start + (3s + 3) % (3n)``, so
    adjacent segments share endpoints and the ring is closed.
    """

    start: int
    n_segments: int

    def point_count(self) -> int:
        return 3 * self.n_segments

    def segment_indices(self, s: int) -> tuple[int, int, int, int]:
        n = 3 * self.n_segments
        base = 3 * s
        return (
            self.start + base,
            self.start + base + 1,
            self.start + base + 2,
            self.start + (base + 3) % n,
        )


@dataclass(frozen=True)
class GlyphPath:
    """Closed cubic-Bezier subpaths over a flat control-point array.

    ``points`` is (k, 2) float64 in normalized em units, y-up. This array is
    the optimization variable; everything else is fixed topology.
    """

    points: np.ndarray
    subpaths: tuple[Subpath, ...]
    letter: str = "?"
    font_id: str = ""
    advance: float = 0.0

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)

    @property
    def point_count(self) -> int:
        return len(self.points)

    def segment(self, sp: Subpath, s: int) -> np.ndarray:
        return self.points[list(sp.segment_indices(s))]

    def iter_segments(self):
        for sp in self.subpaths:
            for s in range(sp.n_segments):
                yield sp, s, self.points[list(sp.segment_indices(s))]

    def with_points(self, points: np.ndarray) -> "GlyphPath":
        if points.shape != self.points.shape:
            raise ValueError("point array shape must be preserved")
        return replace(self, points=np.asarray(points, dtype=float))

    def subpath_point_indices(self, sp: Subpath) -> np.ndarray:
        return np.arange(sp.start, sp.start + sp.point_count())


class _ContourPen:
    """fontTools pen that records closed contours as line/quad/cubic runs."""

    def __init__(self):
        self.contours = []
        self._current = None
        self._start = None
        self._last = None

    def moveTo(self, pt):
        self._current = []
        self._start = pt
        self._last = pt

    def lineTo(self, pt):
        self._current.append((LINE, (self._last, pt)))
        self._last = pt

    def curveTo(self, *pts):
        if len(pts) == 3:
            self._current.append((CUBIC, (self._last, pts[0], pts[1], pts[2])))
            self._last = pts[2]
            return
        # Super-bezier runs (more than two off-curves) are rare in fonts.
        from fontTools.pens.basePen import decomposeSuperBezierSegment

        for c1, c2, p in decomposeSuperBezierSegment(pts):
            self._current.append((CUBIC, (self._last, c1, c2, p)))
            self._last = p

    def qCurveTo(self, *pts):
        # TrueType: any number of off-curves with implied on-curve midpoints.
        # A final None marks an all-off-curve contour delivered without a
        # moveTo; its start is the midpoint of the last and first off-curves.
        if pts[-1] is None:
            mid = ((pts[0][0] + pts[-2][0]) / 2.0, (pts[0][1] + pts[-2][1]) / 2.0)
            if self._current is None:
                self._current = []
            self._start = mid
            self._last = mid
            pts = pts[:-1] + (mid,)
        offs = pts[:-1]
        end = pts[-1]
        prev = self._last
        for i, off in enumerate(offs):
            if i < len(offs) - 1:
                nxt = offs[i + 1]
                on = ((off[0] + nxt[0]) / 2.0, (off[1] + nxt[1]) / 2.0)
            else:
                on = end
            self._current.append((QUAD, (prev, off, on)))
            prev = on
        self._last = end

    def closePath(self):
        if self._last != self._start:
            self._current.append((LINE, (self._last, self._start)))
        if self._current:
            self.contours.append(tuple(self._current))
        self._current = None

    def endPath(self):  # open paths do not occur in glyph outlines
        self.closePath()


def _font_id(font: TTFont, raw: bytes) -> str:
    try:
        name = font["name"]
        ps = name.getDebugName(6) or name.getDebugName(4) or name.getDebugName(1)
        if ps:
            return ps.replace(" ", "_")
    except Exception:
        pass
    return "font-" + hashlib.sha1(raw).hexdigest()[:12]


def load_glyph(font_bytes: bytes, ch: str) -> GlyphOutline:
    """Extract one character's closed outline contours from a font file."""
    try:
        font = TTFont(io.BytesIO(font_bytes), fontNumber=0)
        upem = int(font["head"].unitsPerEm)
        cmap = font.getBestCmap()
    except Exception as exc:  # fontTools raises many types on bad files
        raise UnsupportedFont(f"cannot parse font: {exc}") from exc
    if len(ch) != 1:
        raise MissingGlyph(f"expected a single character, got {ch!r}")
    glyph_name = cmap.get(ord(ch))
    if glyph_name is None:
        raise MissingGlyph(f"font has no glyph for {ch!r}")
    glyph_set = font.getGlyphSet()
    pen = _ContourPen()
    glyph_set[glyph_name].draw(pen)
    contours = [c for c in pen.contours if len(c) >= 1]
    if not contours:
        raise EmptyGlyph(f"glyph for {ch!r} has no contours")
    advance = float(font["hmtx"][glyph_name][0])
    return GlyphOutline(
        contours=tuple(contours),
        units_per_em=upem,
        letter=ch,
        font_id=_font_id(font, font_bytes),
        advance=advance,
    )


def to_cubics(outline: GlyphOutline) -> GlyphPath:
    """Convert an outline to shared-endpoint cubics in normalized em units."""
    scale = 1.0 / outline.units_per_em
    points = []
    subpaths = []
    for contour in outline.contours:
        segs = []
        for kind, pts in contour:
            p = [np.asarray(q, dtype=float) * scale for q in pts]
            if kind == LINE:
                if np.allclose(p[0], p[1], rtol=0.0, atol=1e-15):
                    continue  # zero-length closing line
                segs.append(bezier.line_to_cubic(p[0], p[1]))
            elif kind == QUAD:
                segs.append(bezier.quadratic_to_cubic(p[0], p[1], p[2]))
            elif kind == CUBIC:
                segs.append(np.stack(p))
            else:
                raise ValueError(f"unknown segment kind {kind!r}")
        if len(segs) < 2:
            continue  # a closed shape needs at least two segments
        flat_start = sum(len(px) for px in points)
        for seg in segs:
            points.append(seg[:3])
        subpaths.append(Subpath(start=flat_start, n_segments=len(segs)))
    if not subpaths:
        raise EmptyGlyph(f"glyph for {outline.letter!r} degenerated to nothing")
    return GlyphPath(
        points=np.concatenate(points, axis=0),
        subpaths=tuple(subpaths),
        letter=outline.letter,
        font_id=outline.font_id,
        advance=outline.advance * scale,
    )


def default_subdivision_targets() -> dict[str, int]:
    """Per-letter control-point targets: uppercase 26, lowercase 24."""
    table = {c: 26 for c in "ABCDEFGHIJKLMNOPQRSTUVWXYZ"}
    table.update({c: 24 for c in "abcdefghijklmnopqrstuvwxyz"})
    return table


def target_for(ch: str, table: dict[str, int] | None = None) -> int:
    table = table if table is not None else default_subdivision_targets()
    return int(table.get(ch, 26))


def subdivide_to_target(path: GlyphPath, target: int) -> GlyphPath:
    """Split longest segments at t=0.5 until the point count reaches target.

    Every iteration splits all segments whose arc length is within relative
    1e-9 of the maximum. The traced curve is unchanged (de Casteljau).
    """
    if target < path.point_count:
        warnings.warn(
            f"subdivision target {target} below current count {path.point_count};"
            " path returned unchanged",
            TargetUnreachableWarning,
            stacklevel=2,
        )
        return path
    per_subpath = [
        [path.segment(sp, s) for s in range(sp.n_segments)] for sp in path.subpaths
    ]
    count = path.point_count
    while count < target:
        lengths = [
            [bezier.arc_length(seg) for seg in segs] for segs in per_subpath
        ]
        longest = max(l for ls in lengths for l in ls)
        if longest <= 0.0:
            break  # fully degenerate path cannot be densified
        threshold = longest * (1.0 - 1e-9)
        new_per_subpath = []
        for segs, ls in zip(per_subpath, lengths):
            out = []
            for seg, l in zip(segs, ls):
                if l >= threshold:
                    left, right = bezier.split_cubic(seg, 0.5)
                    out.extend([left, right])
                    count += 3
                else:
                    out.append(seg)
            new_per_subpath.append(out)
        per_subpath = new_per_subpath
    points = []
    subpaths = []
    flat = 0
    for segs in per_subpath:
        for seg in segs:
            points.append(seg[:3])
        subpaths.append(Subpath(start=flat, n_segments=len(segs)))
        flat += 3 * len(segs)
    return replace(
        path,
        points=np.concatenate(points, axis=0),
        subpaths=tuple(subpaths),
    )


arc_length = bezier.arc_length


def to_json_dict(path: GlyphPath) -> dict:
    """Serialize to the interchange schema (closure point repeated)."""
    subpaths = []
    for sp in path.subpaths:
        idx = list(range(sp.start, sp.start + sp.point_count())) + [sp.start]
        pts = [[float(x), float(y)] for x, y in path.points[idx]]
        subpaths.append({"points": pts})
    return {"letter": path.letter, "font_id": path.font_id,
            "advance": path.advance, "subpaths": subpaths}


def from_json_dict(doc: dict) -> GlyphPath:
    """Load the interchange schema; re-deduplicates endpoints (tol 1e-9)."""
    points = []
    subpaths = []
    flat = 0
    for sub in doc["subpaths"]:
        pts = np.asarray(sub["points"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
            raise ValueError("subpath must be an (n, 2) list of at least 4 points")
        if len(pts) % 4 == 0 and _looks_unshared(pts):
            pts = _merge_unshared(pts)  # every segment spelled 4 points
        elif np.linalg.norm(pts[-1] - pts[0]) <= 1e-9:
            pts = pts[:-1]  # repeated closure point
        if len(pts) % 3 != 0:
            raise ValueError("subpath length is not consistent with closed cubics")
        n = len(pts) // 3
        points.append(pts)
        subpaths.append(Subpath(start=flat, n_segments=n))
        flat += 3 * n
    return GlyphPath(
        points=np.concatenate(points, axis=0),
        subpaths=tuple(subpaths),
        letter=doc.get("letter", "?"),
        font_id=doc.get("font_id", ""),
        advance=float(doc.get("advance", 0.0)),
    )


def _looks_unshared(pts: np.ndarray) -> bool:
    n = len(pts) // 4
    joints = [(4 * s + 3, (4 * s + 4) % len(pts)) for s in range(n)]
    return all(np.linalg.norm(pts[a] - pts[b]) <= 1e-9 for a, b in joints)


def _merge_unshared(pts: np.ndarray) -> np.ndarray:
    n = len(pts) // 4
    keep = []
    for s in range(n):
        keep.extend([4 * s, 4 * s + 1, 4 * s + 2])
    return pts[keep]
