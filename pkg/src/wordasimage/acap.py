"""Interior triangulation and the angle-preservation (ACAP) loss.

The glyph interior is triangulated once over the initial control points,
with the control polygon of every subpath as constraint edges; the fixed
connectivity is then reused to compare corner angles between the original
and deformed point sets. The loss is the mean (over control points) of the
summed squared differences of all incident corner angles; it is zero for
any similarity transform of the points.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
import shapely
from shapely.geometry import Polygon

from .errors import DegenerateGeometry, SelfIntersecting, SizeMismatch
from .errors import DegenerateTriangleWarning
from .fonts import GlyphPath

_MIN_AREA = 1e-12
_LEN2_CLAMP = 1e-24  # squared-edge-length clamp, i.e. edge lengths >= 1e-12


def points_hash(points: np.ndarray) -> str:
    return hashlib.sha256(
        np.ascontiguousarray(points, dtype=np.float64).tobytes()
    ).hexdigest()


@dataclass(frozen=True)
class Triangulation:
    """Fixed triangle connectivity over a control-point set.

    ``triangles`` is (T, 3) int, counterclockwise at construction time.
    ``vertex_corners[j]`` lists the (triangle, corner-slot) pairs incident
    to control point j. ``built_from`` identifies the point set the
    connectivity was derived from; loss evaluation checks it.
    """

    triangles: np.ndarray
    vertex_corners: tuple
    built_from: str
    n_points: int

    def incident_count(self, j: int) -> int:
        return len(self.vertex_corners[j])


@dataclass(frozen=True)
class AcapResult:
    loss: float
    grad: np.ndarray  # (k, 2), d loss / d P_hat


def _control_polygons(path: GlyphPath) -> list[np.ndarray]:
    return [
        np.arange(sp.start, sp.start + sp.point_count()) for sp in path.subpaths
    ]


def _segments_cross(p1, p2, p3, p4) -> bool:
    """Proper intersection test between open segments p1p2 and p3p4."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def _find_crossing_pair(points, rings):
    edges = []
    for ring in rings:
        for i in range(len(ring)):
            edges.append((ring[i], ring[(i + 1) % len(ring)]))
    for a in range(len(edges)):
        for b in range(a + 1, len(edges)):
            ia, ib = edges[a], edges[b]
            if len({ia[0], ia[1], ib[0], ib[1]}) < 4:
                continue  # shared endpoint, not a crossing
            if _segments_cross(points[ia[0]], points[ia[1]], points[ib[0]], points[ib[1]]):
                return edges[a], edges[b]
    return None


def winding_number(points: np.ndarray, rings: list[np.ndarray], q) -> int:
    """Nonzero-winding count of q w.r.t. the closed control polygons."""
    qx, qy = float(q[0]), float(q[1])
    w = 0
    for ring in rings:
        p = points[ring]
        a = p
        b = np.roll(p, -1, axis=0)
        ay, by = a[:, 1], b[:, 1]
        cross = (b[:, 0] - a[:, 0]) * (qy - ay) - (by - ay) * (qx - a[:, 0])
        up = (ay <= qy) & (qy < by) & (cross > 0)
        dn = (by <= qy) & (qy < ay) & (cross < 0)
        w += int(np.sum(up)) - int(np.sum(dn))
    return w


def triangulate_interior(path: GlyphPath) -> Triangulation:
    """Constrained Delaunay triangulation of the control-polygon interior.

    All control-polygon edges are constraints; triangles are kept only if
    their centroid sits inside the glyph under the nonzero winding rule.
    """
    points = np.asarray(path.points, dtype=float)
    rings = _control_polygons(path)

    # coincident control points cannot all become triangulation vertices
    from scipy.spatial import cKDTree

    tree = cKDTree(points)
    pairs = tree.query_pairs(1e-9)
    if pairs:
        raise DegenerateGeometry(
            f"{len(pairs)} control-point pairs closer than 1e-9 (e.g. {sorted(pairs)[0]})"
        )

    polys = []
    for ring in rings:
        poly = Polygon(points[ring])
        if not poly.is_valid:
            pair = _find_crossing_pair(points, [ring])
            if pair is not None:
                raise SelfIntersecting(
                    f"control polygon edges cross: {pair[0]} x {pair[1]}", pair
                )
            raise SelfIntersecting(f"invalid control polygon: {shapely.is_valid_reason(poly)}")
        polys.append(poly)
    cross = _find_crossing_pair(points, rings)
    if cross is not None:
        raise SelfIntersecting(
            f"control polygon edges cross: {cross[0]} x {cross[1]}", cross
        )

    # nest rings: even containment depth = filled region boundary, odd = hole
    n = len(polys)
    depth = [0] * n
    for i in range(n):
        for j in range(n):
            if i != j and polys[j].contains(polys[i]):
                depth[i] += 1
    shells = [i for i in range(n) if depth[i] % 2 == 0]
    region_polys = []
    for s in shells:
        holes = [
            i
            for i in range(n)
            if depth[i] == depth[s] + 1 and polys[s].contains(polys[i])
        ]
        region_polys.append(Polygon(points[rings[s]], [points[rings[h]] for h in holes]))

    index_of = {(float(x), float(y)): i for i, (x, y) in enumerate(points)}
    triangles = []
    for region in region_polys:
        tris = shapely.constrained_delaunay_triangles(region)
        for tri in tris.geoms:
            coords = list(tri.exterior.coords)[:3]
            try:
                idx = [index_of[(float(x), float(y))] for x, y in coords]
            except KeyError as exc:
                raise DegenerateGeometry(
                    f"triangulation produced an unknown vertex {exc}"
                ) from exc
            a, b, c = (points[i] for i in idx)
            area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
            if area < 0:
                idx = [idx[0], idx[2], idx[1]]
                area = -area
            if area <= _MIN_AREA:
                continue
            centroid = (a + b + c) / 3.0
            if winding_number(points, rings, centroid) == 0:
                continue
            triangles.append(idx)

    if not triangles:
        raise DegenerateGeometry("triangulation produced no interior triangles")
    tri_arr = np.asarray(triangles, dtype=np.int64)
    corners = [[] for _ in range(len(points))]
    for t, tri in enumerate(tri_arr):
        for slot in range(3):
            corners[tri[slot]].append((t, slot))
    return Triangulation(
        triangles=tri_arr,
        vertex_corners=tuple(tuple(c) for c in corners),
        built_from=points_hash(points),
        n_points=len(points),
    )


def corner_angles(points: np.ndarray, tri: Triangulation, warn: bool = True) -> np.ndarray:
    """Signed corner angles (T, 3) under the current point positions.

    Angles are positive in (0, pi) while a triangle keeps its construction
    orientation and go negative when it flips, which makes the ACAP loss
    grow smoothly instead of erroring on inverted elements.
    """
    points = np.asarray(points, dtype=float)
    if len(points) != tri.n_points:
        raise SizeMismatch(
            f"{len(points)} points vs triangulation over {tri.n_points}"
        )
    p = points[tri.triangles]  # (T, 3, 2)
    prev = np.roll(p, 1, axis=1) - p  # u: corner -> previous vertex
    nxt = np.roll(p, -1, axis=1) - p  # v: corner -> next vertex
    cross = nxt[..., 0] * prev[..., 1] - nxt[..., 1] * prev[..., 0]
    dot = np.sum(nxt * prev, axis=-1)
    if warn and bool(np.any(np.sum(prev * prev, axis=-1) < 1e-24)):
        warnings.warn(
            "triangle edge collapsed below 1e-12; angles clamped",
            DegenerateTriangleWarning,
            stacklevel=2,
        )
    return np.arctan2(cross, dot)


def _angle_gradients(points: np.ndarray, tri: Triangulation):
    """Angles plus d(angle)/d(corner vertices), shapes (T,3) and (T,3,3,2).

    Gradient slots follow (previous vertex, corner vertex, next vertex).
    """
    p = points[tri.triangles]
    u = np.roll(p, 1, axis=1) - p
    v = np.roll(p, -1, axis=1) - p
    c = v[..., 0] * u[..., 1] - v[..., 1] * u[..., 0]
    d = np.sum(u * v, axis=-1)
    theta = np.arctan2(c, d)
    denom = np.maximum(c * c + d * d, _LEN2_CLAMP**2)
    # d theta = (d * dc - c * dd) / (c^2 + d^2)
    dc_du = np.stack([-v[..., 1], v[..., 0]], axis=-1)
    dc_dv = np.stack([u[..., 1], -u[..., 0]], axis=-1)
    dd_du = v
    dd_dv = u
    scale = 1.0 / denom
    dth_du = (d[..., None] * dc_du - c[..., None] * dd_du) * scale[..., None]
    dth_dv = (d[..., None] * dc_dv - c[..., None] * dd_dv) * scale[..., None]
    grad = np.zeros(p.shape[:2] + (3, 2))
    grad[:, :, 0, :] = dth_du  # previous vertex (u endpoint)
    grad[:, :, 2, :] = dth_dv  # next vertex (v endpoint)
    grad[:, :, 1, :] = -dth_du - dth_dv  # the corner itself
    return theta, grad


def acap_loss(P: np.ndarray, P_hat: np.ndarray, tri: Triangulation) -> AcapResult:
    """Mean squared corner-angle change between P and P_hat.

    Connectivity comes from ``tri`` (built on P); the gradient is with
    respect to P_hat only.
    """
    P = np.asarray(P, dtype=float)
    P_hat = np.asarray(P_hat, dtype=float)
    if P.shape != P_hat.shape or len(P) != tri.n_points:
        raise SizeMismatch(
            f"P {P.shape}, P_hat {P_hat.shape}, triangulation over {tri.n_points}"
        )
    if points_hash(P) != tri.built_from:
        raise SizeMismatch("triangulation was built from a different point set")
    k = len(P)
    ref = corner_angles(P, tri, warn=False)
    theta, dtheta = _angle_gradients(P_hat, tri)
    diff = theta - ref  # (T, 3)
    loss = float(np.sum(diff**2)) / k
    coeff = (2.0 / k) * diff  # (T, 3)
    contrib = coeff[..., None, None] * dtheta  # (T, 3, 3, 2)
    grad = np.zeros_like(P_hat)
    tris = tri.triangles
    targets = np.stack([np.roll(tris, 1, axis=1), tris, np.roll(tris, -1, axis=1)], axis=2)
    np.add.at(grad, targets.reshape(-1), contrib.reshape(-1, 2))
    return AcapResult(loss=loss, grad=grad)
