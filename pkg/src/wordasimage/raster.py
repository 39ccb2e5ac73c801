"""Differentiable rasterization of filled Bezier paths, blur, and tone loss.

Cubics are flattened into polylines (a fixed linear map of the control
points), and per-pixel coverage is the exact integral of the winding number
over each pixel box, accumulated edge by edge in closed form:

    C(i, j) = sum over edges of  integral_{ya}^{yb} clamp(X(y) - i, 0, 1) dy

restricted to pixel row j, where X(y) is the edge's abscissa. Columns left
of an edge's x-span receive the full signed dy (handled with a suffix
cumulative sum); columns inside the span use the closed-form integral of a
clamped linear function. The pixel value is 1 - min(|C|, 1) (white
background, nonzero winding). Every step has a hand-written vector-Jacobian
product, verified against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .errors import CanvasMismatch, NonFiniteCoordinate, SizeMismatch
from .fonts import GlyphPath

_HORIZ_EPS = 1e-12  # |dy| below this: edge treated as within one row
_NEAR_EPS = 1e-8  # |v1 - v0| below this: clamped-integral midpoint fallback
_SAT_EPS = 1e-9  # saturation guard so interior pixels get exactly zero grad


@dataclass(frozen=True)
class CanvasSpec:
    """Square canvas and the em-box placement inside it.

    The glyph em box [0,1]^2 (y-up) maps to the central (1 - 2*margin)
    fraction of a size x size pixel grid, y flipped to image convention.
    """

    size: int = 600
    margin: float = 0.15
    flatten_steps: int = 16

    def __post_init__(self):
        if self.size < 16:
            raise ValueError("canvas size must be at least 16 px")
        if not 0.0 <= self.margin < 0.5:
            raise ValueError("margin must be in [0, 0.5)")

    @property
    def scale(self) -> float:
        return (1.0 - 2.0 * self.margin) * self.size

    def em_to_px(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.empty_like(pts)
        off = self.margin * self.size
        out[..., 0] = off + pts[..., 0] * self.scale
        out[..., 1] = off + (1.0 - pts[..., 1]) * self.scale
        return out

    def px_to_em(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.empty_like(pts)
        off = self.margin * self.size
        out[..., 0] = (pts[..., 0] - off) / self.scale
        out[..., 1] = 1.0 - (pts[..., 1] - off) / self.scale
        return out


@dataclass
class RasterImage:
    """Grayscale coverage image: 1.0 white background, 0.0 full ink."""

    data: np.ndarray
    canvas: CanvasSpec

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


class RasterVjp:
    """Reverse-mode map from an image-shaped upstream to point gradients."""

    def __init__(self, fn, shape):
        self._fn = fn
        self._shape = shape

    def __call__(self, upstream: np.ndarray) -> np.ndarray:
        upstream = np.asarray(upstream, dtype=float)
        if upstream.shape != self._shape:
            raise SizeMismatch(f"upstream {upstream.shape}, image {self._shape}")
        return self._fn(upstream)


def _expand_counts(counts: np.ndarray):
    total = int(counts.sum())
    idx = np.repeat(np.arange(len(counts)), counts)
    starts = np.cumsum(counts) - counts
    inner = np.arange(total) - np.repeat(starts, counts)
    return idx, inner


def _G(v):
    return np.where(v <= 0.0, 0.0, np.where(v >= 1.0, v - 0.5, 0.5 * v * v))


def _g(v):
    return np.clip(v, 0.0, 1.0)


def flatten_topology(subpaths, n_points: int, steps: int):
    """Fixed flattening map: ring structure plus Bernstein vertex weights.

    Returns (vidx (V,4) int, vweights (V,4), ring_slices) where vertex v is
    sum_m vweights[v, m] * points[vidx[v, m]]. Consecutive ring vertices form
    the polygon edges (rings close on themselves).
    """
    ts = np.arange(steps) / steps
    mt = 1.0 - ts
    bern = np.stack([mt**3, 3 * ts * mt**2, 3 * ts**2 * mt, ts**3], axis=1)
    vidx = []
    vws = []
    rings = []
    v0 = 0
    for sp in subpaths:
        for s in range(sp.n_segments):
            ids = sp.segment_indices(s)
            for f in range(steps):
                vidx.append(ids)
                vws.append(bern[f])
        count = sp.n_segments * steps
        rings.append((v0, count))
        v0 += count
    return (
        np.asarray(vidx, dtype=np.int64).reshape(-1, 4),
        np.asarray(vws, dtype=float).reshape(-1, 4),
        rings,
    )


def _ring_edges(rings, n_verts: int):
    src = np.arange(n_verts, dtype=np.int64)
    dst = src + 1
    for start, count in rings:
        if count:
            dst[start + count - 1] = start
    return src, dst


def _coverage(verts: np.ndarray, rings, width: int, height: int):
    """Winding-number integral per pixel plus the tape for its VJP."""
    n_verts = len(verts)
    src, dst = _ring_edges(rings, n_verts)
    ax, ay = verts[src, 0], verts[src, 1]
    bx, by = verts[dst, 0], verts[dst, 1]

    dy_e = by - ay
    horiz = np.abs(dy_e) < _HORIZ_EPS
    inv = np.where(horiz, 0.0, 1.0 / np.where(horiz, 1.0, dy_e))
    slope = (bx - ax) * inv

    ymin = np.minimum(ay, by)
    ymax = np.maximum(ay, by)
    r0 = np.maximum(np.floor(ymin).astype(np.int64), 0)
    r1 = np.minimum(np.floor(ymax).astype(np.int64), height - 1)
    counts = np.maximum(r1 - r0 + 1, 0)
    counts = np.where((ymax < 0) | (ymin >= height), 0, counts)
    eidx, inner = _expand_counts(counts)
    row = r0[eidx] + inner

    ea_y, eb_y = ay[eidx], by[eidx]
    ya = np.clip(ea_y, row, row + 1.0)
    yb = np.clip(eb_y, row, row + 1.0)
    pass_a = (ea_y > row) & (ea_y < row + 1.0)
    pass_b = (eb_y > row) & (eb_y < row + 1.0)
    kk = slope[eidx]
    xa = ax[eidx] + (ya - ea_y) * kk
    xb = bx[eidx] + (yb - eb_y) * kk
    dyc = yb - ya

    lox = np.minimum(xa, xb)
    hix = np.maximum(xa, xb)
    ilo = np.floor(lox).astype(np.int64)
    ihi = np.ceil(hix).astype(np.int64) - 1
    cover_col = np.clip(ilo, 0, width)

    cover = np.bincount(
        row * (width + 1) + cover_col, weights=dyc, minlength=height * (width + 1)
    ).astype(float).reshape(height, width + 1)

    plo = np.maximum(ilo, 0)
    phi = np.minimum(ihi, width - 1)
    pcounts = np.maximum(phi - plo + 1, 0)
    qidx, qinner = _expand_counts(pcounts)
    col = plo[qidx] + qinner

    v0 = xa[qidx] - col
    v1 = xb[qidx] - col
    dv = v1 - v0
    near = np.abs(dv) < _NEAR_EPS
    dv_safe = np.where(near, 1.0, dv)
    psi = np.where(near, _g(0.5 * (v0 + v1)), (_G(v1) - _G(v0)) / dv_safe)
    contrib = dyc[qidx] * psi

    area = np.bincount(
        row[qidx] * width + col, weights=contrib, minlength=height * width
    ).astype(float).reshape(height, width)

    suffix = np.cumsum(cover[:, ::-1], axis=1)[:, ::-1]
    c_int = area.copy()
    c_int += suffix[:, 1:]

    tape = dict(
        src=src, dst=dst, eidx=eidx, row=row, ya=ya, yb=yb,
        pass_a=pass_a, pass_b=pass_b, kk=kk, inv=inv, ax=ax, bx=bx,
        ea_y=ea_y, eb_y=eb_y, cover_col=cover_col, qidx=qidx, col=col,
        v0=v0, v1=v1, dv_safe=dv_safe, near=near, psi=psi, dyc=dyc,
        n_verts=n_verts, width=width, height=height, n_edges=len(src),
    )
    return c_int, tape


def _coverage_vjp(tape: dict, d_c: np.ndarray) -> np.ndarray:
    width, height = tape["width"], tape["height"]
    eidx, row, qidx, col = tape["eidx"], tape["row"], tape["qidx"], tape["col"]
    n_pairs = len(eidx)
    n_edges = tape["n_edges"]

    # suffix-cumsum transpose: dcover[:, c] = sum of d_c[:, :c]
    dcover = np.zeros((height, width + 1))
    if width:
        dcover[:, 1:] = np.cumsum(d_c, axis=1)
    d_dyc = dcover[row, tape["cover_col"]].copy()

    d_contrib = d_c[row[qidx], col]
    psi, dyc = tape["psi"], tape["dyc"]
    np.add.at(d_dyc, qidx, d_contrib * psi)
    d_psi = d_contrib * dyc[qidx]
    v0, v1, dv_safe, near = tape["v0"], tape["v1"], tape["dv_safe"], tape["near"]
    mid_ind = 0.5 * (((v0 + v1) > 0.0) & ((v0 + v1) < 2.0))
    dpsi_dv0 = np.where(near, mid_ind, (psi - _g(v0)) / dv_safe)
    dpsi_dv1 = np.where(near, mid_ind, (_g(v1) - psi) / dv_safe)
    d_xa = np.zeros(n_pairs)
    d_xb = np.zeros(n_pairs)
    np.add.at(d_xa, qidx, d_psi * dpsi_dv0)
    np.add.at(d_xb, qidx, d_psi * dpsi_dv1)

    ya, yb, kk = tape["ya"], tape["yb"], tape["kk"]
    ea_y, eb_y = tape["ea_y"], tape["eb_y"]
    d_ya = -d_dyc
    d_yb = d_dyc.copy()
    # xa = ax + (ya - ay) * k ; xb = bx + (yb - by) * k
    d_ax_p = d_xa
    d_ya = d_ya + d_xa * kk
    d_ay_p = -d_xa * kk
    d_k_p = d_xa * (ya - ea_y)
    d_bx_p = d_xb
    d_yb = d_yb + d_xb * kk
    d_by_p = -d_xb * kk
    d_k_p = d_k_p + d_xb * (yb - eb_y)
    # clips pass gradient only while the endpoint is strictly inside the row
    d_ay_p = d_ay_p + d_ya * tape["pass_a"]
    d_by_p = d_by_p + d_yb * tape["pass_b"]

    def acc(vals):
        return np.bincount(eidx, weights=vals, minlength=n_edges)

    d_ax = acc(d_ax_p)
    d_ay = acc(d_ay_p)
    d_bx = acc(d_bx_p)
    d_by = acc(d_by_p)
    d_k = acc(d_k_p)

    inv, ax, bx = tape["inv"], tape["ax"], tape["bx"]
    d_bx = d_bx + d_k * inv
    d_ax = d_ax - d_k * inv
    d_inv = d_k * (bx - ax)
    d_dy_e = -d_inv * inv * inv  # zero where the edge was treated horizontal
    d_by = d_by + d_dy_e
    d_ay = d_ay - d_dy_e

    dverts = np.zeros((tape["n_verts"], 2))
    src, dst = tape["src"], tape["dst"]
    dverts[:, 0] = np.bincount(src, weights=d_ax, minlength=tape["n_verts"])
    dverts[:, 1] = np.bincount(src, weights=d_ay, minlength=tape["n_verts"])
    dverts[:, 0] += np.bincount(dst, weights=d_bx, minlength=tape["n_verts"])
    dverts[:, 1] += np.bincount(dst, weights=d_by, minlength=tape["n_verts"])
    return dverts


def rasterize_px(points_px: np.ndarray, subpaths, canvas: CanvasSpec):
    """Rasterize control points given in pixel coordinates.

    Returns (RasterImage, vjp) where vjp maps an image-shaped upstream
    gradient to a (k, 2) gradient on the pixel-space control points.
    """
    points_px = np.asarray(points_px, dtype=float)
    if points_px.size and not np.all(np.isfinite(points_px)):
        raise NonFiniteCoordinate("control points contain NaN or Inf")
    size = canvas.size
    if points_px.size == 0 or not subpaths:
        img = RasterImage(np.ones((size, size)), canvas)
        return img, RasterVjp(lambda u: np.zeros((len(points_px), 2)), (size, size))

    vidx, vw, rings = flatten_topology(subpaths, len(points_px), canvas.flatten_steps)
    verts = np.einsum("vm,vmc->vc", vw, points_px[vidx])
    c_int, tape = _coverage(verts, rings, size, size)
    coverage = np.minimum(np.abs(c_int), 1.0)
    img = RasterImage(1.0 - coverage, canvas)

    sign = np.sign(c_int)
    unsat = np.abs(c_int) < 1.0 - _SAT_EPS
    k = len(points_px)

    def vjp(upstream: np.ndarray) -> np.ndarray:
        d_c = -upstream * sign * unsat
        dverts = _coverage_vjp(tape, d_c)
        grad = np.zeros((k, 2))
        for m in range(4):
            grad[:, 0] += np.bincount(
                vidx[:, m], weights=vw[:, m] * dverts[:, 0], minlength=k
            )
            grad[:, 1] += np.bincount(
                vidx[:, m], weights=vw[:, m] * dverts[:, 1], minlength=k
            )
        return grad

    return img, RasterVjp(vjp, (size, size))


def rasterize(path: GlyphPath, canvas: CanvasSpec):
    """Rasterize a GlyphPath (em coordinates) onto the canvas.

    The returned vjp yields gradients on the path's em-space control points.
    """
    pts_px = canvas.em_to_px(path.points)
    img, vjp_px = rasterize_px(pts_px, path.subpaths, canvas)
    s = canvas.scale

    def vjp(upstream: np.ndarray) -> np.ndarray:
        g = vjp_px(upstream)
        g_em = np.empty_like(g)
        g_em[:, 0] = g[:, 0] * s
        g_em[:, 1] = -g[:, 1] * s
        return g_em

    return img, RasterVjp(vjp, img.data.shape)


def lpf_kernel(sigma: float) -> np.ndarray:
    """Normalized discrete Gaussian with radius ceil(3 sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_lpf(img: RasterImage | np.ndarray, sigma: float):
    """Separable Gaussian blur with replicate-edge padding."""
    data = img.data if isinstance(img, RasterImage) else np.asarray(img, dtype=float)
    k = lpf_kernel(sigma)
    out = convolve1d(data, k, axis=0, mode="nearest")
    out = convolve1d(out, k, axis=1, mode="nearest")
    if isinstance(img, RasterImage):
        return RasterImage(out, img.canvas)
    return out


@dataclass(frozen=True)
class ToneResult:
    loss: float
    grad: np.ndarray  # (k, 2) on the deformed path's control points


def tone_terms(blur_ref: np.ndarray, img_hat: np.ndarray, sigma: float,
               reduction: str = "mean"):
    """Tone loss value and its gradient w.r.t. the un-blurred image.

    The Gaussian is treated as self-adjoint (replicate padding ignored);
    glyphs keep a margin of ~3 sigma so the approximation is below test
    tolerance.
    """
    blur_hat = gaussian_lpf(img_hat, sigma)
    diff = blur_hat - blur_ref
    if reduction == "mean":
        scale = 1.0 / diff.size
    elif reduction == "sum":
        scale = 1.0
    else:
        raise ValueError(f"unknown tone reduction {reduction!r}")
    loss = float(np.sum(diff * diff)) * scale
    upstream = gaussian_lpf(2.0 * scale * diff, sigma)
    return loss, upstream


def tone_loss(raster_P: RasterImage, path_hat: GlyphPath, sigma: float,
              canvas: CanvasSpec, reduction: str = "mean") -> ToneResult:
    """Blurred-image L2 between the original raster and the deformed path."""
    if raster_P.canvas != canvas or raster_P.data.shape != (canvas.size, canvas.size):
        raise CanvasMismatch("reference raster does not match the canvas spec")
    img_hat, vjp = rasterize(path_hat, canvas)
    blur_ref = gaussian_lpf(raster_P.data, sigma)
    loss, upstream = tone_terms(blur_ref, img_hat.data, sigma, reduction)
    return ToneResult(loss=loss, grad=vjp(upstream))


def to_png(img: RasterImage, path) -> None:
    """8-bit grayscale PNG export."""
    from PIL import Image

    arr = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def from_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=float) / 255.0
