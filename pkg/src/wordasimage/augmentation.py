"""Differentiable image augmentations applied before guidance.

A random perspective warp (corner-displacement homography, applied with
probability ``p_perspective``) followed by a random square crop. The warp
samples the source with bilinear interpolation; reads outside the frame
return the white background, so letters never pick up dark borders. The
VJP scatters crop-sized upstream gradients back onto the full-size image
(transpose of the bilinear gather); warp parameters are constants per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SizeMismatch

_BACKGROUND = 1.0


@dataclass(frozen=True)
class AugmentParams:
    apply_perspective: bool
    corner_offsets: np.ndarray  # (4, 2) px displacements of the source corners
    crop_origin: tuple[int, int]  # (x, y)
    source_size: int
    target_size: int


def sample_params(
    rng: np.random.Generator,
    source_size: int = 600,
    target_size: int = 512,
    distortion_scale: float = 0.5,
    p_perspective: float = 0.7,
) -> AugmentParams:
    """Draw one augmentation; the rng stream layout is branch-independent."""
    if target_size > source_size:
        raise SizeMismatch(
            f"crop {target_size} larger than source {source_size}"
        )
    apply_perspective = bool(rng.random() < p_perspective)
    half = 0.5 * distortion_scale * source_size
    offsets = rng.uniform(-half, half, size=(4, 2))
    max_origin = source_size - target_size
    origin = rng.integers(0, max_origin + 1, size=2)
    return AugmentParams(
        apply_perspective=apply_perspective,
        corner_offsets=offsets,
        crop_origin=(int(origin[0]), int(origin[1])),
        source_size=source_size,
        target_size=target_size,
    )


def _homography_to_source(params: AugmentParams) -> np.ndarray:
    """3x3 map from output pixel coordinates back to source coordinates.

    The forward transform carries each source corner to corner + offset;
    sampling needs its inverse, solved directly from the displaced corners.
    """
    s = float(params.source_size)
    corners = np.array([[0.0, 0.0], [s, 0.0], [s, s], [0.0, s]])
    displaced = corners + params.corner_offsets
    # DLT for H with H(displaced) = corners, h22 = 1
    A = []
    b = []
    for (x, y), (u, v) in zip(displaced, corners):
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        b.append(u)
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.append(v)
    h = np.linalg.solve(np.asarray(A), np.asarray(b))
    return np.concatenate([h, [1.0]]).reshape(3, 3)


def apply(img: np.ndarray, params: AugmentParams):
    """Warp + crop. Returns (target^2 image, vjp to source-image gradients)."""
    img = np.asarray(img, dtype=float)
    n = params.source_size
    m = params.target_size
    if img.shape != (n, n):
        raise SizeMismatch(f"image {img.shape}, expected {(n, n)}")
    ox, oy = params.crop_origin

    if not params.apply_perspective:
        out = img[oy : oy + m, ox : ox + m].copy()

        def vjp(upstream: np.ndarray) -> np.ndarray:
            upstream = np.asarray(upstream, dtype=float)
            if upstream.shape != (m, m):
                raise SizeMismatch(f"upstream {upstream.shape}, expected {(m, m)}")
            grad = np.zeros((n, n))
            grad[oy : oy + m, ox : ox + m] = upstream
            return grad

        return out, vjp

    hinv = _homography_to_source(params)
    ys, xs = np.mgrid[0:m, 0:m]
    qx = (xs + ox + 0.5).ravel()
    qy = (ys + oy + 0.5).ravel()
    denom = hinv[2, 0] * qx + hinv[2, 1] * qy + hinv[2, 2]
    sx = (hinv[0, 0] * qx + hinv[0, 1] * qy + hinv[0, 2]) / denom - 0.5
    sy = (hinv[1, 0] * qx + hinv[1, 1] * qy + hinv[1, 2]) / denom - 0.5

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    weights = [
        (x0, y0, (1 - fx) * (1 - fy)),
        (x0 + 1, y0, fx * (1 - fy)),
        (x0, y0 + 1, (1 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ]
    out = np.zeros(m * m)
    taps = []
    for xi, yi, w in weights:
        inside = (xi >= 0) & (xi < n) & (yi >= 0) & (yi < n)
        vals = np.where(inside, img[np.clip(yi, 0, n - 1), np.clip(xi, 0, n - 1)], _BACKGROUND)
        out += w * vals
        taps.append((xi, yi, w, inside))

    def vjp(upstream: np.ndarray) -> np.ndarray:
        upstream = np.asarray(upstream, dtype=float)
        if upstream.shape != (m, m):
            raise SizeMismatch(f"upstream {upstream.shape}, expected {(m, m)}")
        u = upstream.ravel()
        grad = np.zeros(n * n)
        for xi, yi, w, inside in taps:
            flat = np.clip(yi, 0, n - 1) * n + np.clip(xi, 0, n - 1)
            grad += np.bincount(
                flat[inside], weights=(w * u)[inside], minlength=n * n
            )
        return grad.reshape(n, n)

    return out.reshape(m, m), vjp
