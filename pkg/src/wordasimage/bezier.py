"""Cubic Bezier primitives: evaluation, degree elevation, splitting, arc length.

Segments are (4, 2) float arrays of control points. All operations are pure.
"""

from __future__ import annotations

import numpy as np


def eval_cubic(seg: np.ndarray, t) -> np.ndarray:
    """Evaluate a cubic at parameter(s) t. Returns (..., 2)."""
    t = np.asarray(t, dtype=float)[..., None]
    mt = 1.0 - t
    return (
        seg[0] * mt**3
        + seg[1] * 3.0 * t * mt**2
        + seg[2] * 3.0 * t**2 * mt
        + seg[3] * t**3
    )


def bernstein3(t) -> np.ndarray:
    """Cubic Bernstein basis at t. Returns (..., 4)."""
    t = np.asarray(t, dtype=float)
    mt = 1.0 - t
    return np.stack([mt**3, 3.0 * t * mt**2, 3.0 * t**2 * mt, t**3], axis=-1)


def line_to_cubic(p0, p1) -> np.ndarray:
    """Degree-elevate a line segment to an equivalent cubic."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    return np.stack([p0, p0 + (p1 - p0) / 3.0, p0 + 2.0 * (p1 - p0) / 3.0, p1])


def quadratic_to_cubic(p0, q, p2) -> np.ndarray:
    """Degree-elevate a quadratic (p0, q, p2) to an equivalent cubic."""
    p0 = np.asarray(p0, dtype=float)
    q = np.asarray(q, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    return np.stack([p0, p0 + 2.0 / 3.0 * (q - p0), p2 + 2.0 / 3.0 * (q - p2), p2])


def split_cubic(seg: np.ndarray, t: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """De Casteljau split at t into two cubics tracing the same curve."""
    p0, p1, p2, p3 = seg
    a = p0 + t * (p1 - p0)
    b = p1 + t * (p2 - p1)
    c = p2 + t * (p3 - p2)
    d = a + t * (b - a)
    e = b + t * (c - b)
    f = d + t * (e - d)
    return np.stack([p0, a, d, f]), np.stack([f, e, c, p3])


def _chord_and_polygon(seg: np.ndarray) -> tuple[float, float]:
    chord = float(np.linalg.norm(seg[3] - seg[0]))
    poly = float(np.sum(np.linalg.norm(np.diff(seg, axis=0), axis=1)))
    return chord, poly


def arc_length(seg: np.ndarray, rel_tol: float = 1e-7) -> float:
    """Arc length by recursive splitting.

    The chord is a lower bound and the control polygon an upper bound on the
    true length; recursion stops when they agree within rel_tol of the
    running polygon estimate.
    """
    seg = np.asarray(seg, dtype=float)
    chord, poly = _chord_and_polygon(seg)
    if poly == 0.0:
        return 0.0
    scale = poly

    def recurse(s, chord, poly, depth):
        if poly - chord <= rel_tol * scale or depth >= 48:
            return 0.5 * (poly + chord)
        left, right = split_cubic(s, 0.5)
        lc, lp = _chord_and_polygon(left)
        rc, rp = _chord_and_polygon(right)
        return recurse(left, lc, lp, depth + 1) + recurse(right, rc, rp, depth + 1)

    return recurse(seg, chord, poly, 0)
