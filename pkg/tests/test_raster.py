import numpy as np
import pytest

import oracles
from wordasimage import bezier, fonts, raster
from wordasimage.errors import CanvasMismatch, NonFiniteCoordinate, SizeMismatch
from wordasimage.fonts import GlyphPath, Subpath

CANVAS16 = raster.CanvasSpec(size=16, margin=0.15, flatten_steps=4)


def path_from_polys(polys):
    pts, sps, flat = [], [], 0
    for poly in polys:
        segs = [
            bezier.line_to_cubic(poly[i], poly[(i + 1) % len(poly)])
            for i in range(len(poly))
        ]
        for s in segs:
            pts.append(s[:3])
        sps.append(Subpath(flat, len(segs)))
        flat += 3 * len(segs)
    return np.concatenate(pts), tuple(sps)


def blob_path(rng, n=7, center=0.5, radius=0.3, noise=0.25) -> GlyphPath:
    """Random smooth star-shaped blob in em coordinates."""
    ang = 2 * np.pi * np.arange(n) / n
    r = radius * (1.0 + rng.uniform(-noise, noise, size=n))
    on = np.stack([center + r * np.cos(ang), center + r * np.sin(ang)], axis=1)
    pts = []
    for i in range(n):
        a, b = on[i], on[(i + 1) % n]
        c1 = a + (b - a) / 3 + rng.normal(scale=0.02, size=2)
        c2 = a + 2 * (b - a) / 3 + rng.normal(scale=0.02, size=2)
        pts.extend([a, c1, c2])
    return GlyphPath(points=np.asarray(pts), subpaths=(Subpath(0, n),))


class TestRasterizeForward:
    def test_full_canvas_path_all_ink(self):
        big = np.array([[-2.0, -2.0], [18.0, -2.0], [18.0, 18.0], [-2.0, 18.0]])
        pts, sps = path_from_polys([big])
        img, _ = raster.rasterize_px(pts, sps, CANVAS16)
        assert np.all(img.data == 0.0)

    def test_empty_path_all_background(self):
        img, vjp = raster.rasterize_px(np.zeros((0, 2)), (), CANVAS16)
        assert np.all(img.data == 1.0)
        assert vjp(np.ones((16, 16))).shape == (0, 2)

    def test_rectangle_edge_bisecting_pixel_column(self):
        rect = np.array([[3.5, 3.0], [8.5, 3.0], [8.5, 12.0], [3.5, 12.0]])
        pts, sps = path_from_polys([rect])
        img, _ = raster.rasterize_px(pts, sps, CANVAS16)
        cov = 1.0 - img.data
        assert abs(cov[6, 3] - 0.5) <= 1e-6
        assert abs(cov[6, 8] - 0.5) <= 1e-6
        assert cov[6, 5] == 1.0

    def test_exact_against_polygon_clipping(self, rng):
        for _ in range(5):
            ang = np.sort(rng.uniform(0, 2 * np.pi, 6))
            if np.min(np.diff(ang)) < 0.05:
                continue
            r = rng.uniform(2.5, 7.0, len(ang))
            poly = np.stack([8 + r * np.cos(ang), 8 + r * np.sin(ang)], axis=1)
            pts, sps = path_from_polys([poly])
            img, _ = raster.rasterize_px(pts, sps, CANVAS16)
            ref = oracles.coverage_shapely([poly], 16, 16)
            assert np.abs((1.0 - img.data) - ref).max() <= 1e-12

    def test_offcanvas_geometry_clipped_exactly(self):
        poly = np.array([[-5.0, 4.2], [9.5, -3.0], [22.0, 9.0], [4.0, 21.0]])
        pts, sps = path_from_polys([poly])
        img, _ = raster.rasterize_px(pts, sps, CANVAS16)
        ref = oracles.coverage_shapely([poly], 16, 16)
        assert np.abs((1.0 - img.data) - ref).max() <= 1e-12

    def test_hole_via_opposite_winding(self):
        outer = np.array([[2.0, 2.0], [14.0, 2.0], [14.0, 14.0], [2.0, 14.0]])
        inner = np.array([[6.0, 6.0], [6.0, 10.0], [10.0, 10.0], [10.0, 6.0]])
        pts, sps = path_from_polys([outer, inner])
        img, _ = raster.rasterize_px(pts, sps, CANVAS16)
        cov = 1.0 - img.data
        assert cov[8, 8] == 0.0
        assert cov[4, 8] == 1.0

    def test_coverage_bounds_on_self_intersecting_input(self, rng):
        for _ in range(10):
            poly = rng.uniform(-4, 20, size=(6, 2))  # arbitrary, usually crossing
            pts, sps = path_from_polys([poly])
            img, _ = raster.rasterize_px(pts, sps, CANVAS16)
            assert img.data.min() >= 0.0 and img.data.max() <= 1.0

    def test_nonfinite_rejected(self, unit_square):
        bad = unit_square.points.copy()
        bad[2, 1] = np.nan
        with pytest.raises(NonFiniteCoordinate):
            raster.rasterize(unit_square.with_points(bad), CANVAS16)

    def test_supersample_agreement_curved(self, rng):
        path = blob_path(rng)
        canvas = raster.CanvasSpec(size=16, margin=0.1, flatten_steps=6)
        img, _ = raster.rasterize(path, canvas)
        vidx, vw, rings = raster.flatten_topology(
            path.subpaths, path.point_count, canvas.flatten_steps
        )
        verts = np.einsum("vm,vmc->vc", vw, canvas.em_to_px(path.points)[vidx])
        polys = [verts[s : s + c] for s, c in rings]
        ref = oracles.coverage_supersample(polys, 16, 16, n=24)
        assert np.abs((1.0 - img.data) - ref).max() <= 0.03  # supersampling noise

    def test_resolution_consistency(self, rng):
        path = blob_path(rng)
        lo = raster.CanvasSpec(size=32, margin=0.15, flatten_steps=8)
        hi = raster.CanvasSpec(size=64, margin=0.15, flatten_steps=8)
        img_lo, _ = raster.rasterize(path, lo)
        img_hi, _ = raster.rasterize(path, hi)
        down = img_hi.data.reshape(32, 2, 32, 2).mean(axis=(1, 3))
        assert np.abs(down - img_lo.data).max() <= 0.02

    def test_glyph_letter_o_has_counter(self, font_bytes):
        path = fonts.to_cubics(fonts.load_glyph(font_bytes, "O"))
        canvas = raster.CanvasSpec(size=64, margin=0.15, flatten_steps=8)
        img, _ = raster.rasterize(path, canvas)
        cov = 1.0 - img.data
        assert cov.max() == 1.0
        row = cov[32]
        inked = np.nonzero(row > 0.5)[0]
        assert len(inked) > 0
        assert row[(inked.min() + inked.max()) // 2] == 0.0  # hollow middle


class TestRasterizeVjp:
    def test_matches_finite_differences_random_blobs(self, rng):
        canvas = raster.CanvasSpec(size=24, margin=0.15, flatten_steps=6)
        for _ in range(5):
            path = blob_path(rng)
            img, vjp = raster.rasterize(path, canvas)
            upstream = rng.normal(size=img.data.shape)
            ana = vjp(upstream).ravel()

            def f(x):
                i, _ = raster.rasterize(path.with_points(x.reshape(-1, 2)), canvas)
                return float(np.sum(upstream * i.data))

            idx = rng.choice(path.points.size, size=20, replace=False)
            fd = oracles.central_difference(f, path.points.ravel(), h=1e-4 / canvas.scale, indices=idx)
            denom = np.maximum(np.maximum(np.abs(ana[idx]), np.abs(fd)), 1e-3)
            assert np.max(np.abs(ana[idx] - fd) / denom) <= 1e-3

    def test_linearity(self, rng):
        path = blob_path(rng)
        img, vjp = raster.rasterize(path, CANVAS16)
        u = rng.normal(size=img.data.shape)
        v = rng.normal(size=img.data.shape)
        lhs = vjp(2.5 * u - 1.25 * v)
        rhs = 2.5 * vjp(u) - 1.25 * vjp(v)
        assert np.abs(lhs - rhs).max() <= 1e-12
        assert np.all(vjp(np.zeros_like(u)) == 0.0)

    def test_upstream_shape_checked(self, rng):
        path = blob_path(rng)
        _, vjp = raster.rasterize(path, CANVAS16)
        with pytest.raises(SizeMismatch):
            vjp(np.zeros((8, 8)))


class TestGaussianLpf:
    def test_constant_invariant(self):
        img = np.full((40, 40), 0.37)
        for sigma in (0.8, 2.0, 7.5):
            out = raster.gaussian_lpf(img, sigma)
            assert np.abs(out - 0.37).max() <= 1e-12

    def test_impulse_center_value(self):
        sigma = 2.0
        k = raster.lpf_kernel(sigma)
        radius = len(k) // 2
        img = np.zeros((64, 64))
        img[32, 32] = 1.0
        out = raster.gaussian_lpf(img, sigma)
        assert abs(out[32, 32] - k[radius] ** 2) <= 1e-9

    def test_kernel_radius_and_normalization(self):
        for sigma in (1.0, 2.5, 8.0, 30.0):
            k = raster.lpf_kernel(sigma)
            assert len(k) == 2 * int(np.ceil(3 * sigma)) + 1
            assert abs(k.sum() - 1.0) <= 1e-12

    def test_strong_blur_suppresses_small_details(self):
        # a 5-px protrusion on a 600^2 raster moves the sigma=30 blur < 1e-3
        base = np.ones((600, 600))
        base[200:400, 200:400] = 0.0
        bumped = base.copy()
        bumped[298:299, 195:200] = 0.0  # 5 px of extra ink sticking out
        a = raster.gaussian_lpf(base, 30.0)
        b = raster.gaussian_lpf(bumped, 30.0)
        assert np.abs(a - b).max() < 1e-3

    def test_mean_preserved_for_interior_content(self):
        img = np.ones((128, 128))
        img[40:88, 40:88] = 0.0
        out = raster.gaussian_lpf(img, 8.0)
        assert abs(out.mean() - img.mean()) <= 1e-6

    def test_sigma_must_be_positive(self):
        with pytest.raises(ValueError):
            raster.lpf_kernel(0.0)


class TestToneLoss:
    CANVAS = raster.CanvasSpec(size=128, margin=0.15, flatten_steps=8)

    def rect_path(self, shift_px=0.0):
        s = shift_px / self.CANVAS.scale
        rect = np.array(
            [[0.2 + s, 0.3], [0.8 + s, 0.3], [0.8 + s, 0.7], [0.2 + s, 0.7]]
        )
        pts, sps = path_from_polys([rect])
        return GlyphPath(points=pts, subpaths=sps)

    def test_identity_zero(self):
        path = self.rect_path()
        img, _ = raster.rasterize(path, self.CANVAS)
        res = raster.tone_loss(img, path, 8.0, self.CANVAS)
        assert res.loss == 0.0
        assert np.all(res.grad == 0.0)

    def test_symmetry(self):
        a = self.rect_path()
        b = self.rect_path(shift_px=3.0)
        img_a, _ = raster.rasterize(a, self.CANVAS)
        img_b, _ = raster.rasterize(b, self.CANVAS)
        ab = raster.tone_loss(img_a, b, 8.0, self.CANVAS).loss
        ba = raster.tone_loss(img_b, a, 8.0, self.CANVAS).loss
        assert abs(ab - ba) <= 1e-15

    @pytest.mark.parametrize("reduction", ["mean", "sum"])
    def test_matches_brute_force(self, reduction):
        a = self.rect_path()
        b = self.rect_path(shift_px=3.0)
        img_a, _ = raster.rasterize(a, self.CANVAS)
        got = raster.tone_loss(img_a, b, 8.0, self.CANVAS, reduction=reduction).loss
        img_b, _ = raster.rasterize(b, self.CANVAS)
        blur_a = raster.gaussian_lpf(img_a.data, 8.0)
        blur_b = raster.gaussian_lpf(img_b.data, 8.0)
        brute = float(np.sum((blur_a - blur_b) ** 2))
        if reduction == "mean":
            brute /= blur_a.size
        assert abs(got - brute) <= 1e-9 * max(1.0, brute)

    def test_gradient_finite_differences(self, rng):
        a = self.rect_path()
        img_a, _ = raster.rasterize(a, self.CANVAS)
        b = self.rect_path(shift_px=3.0)
        res = raster.tone_loss(img_a, b, 8.0, self.CANVAS)

        def f(x):
            return raster.tone_loss(
                img_a, b.with_points(x.reshape(-1, 2)), 8.0, self.CANVAS
            ).loss

        idx = rng.choice(b.points.size, size=8, replace=False)
        fd = oracles.central_difference(f, b.points.ravel(), h=2e-6, indices=idx)
        ana = res.grad.ravel()[idx]
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(fd)), 1e-10)
        assert np.max(np.abs(ana - fd) / denom) <= 1e-3

    def test_canvas_mismatch(self):
        path = self.rect_path()
        img, _ = raster.rasterize(path, self.CANVAS)
        other = raster.CanvasSpec(size=64, margin=0.15, flatten_steps=8)
        with pytest.raises(CanvasMismatch):
            raster.tone_loss(img, path, 8.0, other)


class TestPng:
    def test_round_trip_quantized(self, rng, tmp_path):
        img = raster.RasterImage(rng.uniform(size=(32, 32)), CANVAS16)
        out = tmp_path / "img.png"
        raster.to_png(img, out)
        back = raster.from_png(out)
        assert back.shape == (32, 32)
        assert np.abs(back - img.data).max() <= 0.5 / 255 + 1e-12
