"""Acceptance suite: every criterion runs at its stated tolerance and prints
one PASS line. Criteria over the remote diffusion service itself live in the
service package; here the wire protocol is exercised against the local mock.
"""

import string
import time

import numpy as np
import pytest

import oracles
from wire_mock import mock_service
from wordasimage import acap, augmentation, compose, engine, fonts, guidance, raster
from wordasimage.fonts import GlyphPath, Subpath

from test_acap import glyph_like_polygon, polygon_path, regular_polygon, similarity
from test_raster import blob_path, path_from_polys


def _report(name: str, elapsed: float):
    print(f"PASS  {name}  ({elapsed:.1f}s)")


@pytest.fixture(scope="module")
def font(font_bytes_module=None):
    import pathlib

    data = pathlib.Path(__file__).parent / "data" / "DejaVuSans.ttf"
    return data.read_bytes()


def test_criterion_1_schedule_values():
    t0 = time.perf_counter()
    assert engine.beta_schedule(300, 100.0, 300.0, 30.0) == 100.0
    cfg = engine.RunConfig()
    assert engine.lr_schedule(0, cfg) == 0.1
    assert engine.lr_schedule(100, cfg) == 0.8
    assert abs(engine.lr_schedule(500, cfg) - 0.4) <= 1e-12
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _report("criterion 1: schedule values", elapsed)


def test_criterion_2_rasterizer_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(220)
    canvas = raster.CanvasSpec(size=128, margin=0.15, flatten_steps=8)
    rel_errors = []
    for trial in range(100):
        path = blob_path(rng, n=int(rng.integers(5, 9)))
        img, vjp = raster.rasterize(path, canvas)
        upstream = rng.normal(size=img.data.shape)
        ana = vjp(upstream).ravel()

        def f(x):
            i, _ = raster.rasterize(path.with_points(x.reshape(-1, 2)), canvas)
            return float(np.sum(upstream * i.data))

        idx = rng.choice(path.points.size, size=6, replace=False)
        fd = oracles.central_difference(
            f, path.points.ravel(), h=1e-4 / canvas.scale, indices=idx
        )
        denom = np.maximum(np.maximum(np.abs(ana[idx]), np.abs(fd)), 1e-3)
        rel_errors.extend((np.abs(ana[idx] - fd) / denom).tolist())
    rel_errors = np.asarray(rel_errors)
    assert np.mean(rel_errors <= 1e-3) >= 0.98
    assert rel_errors.max() <= 1e-2
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    _report(
        f"criterion 2: raster vjp suite ({len(rel_errors)} probes, "
        f"worst {rel_errors.max():.2e})",
        elapsed,
    )


def test_criterion_3_acap_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    for _ in range(20):
        pts = glyph_like_polygon(rng, n=int(rng.choice([9, 12, 15])))
        tri = acap.triangulate_interior(polygon_path(pts))
        assert acap.acap_loss(pts, pts.copy(), tri).loss <= 1e-10
        t = similarity(
            pts,
            angle=float(rng.uniform(0, 2 * np.pi)),
            scale=float(rng.uniform(0.25, 4.0)),
            shift=rng.uniform(-2, 2, size=2),
        )
        assert acap.acap_loss(pts, t, tri).loss <= 1e-10
    # gradient correctness on non-degenerate perturbed configurations
    pts = glyph_like_polygon(rng, n=12)
    tri = acap.triangulate_interior(polygon_path(pts))
    checked = 0
    while checked < 30:
        p_hat = pts + rng.normal(scale=0.06, size=pts.shape)
        if np.min(np.abs(acap.corner_angles(p_hat, tri, warn=False))) <= 0.05:
            continue
        res = acap.acap_loss(pts, p_hat, tri)
        idx = rng.choice(pts.size, size=4, replace=False)
        fd = oracles.central_difference(
            lambda p: acap.acap_loss(pts, p, tri).loss, p_hat, h=1e-6, indices=idx
        )
        ana = res.grad.ravel()[idx]
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(ana)), 1e-6)
        assert np.max(np.abs(ana - fd) / denom) <= 1e-4
        checked += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    _report("criterion 3: acap similarity invariance + gradients", elapsed)


def test_criterion_4_triangulation():
    t0 = time.perf_counter()
    for n in (6, 9, 12, 18, 27):
        tri = acap.triangulate_interior(polygon_path(regular_polygon(n)))
        assert len(tri.triangles) == n - 2
    outer_n, inner_n = 24, 15
    outer = regular_polygon(outer_n, 1.0)
    inner = regular_polygon(inner_n, 0.45)[::-1]
    path = GlyphPath(
        points=np.concatenate([outer, inner]),
        subpaths=(Subpath(0, outer_n // 3), Subpath(outer_n, inner_n // 3)),
    )
    tri = acap.triangulate_interior(path)

    def area(t):
        a, b, c = path.points[t]
        return 0.5 * abs((b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0])

    total = sum(area(t) for t in tri.triangles)
    expected = abs(oracles.shoelace(outer)) - abs(oracles.shoelace(inner[::-1]))
    assert abs(total - expected) <= 1e-6 * expected
    rings = [path.points[path.subpath_point_indices(sp)] for sp in path.subpaths]
    for t in tri.triangles:
        assert oracles.winding_number(rings, path.points[t].mean(axis=0)) != 0
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    _report("criterion 4: triangulation counts, areas, interior test", elapsed)


def test_criterion_5_tone_loss():
    t0 = time.perf_counter()
    canvas = raster.CanvasSpec(size=128, margin=0.15, flatten_steps=8)
    sigma = 8.0
    rect = np.array([[0.2, 0.3], [0.8, 0.3], [0.8, 0.7], [0.2, 0.7]])
    pts, sps = path_from_polys([rect])
    a = GlyphPath(points=pts, subpaths=sps)
    shift = 3.0 / canvas.scale
    b = a.with_points(a.points + np.array([shift, 0.0]))
    img_a, _ = raster.rasterize(a, canvas)
    img_b, _ = raster.rasterize(b, canvas)

    assert raster.tone_loss(img_a, a, sigma, canvas).loss == 0.0
    ab = raster.tone_loss(img_a, b, sigma, canvas).loss
    ba = raster.tone_loss(img_b, a, sigma, canvas).loss
    assert abs(ab - ba) <= 1e-15

    blur_a = raster.gaussian_lpf(img_a.data, sigma)
    blur_b = raster.gaussian_lpf(img_b.data, sigma)
    brute = float(np.mean((blur_a - blur_b) ** 2))
    assert abs(ab - brute) <= 1e-9 * max(1.0, brute)

    rng = np.random.default_rng(55)
    res = raster.tone_loss(img_a, b, sigma, canvas)
    idx = rng.choice(b.points.size, size=8, replace=False)
    fd = oracles.central_difference(
        lambda x: raster.tone_loss(img_a, b.with_points(x.reshape(-1, 2)), sigma, canvas).loss,
        b.points.ravel(),
        h=2e-6,
        indices=idx,
    )
    ana = res.grad.ravel()[idx]
    denom = np.maximum(np.maximum(np.abs(ana), np.abs(fd)), 1e-10)
    assert np.max(np.abs(ana - fd) / denom) <= 1e-3
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    _report("criterion 5: tone identity/symmetry/brute-force/gradient", elapsed)


def test_criterion_6_subdivision_fidelity(font):
    t0 = time.perf_counter()
    targets = fonts.default_subdivision_targets()
    for ch in string.ascii_uppercase:
        path = fonts.to_cubics(fonts.load_glyph(font, ch))
        target = max(targets[ch], path.point_count)
        out = fonts.subdivide_to_target(path, target)
        assert out.point_count >= targets[ch]
        d = oracles.sampled_hausdorff(path, out, samples_per_segment=32)
        assert d <= 1e-8, f"{ch}: hausdorff {d}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    _report("criterion 6: 26-letter subdivision fidelity", elapsed)


def _criterion7_setup(font):
    path = fonts.to_cubics(fonts.load_glyph(font, "O"))
    cfg = engine.RunConfig(
        iterations=200,
        acap_weight=0.5,
        tone=engine.ToneConfig(a=100.0, b=120.0, c=12.0, sigma=8.0),
        canvas_size=128,
        flatten_steps=8,
        augment=engine.AugmentConfig(crop_size=128, distortion_scale=0.0, p_perspective=0.0),
        guidance=guidance.GuidanceSpec(backend="oracle", concept="O"),
        seed=7,
    )
    canvas = cfg.canvas()
    shifted = path.with_points(path.points + np.array([8.0 / canvas.scale, 0.0]))
    timg, _ = raster.rasterize_px(
        canvas.em_to_px(shifted.points), shifted.subpaths, canvas
    )
    target = engine.default_oracle_target(timg.data, cfg)
    return path, cfg, target


def test_criterion_7_end_to_end_oracle_convergence(font):
    t0 = time.perf_counter()
    path, cfg, target = _criterion7_setup(font)
    runs = []
    for _ in range(2):
        backend = guidance.OracleBackend(target)
        runs.append(engine.optimize_letter(path, cfg, backend=backend))
    res, res2 = runs
    proxy = res.traces["loss_guidance_proxy"]
    assert proxy[-1] <= 0.1 * proxy[0]
    assert res.traces["loss_acap"][-1] <= 0.05
    for k in engine.TRACE_KEYS:
        assert np.array_equal(res.traces[k], res2.traces[k]), f"trace {k} not bitwise equal"
        assert np.all(np.isfinite(res.traces[k]))
    assert np.array_equal(res.path.points, res2.path.points)
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    _report(
        f"criterion 7: oracle convergence (guidance {proxy[-1] / proxy[0]:.1e} of start, "
        f"acap {res.traces['loss_acap'][-1]:.1e})",
        elapsed,
    )


def test_criterion_8_mock_service_integration(font):
    t0 = time.perf_counter()
    path, cfg, target = _criterion7_setup(font)
    oracle_backend = guidance.OracleBackend(np.rint(target * 255.0) / 255.0)
    oracle_res = engine.optimize_letter(path, cfg, backend=oracle_backend)
    n_pix = target.size
    canvas = cfg.canvas()

    with mock_service(target, reduction="mean") as (url, _):
        gspec = guidance.GuidanceSpec(
            backend="remote", concept="O", endpoint=url, retry=3
        )
        import dataclasses

        cfg_remote = dataclasses.replace(cfg, guidance=gspec)
        remote_res = engine.optimize_letter(path, cfg_remote)

        # wire-protocol adjoint correctness: per-pixel gradient equivalence
        # at matched states, separated only by the 8-bit image transport
        rng = np.random.default_rng(0)
        probes = [
            path.points,
            oracle_res.path.points,
            (path.points + oracle_res.path.points) / 2.0,
        ]
        for pts in probes:
            r, _ = raster.rasterize_px(canvas.em_to_px(pts), path.subpaths, canvas)
            x_aug, _ = augmentation.apply(
                r.data,
                augmentation.AugmentParams(False, np.zeros((4, 2)), (0, 0), 128, 128),
            )
            g_oracle = oracle_backend(x_aug, rng).grad
            g_remote = guidance.remote_sds_grad(x_aug, gspec, seed=1).grad
            assert np.abs(g_remote - g_oracle).max() <= (1.0 / 255.0) / n_pix + 1e-9

    proxy = remote_res.traces["loss_guidance_proxy"]
    assert proxy[-1] <= 0.1 * proxy[0]
    assert remote_res.traces["loss_acap"][-1] <= 0.05
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    _report("criterion 8: remote mock reproduces oracle behaviour over the wire", elapsed)
