"""Command-line interface.

  wordasimage run --word BUNNY --font DejaVuSans.ttf --out out/
  wordasimage compose --manifest out/manifest.json --choose 0,2 --out word.svg
  wordasimage check-gradients

Exit codes: 0 ok, 1 usage error, 2 per-letter failure(s), 3 service failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import compose as compose_mod
from . import engine
from .errors import WordAsImageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wordasimage")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="optimize the letters of a word")
    run.add_argument("--word", required=True)
    run.add_argument("--concept", default="", help="defaults to the word")
    run.add_argument("--font", required=True, help="TTF/OTF font file")
    run.add_argument("--letters", default="", help="comma-separated indices; default all")
    run.add_argument("--config", default="", help="YAML config mirroring RunConfig")
    run.add_argument("--backend", choices=["oracle", "remote"], default=None)
    run.add_argument("--endpoint", default=None, help="remote service URL")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--iterations", type=int, default=None)
    run.add_argument("--canvas", type=int, default=None)
    run.add_argument("--jobs", type=int, default=0, help="worker threads")
    run.add_argument("--out", required=True, help="output directory")

    comp = sub.add_parser("compose", help="assemble a word SVG from a manifest")
    comp.add_argument("--manifest", required=True)
    comp.add_argument(
        "--choose",
        default="",
        help="comma-separated indices that use the deformed letter",
    )
    comp.add_argument("--out", required=True)

    sub.add_parser("check-gradients", help="run the finite-difference suites")
    return parser


def _parse_indices(text: str) -> tuple[int, ...]:
    if not text.strip():
        return ()
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise SystemExit(1)


def _cmd_run(args) -> int:
    cfg = (
        compose_mod.load_config_file(args.config)
        if args.config
        else engine.RunConfig()
    )
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.iterations is not None:
        over["iterations"] = args.iterations
    if args.canvas is not None:
        over["canvas_size"] = args.canvas
    gover = {}
    if args.backend is not None:
        gover["backend"] = args.backend
    if args.endpoint is not None:
        gover["endpoint"] = args.endpoint
    if gover:
        over["guidance"] = dataclasses.replace(cfg.guidance, **gover)
    if over:
        cfg = dataclasses.replace(cfg, **over)
    letters = _parse_indices(args.letters) or None
    try:
        job = compose_mod.WordJob(
            word=args.word,
            concept=args.concept,
            font=args.font,
            letters=letters,
            out_dir=args.out,
            config=cfg,
            jobs=args.jobs,
        )
    except (WordAsImageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        manifest = compose_mod.run_word(job)
    except (WordAsImageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    failures = [e for e in manifest["letters"] if e["status"] != "ok"]
    for e in failures:
        print(f"letter {e['index']} ({e['letter']!r}): {e['error']}", file=sys.stderr)
    print(f"manifest: {args.out}/manifest.json ({len(manifest['files'])} artifacts)")
    if manifest.get("service_failure"):
        return 3
    return 2 if failures else 0


def _cmd_compose(args) -> int:
    choices = {i: "deformed" for i in _parse_indices(args.choose)}
    try:
        compose_mod.compose_word(args.manifest, choices, args.out)
    except WordAsImageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


def _cmd_check_gradients() -> int:
    """Small randomized finite-difference suites over every VJP."""
    from . import acap as acap_mod
    from . import augmentation, raster
    from .fonts import GlyphPath, Subpath

    rng = np.random.default_rng(0)
    failures = 0

    def report(name: str, ok: bool):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    def central_diff(f, x, h, idx):
        out = []
        for i in idx:
            xp = x.copy()
            xp[i] += h
            xm = x.copy()
            xm[i] -= h
            out.append((f(xp) - f(xm)) / (2 * h))
        return np.asarray(out)

    # rasterizer
    n = 7
    ang = 2 * np.pi * np.arange(n) / n
    r = 0.3 * (1 + rng.uniform(-0.2, 0.2, n))
    on = np.stack([0.5 + r * np.cos(ang), 0.5 + r * np.sin(ang)], axis=1)
    pts = []
    for i in range(n):
        a, b = on[i], on[(i + 1) % n]
        pts.extend([a, a + (b - a) / 3, a + 2 * (b - a) / 3])
    path = GlyphPath(points=np.asarray(pts), subpaths=(Subpath(0, n),))
    canvas = raster.CanvasSpec(size=32, margin=0.15, flatten_steps=6)
    img, vjp = raster.rasterize(path, canvas)
    upstream = rng.normal(size=img.data.shape)
    ana = vjp(upstream).ravel()

    def f_raster(x):
        i, _ = raster.rasterize(path.with_points(x.reshape(-1, 2)), canvas)
        return float(np.sum(upstream * i.data))

    idx = rng.choice(path.points.size, 8, replace=False)
    fd = central_diff(f_raster, path.points.ravel(), 1e-5, idx)
    err = np.abs(ana[idx] - fd) / np.maximum(np.maximum(np.abs(ana[idx]), np.abs(fd)), 1e-3)
    report("rasterizer vjp vs finite differences", float(err.max()) <= 1e-3)

    # acap
    tri = acap_mod.triangulate_interior(path)
    p_hat = path.points + rng.normal(scale=0.01, size=path.points.shape)
    res = acap_mod.acap_loss(path.points, p_hat, tri)

    def f_acap(x):
        return acap_mod.acap_loss(path.points, x.reshape(-1, 2), tri).loss

    fd = central_diff(f_acap, p_hat.ravel(), 1e-6, idx)
    ana = res.grad.ravel()[idx]
    err = np.abs(ana - fd) / np.maximum(np.maximum(np.abs(ana), np.abs(fd)), 1e-6)
    report("acap analytic gradient vs finite differences", float(err.max()) <= 1e-4)

    # augmentation
    img32 = rng.uniform(size=(32, 32))
    params = augmentation.AugmentParams(
        True, rng.uniform(-6, 6, (4, 2)), (2, 2), 32, 24
    )
    out, avjp = augmentation.apply(img32, params)
    u24 = rng.normal(size=(24, 24))
    ana = avjp(u24).ravel()

    def f_aug(x):
        o, _ = augmentation.apply(x.reshape(32, 32), params)
        return float(np.sum(u24 * o))

    idx2 = rng.choice(img32.size, 8, replace=False)
    fd = central_diff(f_aug, img32.ravel(), 1e-4, idx2)
    err = np.abs(ana[idx2] - fd) / np.maximum(np.maximum(np.abs(ana[idx2]), np.abs(fd)), 1e-3)
    report("augmentation vjp vs finite differences", float(err.max()) <= 1e-3)

    # tone
    img_ref, _ = raster.rasterize(path, canvas)
    shifted = path.with_points(path.points + np.array([0.03, 0.0]))
    tone = raster.tone_loss(img_ref, shifted, 2.0, canvas)

    def f_tone(x):
        return raster.tone_loss(img_ref, shifted.with_points(x.reshape(-1, 2)), 2.0, canvas).loss

    fd = central_diff(f_tone, shifted.points.ravel(), 1e-5, idx)
    ana = tone.grad.ravel()[idx]
    err = np.abs(ana - fd) / np.maximum(np.maximum(np.abs(ana), np.abs(fd)), 1e-8)
    report("tone loss gradient vs finite differences", float(err.max()) <= 1e-3)

    return 2 if failures else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "compose":
        return _cmd_compose(args)
    if args.command == "check-gradients":
        return _cmd_check_gradients()
    return 1


if __name__ == "__main__":
    sys.exit(main())
