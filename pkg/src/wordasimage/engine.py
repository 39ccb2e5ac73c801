"""Per-letter optimization loop: schedules, Adam, and loss combination.

Control points are optimized in canvas pixel coordinates, where the
published learning-rate range (0.1 warm-up to 0.8, decaying to 0.4) has its
intended magnitude; paths enter and leave in em units. Per iteration the
deformed letter is rasterized, augmented, scored by the guidance backend,
and the guidance pixel-gradient is combined with the angle-preservation
term (weight alpha) and the blur-comparison tone term (weight beta_t, a
Gaussian bump over iterations) through the shared rasterization VJP.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import acap as acap_mod
from . import augmentation
from .errors import NonFiniteGradient, ServiceUnavailable, SizeMismatch
from .fonts import GlyphPath
from .guidance import GuidanceSpec, OracleBackend, RemoteBackend
from .raster import CanvasSpec, RasterImage, from_png, gaussian_lpf, rasterize_px, tone_terms


@dataclass(frozen=True)
class LrSchedule:
    warm_start: float = 0.1
    peak: float = 0.8
    final: float = 0.4
    warm_iters: int = 100


@dataclass(frozen=True)
class AdamParams:
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-6


@dataclass(frozen=True)
class ToneConfig:
    a: float = 100.0
    b: float = 300.0
    c: float = 30.0
    sigma: float = 30.0
    reduction: str = "mean"  # "mean" | "sum" pixel convention of the L2


@dataclass(frozen=True)
class AugmentConfig:
    crop_size: int = 512
    distortion_scale: float = 0.5
    p_perspective: float = 0.7


@dataclass(frozen=True)
class RunConfig:
    iterations: int = 500
    acap_weight: float = 0.5
    tone: ToneConfig = field(default_factory=ToneConfig)
    lr: LrSchedule = field(default_factory=LrSchedule)
    adam: AdamParams = field(default_factory=AdamParams)
    canvas_size: int = 600
    margin: float = 0.15
    flatten_steps: int = 16
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    guidance: GuidanceSpec = field(default_factory=GuidanceSpec)
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.augment.crop_size > self.canvas_size:
            raise ValueError("crop must fit inside the canvas")

    def canvas(self) -> CanvasSpec:
        return CanvasSpec(self.canvas_size, self.margin, self.flatten_steps)


def beta_schedule(t: float, a: float, b: float, c: float) -> float:
    """Gaussian bump a * exp(-(t-b)^2 / (2 c^2)) over iterations."""
    if c <= 0:
        raise ValueError("c must be positive")
    return a * math.exp(-((t - b) ** 2) / (2.0 * c**2))


def lr_schedule(t: int, cfg: RunConfig) -> float:
    """Linear warm-up then exponential decay hitting the published endpoints."""
    lr = cfg.lr
    if t <= lr.warm_iters:
        u = t / lr.warm_iters
        return lr.warm_start * (1.0 - u) + lr.peak * u
    decay_iters = cfg.iterations - lr.warm_iters
    gamma = (lr.final / lr.peak) ** (1.0 / decay_iters)
    return lr.peak * gamma ** (t - lr.warm_iters)


@dataclass(frozen=True)
class OptState:
    p_hat: np.ndarray  # (k, 2) pixel coordinates
    m: np.ndarray
    v: np.ndarray
    t: int

    @classmethod
    def initial(cls, p0: np.ndarray) -> "OptState":
        p0 = np.asarray(p0, dtype=float)
        return cls(p_hat=p0.copy(), m=np.zeros_like(p0), v=np.zeros_like(p0), t=0)


def adam_step(
    state: OptState, grad: np.ndarray, lr: float, params: AdamParams = AdamParams()
) -> OptState:
    """One Adam update with bias correction at step t+1."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.p_hat.shape:
        raise SizeMismatch(f"grad {grad.shape} vs params {state.p_hat.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient is not finite", iteration=state.t)
    t1 = state.t + 1
    m = params.beta1 * state.m + (1.0 - params.beta1) * grad
    v = params.beta2 * state.v + (1.0 - params.beta2) * grad * grad
    m_hat = m / (1.0 - params.beta1**t1)
    v_hat = v / (1.0 - params.beta2**t1)
    p_new = state.p_hat - lr * m_hat / (np.sqrt(v_hat) + params.eps)
    return OptState(p_hat=p_new, m=m, v=v, t=t1)


@dataclass(frozen=True)
class EngineContext:
    """Per-run precomputations shared by every iteration."""

    path: GlyphPath  # original geometry (em units)
    p0_px: np.ndarray
    tri: acap_mod.Triangulation
    blur_ref: np.ndarray  # blurred original raster
    raster_ref: RasterImage
    canvas: CanvasSpec
    cfg: RunConfig
    backend: object  # callable(x_aug, rng) -> GuidanceGradient


def default_oracle_target(ctx_raster: np.ndarray, cfg: RunConfig) -> np.ndarray:
    """Centered crop of the original raster, the no-op guidance target."""
    off = (cfg.canvas_size - cfg.augment.crop_size) // 2
    m = cfg.augment.crop_size
    return ctx_raster[off : off + m, off : off + m].copy()


def build_context(path: GlyphPath, cfg: RunConfig, backend=None) -> EngineContext:
    canvas = cfg.canvas()
    p0_px = canvas.em_to_px(path.points)
    tri = acap_mod.triangulate_interior(path.with_points(p0_px))
    raster_ref, _ = rasterize_px(p0_px, path.subpaths, canvas)
    blur_ref = gaussian_lpf(raster_ref.data, cfg.tone.sigma)
    if backend is None:
        if cfg.guidance.backend == "remote":
            backend = RemoteBackend(cfg.guidance)
        else:
            if cfg.guidance.oracle_target:
                target = from_png(cfg.guidance.oracle_target)
                if target.shape != (cfg.augment.crop_size,) * 2:
                    raise SizeMismatch(
                        f"oracle target {target.shape} vs crop {cfg.augment.crop_size}"
                    )
            else:
                target = default_oracle_target(raster_ref.data, cfg)
            backend = OracleBackend(target)
    return EngineContext(
        path=path,
        p0_px=p0_px,
        tri=tri,
        blur_ref=blur_ref,
        raster_ref=raster_ref,
        canvas=canvas,
        cfg=cfg,
        backend=backend,
    )


def total_gradient(
    p_hat_px: np.ndarray,
    ctx: EngineContext,
    t: int,
    params: augmentation.AugmentParams,
    rng: np.random.Generator,
):
    """Assembled gradient on the pixel-space control points plus loss terms.

    grad = vjp(guidance upstream + beta_t * tone upstream) + alpha * acap grad
    (the two image-space terms share one rasterization VJP by linearity).
    """
    cfg = ctx.cfg
    raster_hat, vjp = rasterize_px(p_hat_px, ctx.path.subpaths, ctx.canvas)
    x_aug, aug_vjp = augmentation.apply(raster_hat.data, params)
    g = ctx.backend(x_aug, rng)
    upstream = aug_vjp(g.grad)
    tone_val, tone_upstream = tone_terms(
        ctx.blur_ref, raster_hat.data, cfg.tone.sigma, cfg.tone.reduction
    )
    beta = beta_schedule(t, cfg.tone.a, cfg.tone.b, cfg.tone.c)
    acap_res = acap_mod.acap_loss(ctx.p0_px, p_hat_px, ctx.tri)
    grad = vjp(upstream + beta * tone_upstream) + cfg.acap_weight * acap_res.grad
    terms = {
        "loss_guidance_proxy": g.loss_proxy,
        "loss_acap": acap_res.loss,
        "loss_tone": tone_val,
        "beta_t": beta,
        "loss_total": g.loss_proxy + cfg.acap_weight * acap_res.loss + beta * tone_val,
    }
    return grad, terms, raster_hat


@dataclass
class LetterResult:
    path: GlyphPath  # deformed geometry, em units
    traces: dict  # per-iteration arrays, all of length cfg.iterations
    final_raster: RasterImage


class EngineAbort(RuntimeError):
    """Run aborted; carries the partial traces gathered so far."""

    def __init__(self, cause: Exception, iteration: int, traces: dict):
        super().__init__(f"aborted at iteration {iteration}: {cause}")
        self.cause = cause
        self.iteration = iteration
        self.traces = traces


TRACE_KEYS = ("lr", "beta_t", "loss_guidance_proxy", "loss_acap", "loss_tone", "loss_total")


def optimize_letter(
    path: GlyphPath, cfg: RunConfig, backend=None, seed_key: tuple = ()
) -> LetterResult:
    """Run the full loop on one letter; deterministic given (cfg.seed, seed_key)."""
    ctx = build_context(path, cfg, backend)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed,) + tuple(seed_key)))
    state = OptState.initial(ctx.p0_px)
    traces: dict = {k: [] for k in TRACE_KEYS}
    for t in range(cfg.iterations):
        params = augmentation.sample_params(
            rng,
            source_size=cfg.canvas_size,
            target_size=cfg.augment.crop_size,
            distortion_scale=cfg.augment.distortion_scale,
            p_perspective=cfg.augment.p_perspective,
        )
        try:
            grad, terms, _ = total_gradient(state.p_hat, ctx, t, params, rng)
            lr = lr_schedule(t, cfg)
            state = adam_step(state, grad, lr, cfg.adam)
        except (NonFiniteGradient, ServiceUnavailable) as exc:
            raise EngineAbort(exc, t, {k: np.asarray(v) for k, v in traces.items()})
        traces["lr"].append(lr)
        for k in TRACE_KEYS[1:]:
            traces[k].append(terms[k])
    final_px = state.p_hat
    final_path = path.with_points(ctx.canvas.px_to_em(final_px))
    final_raster, _ = rasterize_px(final_px, path.subpaths, ctx.canvas)
    return LetterResult(
        path=final_path,
        traces={k: np.asarray(v) for k, v in traces.items()},
        final_raster=final_raster,
    )


def write_trace_csv(traces: dict, out_path) -> None:
    """Per-iteration dump: iter, lr, beta_t and the three loss terms."""
    cols = ("lr", "beta_t", "loss_guidance_proxy", "loss_acap", "loss_tone")
    n = len(traces[cols[0]]) if traces.get(cols[0]) is not None else 0
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("iter",) + cols)
        for i in range(n):
            writer.writerow(
                [i] + [repr(float(traces[c][i])) for c in cols]
            )
