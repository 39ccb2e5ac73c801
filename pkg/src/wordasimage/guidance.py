"""Semantic-guidance boundary: turn an augmented raster into a pixel gradient.

Two backends share one contract: the in-process oracle (squared distance to
a target image; exact, deterministic, used for testing and offline runs)
and the remote client for a diffusion-based scoring service. The engine is
single-channel; images are replicated to RGB on the way out and gradients
reduced by channel-sum on the way back, which is the exact adjoint pair.

Wire protocol (shared with the service):
  POST {endpoint}/v1/gradient
    {"image_png_b64": <512x512 8-bit RGB png>, "prompt": str, "seed": int,
     "t_min": int, "t_max": int, "guidance_scale": float}
  -> {"grad": <b64 little-endian float32, 512*512*3, HWC>, "t_used": int,
      "loss_proxy": float}
  GET {endpoint}/v1/health -> {"status": "ok", "model_id": str}
"""

from __future__ import annotations

import base64
import io
import time
from dataclasses import dataclass

import numpy as np
import requests

from .errors import EmptyWord, NonFiniteGradient, ProtocolError, ServiceUnavailable, SizeMismatch

DEFAULT_PROMPT_TEMPLATE = (
    "a {word}. minimal flat 2d vector. lineal color. trending on artstation."
)


@dataclass(frozen=True)
class GuidanceSpec:
    backend: str = "oracle"  # "oracle" | "remote"
    concept: str = ""
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    endpoint: str = ""
    timeout: float = 120.0
    retry: int = 3
    t_range: tuple[int, int] = (50, 950)
    guidance_scale: float = 100.0
    oracle_target: str | None = None  # PNG path for the oracle backend

    def __post_init__(self):
        if self.backend not in ("oracle", "remote"):
            raise ValueError(f"unknown guidance backend {self.backend!r}")
        t_min, t_max = self.t_range
        if self.backend == "remote" and not (1 <= t_min <= t_max <= 999):
            raise ValueError(f"t_range {self.t_range} outside [1, 999]")


@dataclass(frozen=True)
class GuidanceGradient:
    grad: np.ndarray  # (H, W), gradient on the single-channel image
    loss_proxy: float
    t_used: int | None = None


def build_prompt(word: str, template: str = DEFAULT_PROMPT_TEMPLATE) -> str:
    if not word:
        raise EmptyWord("concept word must be non-empty")
    return template.format(word=word)


def oracle_grad(x: np.ndarray, target: np.ndarray) -> GuidanceGradient:
    """Gradient of sum((x - target)^2) w.r.t. x."""
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    if x.shape != target.shape:
        raise SizeMismatch(f"image {x.shape} vs target {target.shape}")
    diff = x - target
    return GuidanceGradient(grad=2.0 * diff, loss_proxy=float(np.sum(diff * diff)))


def encode_image_png_b64(x: np.ndarray) -> str:
    """Quantize a [0,1] grayscale image to 8-bit RGB png, base64-encoded."""
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(x) * 255.0), 0, 255).astype(np.uint8)
    rgb = np.repeat(arr[:, :, None], 3, axis=2)
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_grad_b64(blob: str, side: int) -> np.ndarray:
    raw = base64.b64decode(blob)
    expected = side * side * 3 * 4
    if len(raw) != expected:
        raise ProtocolError(
            f"gradient payload is {len(raw)} bytes, expected {expected}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(side, side, 3)


def remote_sds_grad(x: np.ndarray, spec: GuidanceSpec, seed: int) -> GuidanceGradient:
    """POST the image to the scoring service and reduce the RGB gradient.

    Retries transport failures ``spec.retry`` times; a non-finite gradient is
    re-requested once with a bumped seed (the service draws its timestep from
    the seed) and then rejected.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise SizeMismatch(f"expected a square grayscale image, got {x.shape}")
    side = x.shape[0]
    payload = {
        "image_png_b64": encode_image_png_b64(x),
        "prompt": build_prompt(spec.concept, spec.prompt_template),
        "seed": int(seed),
        "t_min": int(spec.t_range[0]),
        "t_max": int(spec.t_range[1]),
        "guidance_scale": float(spec.guidance_scale),
    }
    for attempt in range(2):  # second pass only for a non-finite gradient
        body = _post_with_retries(spec, payload)
        try:
            grad_rgb = decode_grad_b64(body["grad"], side)
            t_used = int(body["t_used"])
            loss_proxy = float(body["loss_proxy"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed gradient response: {exc}") from exc
        if np.all(np.isfinite(grad_rgb)):
            # channel-sum is the adjoint of the gray -> RGB replication
            grad = grad_rgb.astype(np.float64).sum(axis=2)
            return GuidanceGradient(grad=grad, loss_proxy=loss_proxy, t_used=t_used)
        payload = dict(payload, seed=int(seed) + 1)
    raise NonFiniteGradient("service returned a non-finite gradient twice")


def _post_with_retries(spec: GuidanceSpec, payload: dict) -> dict:
    url = spec.endpoint.rstrip("/") + "/v1/gradient"
    last = None
    for attempt in range(max(1, spec.retry)):
        try:
            resp = requests.post(url, json=payload, timeout=spec.timeout)
        except requests.RequestException as exc:
            last = exc
            time.sleep(min(0.2 * (attempt + 1), 1.0))
            continue
        if resp.status_code in (502, 503, 504):
            last = ServiceUnavailable(f"service replied {resp.status_code}")
            time.sleep(min(0.2 * (attempt + 1), 1.0))
            continue
        if resp.status_code != 200:
            raise ProtocolError(
                f"service replied {resp.status_code}: {resp.text[:200]}"
            )
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response: {exc}") from exc
    raise ServiceUnavailable(
        f"no response from {url} after {spec.retry} attempts: {last}"
    )


def check_health(spec: GuidanceSpec) -> dict:
    url = spec.endpoint.rstrip("/") + "/v1/health"
    try:
        resp = requests.get(url, timeout=spec.timeout)
    except requests.RequestException as exc:
        raise ServiceUnavailable(f"health check failed: {exc}") from exc
    if resp.status_code != 200:
        raise ServiceUnavailable(f"service not ready: {resp.status_code}")
    return resp.json()


class OracleBackend:
    """In-process guidance against a fixed target image.

    ``reduction="mean"`` scales the squared distance by 1/N so the guidance
    force is canvas-size independent and balanced against the shape
    regularizers; "sum" is the raw squared distance.
    """

    def __init__(self, target: np.ndarray, reduction: str = "mean"):
        self.target = np.asarray(target, dtype=float)
        if reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {reduction!r}")
        self.reduction = reduction

    def __call__(self, x: np.ndarray, rng: np.random.Generator) -> GuidanceGradient:
        res = oracle_grad(x, self.target)
        if self.reduction == "sum":
            return res
        n = self.target.size
        return GuidanceGradient(
            grad=res.grad / n, loss_proxy=res.loss_proxy / n, t_used=res.t_used
        )


class RemoteBackend:
    """Guidance through the wire protocol; one request per call."""

    def __init__(self, spec: GuidanceSpec):
        self.spec = spec

    def __call__(self, x: np.ndarray, rng: np.random.Generator) -> GuidanceGradient:
        seed = int(rng.integers(0, 2**31 - 1))
        return remote_sds_grad(x, self.spec, seed)


class ZeroBackend:
    """Guidance disabled: zero gradient (regularizer-only runs)."""

    def __call__(self, x: np.ndarray, rng: np.random.Generator) -> GuidanceGradient:
        return GuidanceGradient(grad=np.zeros_like(np.asarray(x, dtype=float)),
                                loss_proxy=0.0)
