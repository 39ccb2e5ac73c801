"""Wire protocol models and image/gradient codecs.

POST /v1/gradient request/response bodies. Images travel as base64 PNG
(512x512, 8-bit RGB); gradients come back as base64 little-endian float32,
length 512*512*3, HWC row-major.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from pydantic import BaseModel, Field

SIDE = 512


class GradientRequest(BaseModel):
    image_png_b64: str
    prompt: str
    seed: int = 0
    t_min: int = Field(default=50, ge=1, le=999)
    t_max: int = Field(default=950, ge=1, le=999)
    guidance_scale: float = Field(default=100.0, ge=1.0)


class GradientResponse(BaseModel):
    grad: str
    t_used: int
    loss_proxy: float


class BadImage(ValueError):
    pass


def decode_image(b64: str) -> np.ndarray:
    """Decode to float32 (SIDE, SIDE, 3) in [0, 1]; raise BadImage otherwise."""
    from PIL import Image

    try:
        raw = base64.b64decode(b64, validate=True)
    except Exception as exc:
        raise BadImage(f"invalid base64: {exc}") from exc
    try:
        with Image.open(io.BytesIO(raw)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as exc:
        raise BadImage(f"not a decodable image: {exc}") from exc
    if arr.shape != (SIDE, SIDE, 3):
        raise BadImage(f"image must be {SIDE}x{SIDE}x3, got {arr.shape}")
    return arr


def encode_grad(grad: np.ndarray) -> str:
    grad = np.ascontiguousarray(grad, dtype="<f4")
    if grad.shape != (SIDE, SIDE, 3):
        raise ValueError(f"gradient must be {SIDE}x{SIDE}x3, got {grad.shape}")
    return base64.b64encode(grad.tobytes()).decode("ascii")
