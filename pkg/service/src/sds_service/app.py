"""FastAPI application: health gating, request validation, gradient endpoint.

Configuration comes from the environment:
  MOCK_TARGET     path to a PNG; switches to the mock backend (no ML deps)
  MOCK_REDUCTION  sum | mean (mock only; default sum)
  MODEL_ID        diffusers checkpoint tag (default runwayml/stable-diffusion-v1-5)
  DEVICE          torch device for the real backend (default cpu)
  W_SCHEME        sigma2 | one, the w(t) weighting (default sigma2)
  PORT            serve port for `python -m sds_service`
"""

from __future__ import annotations

import logging
import os
import threading
import time
from contextlib import asynccontextmanager

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .backends import DiffusionBackend, MockBackend
from .protocol import BadImage, GradientRequest, GradientResponse, decode_image, encode_grad

log = logging.getLogger("sds_service")


def build_backend_from_env():
    mock_target = os.environ.get("MOCK_TARGET")
    if mock_target:
        return MockBackend(mock_target, os.environ.get("MOCK_REDUCTION", "sum"))
    return DiffusionBackend(
        os.environ.get("MODEL_ID", "runwayml/stable-diffusion-v1-5"),
        os.environ.get("DEVICE", "cpu"),
        os.environ.get("W_SCHEME", "sigma2"),
    )


def create_app(backend_factory=build_backend_from_env) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.backend = backend_factory()
        log.info("backend ready: %s", app.state.backend.model_id)
        yield

    app = FastAPI(lifespan=lifespan)
    app.state.backend = None
    app.state.lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/v1/health")
    async def health():
        backend = app.state.backend
        if backend is None:
            return JSONResponse(status_code=503, content={"status": "loading"})
        return {"status": "ok", "model_id": backend.model_id}

    @app.post("/v1/gradient")
    async def gradient(req: GradientRequest):
        backend = app.state.backend
        if backend is None:
            return JSONResponse(status_code=503, content={"error": "model not ready"})
        if req.t_min > req.t_max:
            return JSONResponse(
                status_code=400, content={"error": "t_min must not exceed t_max"}
            )
        try:
            image = decode_image(req.image_png_b64)
        except BadImage as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        started = time.perf_counter()
        try:
            with app.state.lock:  # one model worker; queue concurrent clients
                grad, t_used, loss_proxy = backend.compute(
                    image, req.prompt, req.seed, req.t_min, req.t_max,
                    req.guidance_scale,
                )
        except Exception as exc:  # backend failure is a server error
            log.exception("gradient computation failed")
            return JSONResponse(status_code=500, content={"error": str(exc)})
        elapsed = time.perf_counter() - started
        if not np.all(np.isfinite(grad)) or not np.isfinite(loss_proxy):
            log.error("non-finite gradient (seed=%s, t=%s)", req.seed, t_used)
            return JSONResponse(
                status_code=500, content={"error": "non-finite gradient"}
            )
        log.info(
            "gradient seed=%s t=%s loss=%.4g latency=%.3fs",
            req.seed, t_used, loss_proxy, elapsed,
        )
        return GradientResponse(
            grad=encode_grad(grad), t_used=t_used, loss_proxy=loss_proxy
        )

    return app


def main() -> None:
    import uvicorn

    logging.basicConfig(level=logging.INFO)
    uvicorn.run(create_app(), host="0.0.0.0", port=int(os.environ.get("PORT", "8000")))


if __name__ == "__main__":
    main()
