"""FastAPI app exposing a model over the hard-label wire protocol.

GET  /info      -> {"classes": K, "channels": C, "height": H, "width": W}
POST /classify  {"data": [C*H*W floats]} -> {"label": k}

Any malformed or mis-shaped payload gets a 400 with {"error": ...}; internal
failures get a 500 in the same envelope. Clients key off status codes, so the
default 422 validation response is remapped.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel


class ClassifyRequest(BaseModel):
    data: list[float]


def create_app(model) -> FastAPI:
    app = FastAPI(title="oracle-server", docs_url=None, redoc_url=None)
    flat_size = int(np.prod(model.shape))

    @app.exception_handler(RequestValidationError)
    async def _on_invalid(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "malformed payload"})

    @app.exception_handler(Exception)
    async def _on_crash(request: Request, exc: Exception):
        return JSONResponse(
            status_code=500, content={"error": f"{type(exc).__name__}: {exc}"}
        )

    @app.get("/info")
    def info():
        channels, height, width = model.shape
        return {
            "classes": model.num_classes,
            "channels": channels,
            "height": height,
            "width": width,
        }

    @app.post("/classify")
    def classify(req: ClassifyRequest):
        if len(req.data) != flat_size:
            return JSONResponse(
                status_code=400,
                content={"error": f"expected {flat_size} values, got {len(req.data)}"},
            )
        values = np.asarray(req.data, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            return JSONResponse(
                status_code=400, content={"error": "non-finite values in data"}
            )
        label = model.classify(values.reshape(model.shape))
        return {"label": label}

    return app
