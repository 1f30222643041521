"""FastAPI application implementing the wire protocol.

POST /v1/embed_text   {"texts": [...]}                        -> {"dim", "embeddings"}
POST /v1/embed_image  {"image_uri": "..."}                    -> {"dim", "embedding"}
POST /v1/embed_region {"image_uri": "...", "box": [4 floats]} -> {"dim", "embedding"}
POST /v1/ground       {"image_uri": "...", "caption": "..."}  -> {"detections": [...]}
POST /v1/explain      {"prompt": "...", "n": k}               -> {"completions": [...]}
GET  /v1/health                                               -> {"status": "ok", "dim": D}

Errors use 4xx for invalid arguments and 5xx for backend failures, always
with an {"error": "..."} body. Handlers are stateless; model handles are
shared and safe for concurrent batch inference.
"""
from __future__ import annotations

import threading
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .config import ShimConfig
from .models import BadRequest, ImageNotFound, build_models


class EmbedTextRequest(BaseModel):
    texts: list[str] = Field(min_length=1)


class EmbedImageRequest(BaseModel):
    image_uri: str = Field(min_length=1)


class EmbedRegionRequest(BaseModel):
    image_uri: str = Field(min_length=1)
    box: list[float] = Field(min_length=4, max_length=4)


class GroundRequest(BaseModel):
    image_uri: str = Field(min_length=1)
    caption: str = Field(min_length=1)


class ExplainRequest(BaseModel):
    prompt: str = Field(min_length=1)
    n: int = Field(ge=1)


def create_app(config: Optional[ShimConfig] = None) -> FastAPI:
    config = config or ShimConfig()
    encoder, grounder, explainer = build_models(config)
    app = FastAPI(title="gsr-serving-shim")
    # CLIP-style models tolerate concurrent forward passes poorly on CPU;
    # a lock keeps inference serialized while HTTP handling stays concurrent.
    inference_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc.errors()[:1])})

    @app.exception_handler(BadRequest)
    async def bad_request(request: Request, exc: BadRequest):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(ImageNotFound)
    async def not_found(request: Request, exc: ImageNotFound):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(Exception)
    async def server_error(request: Request, exc: Exception):
        return JSONResponse(status_code=500, content={"error": str(exc)})

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "dim": encoder.dim}

    @app.post("/v1/embed_text")
    def embed_text(request: EmbedTextRequest):
        if any(not t for t in request.texts):
            raise BadRequest("texts must be non-empty strings")
        with inference_lock:
            embeddings = encoder.embed_text(request.texts)
        return {"dim": encoder.dim, "embeddings": embeddings.tolist()}

    @app.post("/v1/embed_image")
    def embed_image(request: EmbedImageRequest):
        with inference_lock:
            embedding = encoder.embed_image(request.image_uri)
        return {"dim": encoder.dim, "embedding": embedding.tolist()}

    @app.post("/v1/embed_region")
    def embed_region(request: EmbedRegionRequest):
        with inference_lock:
            embedding = encoder.embed_region(request.image_uri, request.box)
        return {"dim": encoder.dim, "embedding": embedding.tolist()}

    @app.post("/v1/ground")
    def ground(request: GroundRequest):
        with inference_lock:
            detections = grounder.ground(request.image_uri, request.caption)
        return {"detections": detections}

    @app.post("/v1/explain")
    def explain(request: ExplainRequest):
        completions = explainer.explain(request.prompt, request.n)
        return {"completions": completions}

    return app
