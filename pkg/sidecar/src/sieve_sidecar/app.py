"""The HTTP surface: /info, /caption, /embed over JSON.

Every non-200 response carries {"error": str}. Status mapping: 400 malformed
request, 404 unresolvable image, 413 batch beyond max_batch, 500 model
failure. Model work is serialized on one lock; responses stay independent
per request.
"""

from __future__ import annotations

import base64
import binascii
import io
import threading

from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, Field, model_validator
from starlette.exceptions import HTTPException as StarletteHTTPException

from .config import SidecarConfig
from .models import Captioner, Encoder


class ImageNotFound(Exception):
    """The request's image field does not resolve to an image."""


def decode_image_ref(ref: str, allow_url_fetch: bool = False) -> Image.Image:
    """Resolve the wire protocol's image field.

    Accepts a data: URI or raw base64 payload; http(s) URLs only when
    fetching is enabled (off by default, the service should not be a proxy).
    """
    if ref.startswith(("http://", "https://")):
        if not allow_url_fetch:
            raise ImageNotFound("URL fetching is disabled on this server")
        import requests

        try:
            response = requests.get(ref, timeout=30)
            response.raise_for_status()
            payload = response.content
        except requests.RequestException as exc:
            raise ImageNotFound(f"cannot fetch image URL: {exc}") from exc
    else:
        encoded = ref
        if ref.startswith("data:"):
            _, _, encoded = ref.partition(",")
        try:
            payload = base64.b64decode(encoded, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise ImageNotFound("image is not valid base64") from exc
    try:
        image = Image.open(io.BytesIO(payload))
        image.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageNotFound("payload does not decode to an image") from exc
    return image.convert("RGB")


class CaptionBody(BaseModel):
    image: str
    r: int = Field(gt=0)
    top_p: float = Field(gt=0.0, le=1.0)
    min_len: int = Field(gt=0)
    max_len: int = Field(gt=0)
    seed: int

    @model_validator(mode="after")
    def _ordered_lengths(self) -> "CaptionBody":
        if self.max_len < self.min_len:
            raise ValueError("max_len must be >= min_len")
        return self


class EmbedBody(BaseModel):
    texts: list[str]


def create_app(captioner: Captioner, encoder: Encoder, config: SidecarConfig) -> FastAPI:
    app = FastAPI(title="sieve-sidecar", docs_url=None, redoc_url=None, openapi_url=None)
    lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def invalid_request(request, exc: RequestValidationError) -> JSONResponse:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first.get("loc", ())) or "body"
        message = first.get("msg", "invalid request")
        return JSONResponse(status_code=400, content={"error": f"{where}: {message}"})

    @app.exception_handler(StarletteHTTPException)
    async def http_error(request, exc: StarletteHTTPException) -> JSONResponse:
        return JSONResponse(status_code=exc.status_code, content={"error": str(exc.detail)})

    @app.exception_handler(Exception)
    async def model_error(request, exc: Exception) -> JSONResponse:
        return JSONResponse(
            status_code=500, content={"error": f"{type(exc).__name__}: {exc}"}
        )

    @app.get("/info")
    def info() -> dict:
        return {
            "dim": encoder.dim,
            "encoder_id": encoder.encoder_id,
            "captioner_id": captioner.captioner_id,
            "deterministic": config.deterministic,
        }

    @app.post("/caption")
    def caption(body: CaptionBody) -> dict:
        if body.r > config.max_batch:
            raise HTTPException(413, f"r={body.r} exceeds max_batch={config.max_batch}")
        try:
            image = decode_image_ref(body.image, allow_url_fetch=config.allow_url_fetch)
        except ImageNotFound as exc:
            raise HTTPException(404, str(exc)) from exc
        with lock:
            captions = captioner.generate(
                image,
                r=body.r,
                top_p=body.top_p,
                min_len=body.min_len,
                max_len=body.max_len,
                seed=body.seed,
            )
        return {"captions": captions}

    @app.post("/embed")
    def embed(body: EmbedBody) -> dict:
        if len(body.texts) > config.max_batch:
            raise HTTPException(
                413, f"{len(body.texts)} texts exceed max_batch={config.max_batch}"
            )
        with lock:
            rows = encoder.encode(body.texts)
        return {"embeddings": [[float(x) for x in row] for row in rows]}

    return app
