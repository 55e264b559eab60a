"""Classification HTTP service.

The model is loaded once and shared read-only across requests; predictions
are produced by the same inference path the CLI uses, so payloads match
bit-for-bit apart from the measured latency.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError

from .model import Model, Prediction, load_weights, preprocess


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8008
    weights_path: str | None = None
    default_k: int = 5
    max_upload_bytes: int = 8 * 1024 * 1024
    request_timeout_s: float = 30.0

    def __post_init__(self):
        if self.default_k < 1:
            raise ValueError(f"default_k must be >= 1, got {self.default_k}")
        if self.max_upload_bytes < 1 or self.request_timeout_s <= 0:
            raise ValueError("limits must be > 0")


def prediction_payload(pred: Prediction, model_version: str) -> dict:
    return {
        "predictions": [
            {"label": label, "probability": prob} for label, prob in pred.items
        ],
        "latency_ms": pred.latency_ms,
        "model_version": model_version,
    }


def classify_image_bytes(model: Model, data: bytes, k: int, model_version: str) -> dict:
    with Image.open(io.BytesIO(data)) as img:
        batch = preprocess(img, model.spec)
    pred = model.forward(batch, k=k)[0]
    return prediction_payload(pred, model_version)


def weight_file_version(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def create_app(config: ServiceConfig, model: Model | None = None, model_version: str | None = None) -> FastAPI:
    from contextlib import asynccontextmanager

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if app.state.model is None and config.weights_path:
            app.state.model = load_weights(config.weights_path)
            app.state.model_version = weight_file_version(config.weights_path)
        yield

    app = FastAPI(title="foodrec classification service", lifespan=lifespan)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.config = config
    app.state.model = model
    app.state.model_version = model_version or "unloaded"

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse({"error": message}, status_code=status)

    @app.get("/health")
    def health():
        if app.state.model is None:
            return error(503, "model not loaded")
        return {
            "status": "ok",
            "model_version": app.state.model_version,
            "num_classes": app.state.model.spec.num_classes,
        }

    @app.get("/classes")
    def classes():
        model = app.state.model
        if model is None:
            return error(503, "model not loaded")
        labels = model.labels or [str(i) for i in range(model.spec.num_classes)]
        return {"classes": [{"index": i, "label": l} for i, l in enumerate(labels)]}

    @app.post("/classify")
    async def classify(request: Request):
        model = app.state.model
        if model is None:
            return error(503, "model not loaded")
        declared = request.headers.get("content-length")
        if declared and declared.isdigit() and int(declared) > config.max_upload_bytes:
            return error(413, f"upload exceeds {config.max_upload_bytes} bytes")

        content_type = request.headers.get("content-type", "")
        k_value = request.query_params.get("k")
        if content_type.startswith("multipart/"):
            form = await request.form()
            upload = form.get("image") or form.get("file")
            if upload is None:
                return error(400, "multipart request lacks an 'image' field")
            data = await upload.read()
            k_value = k_value or form.get("k")
        else:
            data = await request.body()
        if len(data) > config.max_upload_bytes:
            return error(413, f"upload exceeds {config.max_upload_bytes} bytes")
        if not data:
            return error(400, "empty request body")

        k = config.default_k
        if k_value is not None:
            try:
                k = int(k_value)
            except (TypeError, ValueError):
                return error(422, f"k must be an integer, got {k_value!r}")
        if not 1 <= k <= model.spec.num_classes:
            return error(422, f"k={k} outside [1, {model.spec.num_classes}]")

        try:
            return classify_image_bytes(model, data, k, app.state.model_version)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            return error(400, f"could not decode image: {exc}")

    return app


def run_service(config: ServiceConfig, model: Model | None = None):
    import uvicorn

    app = create_app(config, model=model)
    uvicorn.run(app, host=config.host, port=config.port)
