"""HTTP surface: GET /info and POST /embed.

Status codes: 400 for any schema or range violation, 413 for a batch
over the configured limit, 500 for encoder failures.
"""

from __future__ import annotations

from typing import Literal, Union

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .encoder import MlmEncoder

PROTOCOL_VERSION = 1
DEFAULT_MAX_BATCH = 64


class Sentence(BaseModel):
    tokens: list[str] = Field(min_length=1)
    target_index: int = Field(ge=0)


class EmbedRequest(BaseModel):
    layers: Union[Literal["all"], list[int]]
    sentences: list[Sentence]


def create_app(encoder: MlmEncoder, max_batch: int = DEFAULT_MAX_BATCH) -> FastAPI:
    app = FastAPI(title="cwsd embedding provider")

    @app.exception_handler(RequestValidationError)
    async def schema_violation(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc.errors()[:3])})

    @app.get("/info")
    def info():
        return {
            "protocol_version": PROTOCOL_VERSION,
            "model_name": encoder.model_name,
            "dim": encoder.dim,
            "n_layers": encoder.n_layers,
            "max_tokens": encoder.max_tokens,
        }

    @app.post("/embed")
    def embed(request: EmbedRequest):
        if len(request.sentences) > max_batch:
            raise HTTPException(
                status_code=413,
                detail=f"batch of {len(request.sentences)} exceeds max_batch={max_batch}",
            )
        if request.layers == "all":
            layers = list(range(encoder.n_layers + 1))
        else:
            layers = request.layers
            if not layers:
                raise HTTPException(status_code=400, detail="empty layer list")
            bad = [l for l in layers if not 0 <= l <= encoder.n_layers]
            if bad:
                raise HTTPException(
                    status_code=400,
                    detail=f"layer indices {bad} outside [0, {encoder.n_layers}]",
                )
        for i, sent in enumerate(request.sentences):
            if sent.target_index >= len(sent.tokens):
                raise HTTPException(
                    status_code=400,
                    detail=f"sentence {i}: target_index {sent.target_index} "
                    f"out of range for {len(sent.tokens)} tokens",
                )
        results = []
        for sent in request.sentences:
            try:
                encoded = encoder.encode(sent.tokens, sent.target_index, layers)
            except Exception as e:  # model failure surfaces as 500
                raise HTTPException(status_code=500, detail=f"encoder error: {e}")
            results.append(
                {"truncated": encoded.truncated, "target_subwords": encoded.per_layer}
            )
        return {"dim": encoder.dim, "layers": layers, "results": results}

    return app


def serve(model: str, port: int, device: str = "cpu", max_batch: int = DEFAULT_MAX_BATCH):
    import uvicorn

    app = create_app(MlmEncoder(model, device=device), max_batch=max_batch)
    uvicorn.run(app, host="0.0.0.0", port=port, log_level="info")
