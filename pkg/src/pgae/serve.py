"""HTTP inference service over a frozen checkpoint.

The checkpoint is loaded once per process; every response depends only
on the request payload and that snapshot, so concurrent identical
requests return identical bytes. Image payloads travel as base64 PNG
inside JSON.
"""

from __future__ import annotations

import base64
import binascii
import json
from dataclasses import dataclass
from pathlib import Path

import torch
from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import __version__
from .data import image_to_png_bytes, png_bytes_to_image
from .latent_ops import (AttributeVector, apply_attribute_to_code, code_grid,
                         slerp)
from .model import ModelSnapshot, unit_normalize

LAMBDA_BOUND = 4.0


@dataclass
class ServeConfig:
    checkpoint: str | Path = ""
    host: str = "127.0.0.1"
    port: int = 8000
    attribute_dir: str | Path | None = None
    max_image_bytes: int = 8_000_000


class DecodeRequest(BaseModel):
    code: list[float]


class EncodeRequest(BaseModel):
    image_b64: str


class ManipulateRequest(BaseModel):
    image_b64: str | None = None
    code: list[float] | None = None
    attribute: str | None = None
    direction: list[float] | None = None
    lam: float | None = None
    lambdas: list[float] | None = None

    model_config = {"populate_by_name": True}

    def __init__(self, **data):
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        super().__init__(**data)


class InterpolateRequest(BaseModel):
    codes: list[list[float]]
    t: float | None = None
    rows: int | None = None
    cols: int | None = None
    cells: int | None = None


def _load_attribute_library(directory: str | Path | None) -> dict[str, AttributeVector]:
    if directory is None:
        return {}
    root = Path(directory)
    if not root.is_dir():
        return {}
    library = {}
    for path in sorted(root.glob("*.json")):
        attr = AttributeVector.from_record(json.loads(path.read_text()))
        library[attr.name] = attr
    return library


def create_app(config: ServeConfig, snapshot: ModelSnapshot | None = None,
               attributes: dict[str, AttributeVector] | None = None) -> FastAPI:
    if snapshot is None:
        from .trainer import snapshot_from_checkpoint

        snapshot = snapshot_from_checkpoint(config.checkpoint)
    library = attributes if attributes is not None else _load_attribute_library(
        config.attribute_dir)

    app = FastAPI(title="latent autoencoder service", version=__version__)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    @app.middleware("http")
    async def version_header(request: Request, call_next):
        response = await call_next(request)
        response.headers["X-Service-Version"] = __version__
        response.headers["X-Checkpoint-Hash"] = snapshot.config_hash
        return response

    def decode_image_payload(payload: str) -> torch.Tensor:
        try:
            raw = base64.b64decode(payload, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise HTTPException(400, f"invalid base64 image payload: {exc}") from exc
        if len(raw) > config.max_image_bytes:
            raise HTTPException(413, "image payload too large")
        try:
            return png_bytes_to_image(raw, resolution=snapshot.resolution)
        except Exception as exc:
            raise HTTPException(400, f"undecodable image: {exc}") from exc

    def code_tensor(values: list[float]) -> torch.Tensor:
        if len(values) != snapshot.latent_dim:
            raise HTTPException(
                400, f"code must have {snapshot.latent_dim} entries, got {len(values)}"
            )
        code = torch.tensor(values, dtype=torch.float32)
        try:
            return unit_normalize(code.unsqueeze(0))[0]
        except ValueError as exc:
            raise HTTPException(400, str(exc)) from exc

    def encode_png(image: torch.Tensor) -> str:
        return base64.b64encode(image_to_png_bytes(image)).decode("ascii")

    @app.get("/health")
    def health():
        return {"status": "ok", "resolution": snapshot.resolution,
                "latent_dim": snapshot.latent_dim,
                "checkpoint_hash": snapshot.config_hash}

    @app.post("/encode")
    def encode_endpoint(req: EncodeRequest):
        image = decode_image_payload(req.image_b64)
        code = snapshot.encode_images(image.unsqueeze(0))[0]
        return {"code": [float(v) for v in code]}

    @app.post("/decode")
    def decode_endpoint(req: DecodeRequest):
        code = code_tensor(req.code)
        image = snapshot.decode_codes(code.unsqueeze(0))[0]
        return {"image_b64": encode_png(image)}

    def resolve_direction(req: ManipulateRequest) -> torch.Tensor:
        if req.direction is not None:
            if len(req.direction) != snapshot.latent_dim:
                raise HTTPException(400, "direction has the wrong dimension")
            return torch.tensor(req.direction, dtype=torch.float32)
        if req.attribute is None:
            raise HTTPException(400, "need an attribute name or a raw direction")
        if req.attribute not in library:
            raise HTTPException(404, f"unknown attribute {req.attribute!r}")
        return library[req.attribute].direction

    @app.post("/manipulate")
    def manipulate_endpoint(req: ManipulateRequest):
        if (req.image_b64 is None) == (req.code is None):
            raise HTTPException(400, "give exactly one of image_b64 / code")
        if req.code is not None:
            base_code = code_tensor(req.code)
        else:
            image = decode_image_payload(req.image_b64)
            base_code = snapshot.encode_images(image.unsqueeze(0))[0]
        direction = resolve_direction(req)
        attr = AttributeVector(name=req.attribute or "raw", direction=direction,
                               source_counts=(0, 0))
        lambdas = req.lambdas if req.lambdas is not None else [req.lam or 0.0]
        for lam in lambdas:
            if not -LAMBDA_BOUND <= lam <= LAMBDA_BOUND:
                raise HTTPException(
                    400, f"lambda {lam} outside server bound [-{LAMBDA_BOUND}, {LAMBDA_BOUND}]"
                )
        frames = []
        for lam in lambdas:
            try:
                edited = apply_attribute_to_code(base_code, attr, lam)
            except ValueError as exc:
                raise HTTPException(400, str(exc)) from exc
            image = snapshot.decode_codes(edited.unsqueeze(0))[0]
            frames.append({"image_b64": encode_png(image),
                           "code": [float(v) for v in edited]})
        if req.lambdas is not None:
            return {"frames": frames}
        return frames[0]

    @app.get("/attributes")
    def attributes_endpoint():
        return [
            {"name": attr.name, "source_counts": list(attr.source_counts),
             "dim": int(attr.direction.numel()), "config_hash": attr.config_hash}
            for attr in library.values()
        ]

    @app.post("/interpolate")
    def interpolate_endpoint(req: InterpolateRequest):
        codes = torch.stack([code_tensor(c) for c in req.codes])
        if req.t is not None:
            if len(req.codes) != 2:
                raise HTTPException(400, "t-interpolation takes exactly 2 codes")
            if not 0.0 <= req.t <= 1.0:
                raise HTTPException(400, "t must lie in [0, 1]")
            try:
                point = slerp(codes[0], codes[1], req.t)
            except ValueError as exc:
                raise HTTPException(400, str(exc)) from exc
            image = snapshot.decode_codes(point.unsqueeze(0))[0]
            return {"image_b64": encode_png(image)}
        if len(req.codes) == 2:
            rows, cols = 1, req.cells or 8
        else:
            rows, cols = req.rows or 4, req.cols or 4
        try:
            grid = code_grid(codes, rows, cols)
        except Exception as exc:
            raise HTTPException(400, str(exc)) from exc
        flat = grid.reshape(-1, grid.shape[-1])
        images = snapshot.decode_codes(flat)
        cells = [
            [encode_png(images[r * cols + c]) for c in range(cols)]
            for r in range(rows)
        ]
        return {"cells": cells}

    return app
