"""Latent-space manipulation: spherical interpolation, grids, attribute vectors.

Codes live on the unit sphere, so interpolation follows great circles
and any edited code is renormalized before it reaches the decoder. An
attribute direction is simply the difference between the mean codes of
an attribute-positive and an attribute-negative image set; adding it
with intensity lambda steers the decoded image along that attribute.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import Tensor

from .exceptions import ConfigurationError, ShapeMismatchError
from .model import unit_normalize

ANTIPODAL_TOL = 1e-7
PARALLEL_TOL = 1e-7


def slerp(z1: Tensor, z2: Tensor, t) -> Tensor:
    """Great-circle interpolation between unit vectors (batched on leading dims).

    Falls back to normalized linear interpolation when the endpoints are
    (numerically) parallel; antipodal endpoints have no defined path and
    raise.
    """
    if z1.shape != z2.shape:
        raise ShapeMismatchError("slerp endpoints must share a shape")
    scalar_t = not isinstance(t, Tensor)
    if scalar_t:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        if t == 0.0:
            return z1.clone()
        if t == 1.0:
            return z2.clone()
        t = torch.as_tensor(t, dtype=z1.dtype)
    else:
        if bool((t < 0).any()) or bool((t > 1).any()):
            raise ValueError("t must lie in [0, 1]")
    with torch.no_grad():
        for name, z in (("z1", z1), ("z2", z2)):
            if bool(((z.norm(dim=-1) - 1.0).abs() > 1e-3).any()):
                raise ValueError(f"{name} must be unit-norm")
    dot = (z1 * z2).sum(dim=-1, keepdim=True)
    if bool((dot < -1.0 + ANTIPODAL_TOL).any()):
        raise ValueError("slerp is undefined for antipodal endpoints")
    t = t.reshape(t.shape + (1,) * (z1.dim() - t.dim())) if t.dim() < z1.dim() else t
    omega = torch.acos(dot.clamp(-1.0, 1.0))
    sin_omega = torch.sin(omega)
    parallel = dot > 1.0 - PARALLEL_TOL
    safe_sin = torch.where(parallel, torch.ones_like(sin_omega), sin_omega)
    arc = (torch.sin((1.0 - t) * omega) * z1 + torch.sin(t * omega) * z2) / safe_sin
    chord = unit_normalize((1.0 - t) * z1 + t * z2)
    return torch.where(parallel, chord, arc)


def _line_codes(z1: Tensor, z2: Tensor, ts: list[float]) -> Tensor:
    return torch.stack([slerp(z1, z2, t) for t in ts])


def _piecewise_codes(anchors: Tensor, ts: list[float]) -> Tensor:
    """Evenly spaced spherical path through 2 or 3 anchor codes."""
    k = anchors.shape[0]
    if k == 2:
        return _line_codes(anchors[0], anchors[1], ts)
    out = []
    for t in ts:
        if t <= 0.5:
            out.append(slerp(anchors[0], anchors[1], min(1.0, 2.0 * t)))
        else:
            out.append(slerp(anchors[1], anchors[2], 2.0 * t - 1.0))
    return torch.stack(out)


def _even_ts(n: int) -> list[float]:
    if n < 2:
        raise ConfigurationError("need at least 2 cells along an interpolation axis")
    return [i / (n - 1) for i in range(n)]


def code_grid(corner_codes: Tensor, rows: int, cols: int) -> Tensor:
    """Evenly spaced spherical interpolation grid from 2, 4, or 6 corner codes.

    Returns a (rows, cols, D) tensor whose grid-corner cells equal the
    input codes exactly. Two codes make a single row; four sit at the
    grid corners; six add mid-edge anchors on the top and bottom rows.
    """
    k = corner_codes.shape[0]
    if k == 2:
        if rows != 1:
            raise ConfigurationError("2 corner codes interpolate along a single row")
        return _line_codes(corner_codes[0], corner_codes[1], _even_ts(cols)).unsqueeze(0)
    if k == 4:
        top = corner_codes[0:2]
        bottom = corner_codes[2:4]
    elif k == 6:
        top = corner_codes[0:3]
        bottom = corner_codes[3:6]
    else:
        raise ConfigurationError(f"grids take 2, 4, or 6 corner codes, got {k}")
    if rows < 2:
        raise ConfigurationError("2-D grids need at least 2 rows")
    us = _even_ts(cols)
    top_row = _piecewise_codes(top, us)
    bottom_row = _piecewise_codes(bottom, us)
    grid = []
    for v in _even_ts(rows):
        grid.append(torch.stack([slerp(top_row[c], bottom_row[c], v) for c in range(cols)]))
    return torch.stack(grid)


def interpolation_grid(model, corner_images: Tensor, rows: int, cols: int) -> Tensor:
    """Encode corner images, interpolate, decode every cell.

    Returns (rows, cols, 3, H, W); corner cells are exactly the corner
    reconstructions.
    """
    expected = model.resolution
    if corner_images.dim() != 4 or corner_images.shape[-1] != expected:
        raise ShapeMismatchError(
            f"corner images must be (K, 3, {expected}, {expected})"
        )
    codes = model.encode_images(corner_images)
    grid = code_grid(codes, rows, cols)
    flat = grid.reshape(-1, grid.shape[-1])
    images = model.decode_codes(flat)
    return images.reshape(rows, cols, *images.shape[1:])


@dataclass
class AttributeVector:
    """Latent direction for one visual attribute, with its provenance counts."""

    name: str
    direction: Tensor
    source_counts: tuple[int, int]
    config_hash: str = ""

    def to_record(self) -> dict:
        return {
            "schema_version": 1,
            "name": self.name,
            "direction": [float(v) for v in self.direction],
            "source_counts": list(self.source_counts),
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_record(cls, record: dict) -> "AttributeVector":
        return cls(
            name=record["name"],
            direction=torch.tensor(record["direction"], dtype=torch.float32),
            source_counts=tuple(record["source_counts"]),
            config_hash=record.get("config_hash", ""),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_record()))

    @classmethod
    def load(cls, path: str | Path) -> "AttributeVector":
        return cls.from_record(json.loads(Path(path).read_text()))


def extract_attribute(model, set_a: Tensor, set_b: Tensor,
                      name: str = "attribute") -> AttributeVector:
    """Difference between the mean latent codes of two image sets."""
    if set_a.dim() != 4 or set_b.dim() != 4 or not len(set_a) or not len(set_b):
        raise ConfigurationError("both attribute sets must be non-empty image batches")
    mean_a = model.encode_images(set_a).mean(dim=0)
    mean_b = model.encode_images(set_b).mean(dim=0)
    return AttributeVector(
        name=name,
        direction=mean_a - mean_b,
        source_counts=(len(set_a), len(set_b)),
        config_hash=getattr(model, "config_hash", ""),
    )


def apply_attribute_to_code(code: Tensor, attr: AttributeVector, lam: float) -> Tensor:
    """Shift a unit code along an attribute direction and renormalize."""
    if not torch.isfinite(torch.tensor(lam)):
        raise ValueError("lambda must be finite")
    if lam == 0.0:
        return code.clone()
    return unit_normalize(code + lam * attr.direction.to(code.dtype))


def apply_attribute(model, image: Tensor, attr: AttributeVector, lam: float) -> Tensor:
    """Decode the attribute-shifted code of one image; lambda 0 reconstructs."""
    if image.dim() != 3:
        raise ShapeMismatchError("apply_attribute takes a single (3, H, W) image")
    code = model.encode_images(image.unsqueeze(0))[0]
    edited = apply_attribute_to_code(code, attr, lam)
    return model.decode_codes(edited.unsqueeze(0))[0]


def attribute_sweep(model, image: Tensor, attr: AttributeVector,
                    lambdas: list[float]) -> Tensor:
    """Stack of decoded frames, one per lambda value."""
    return torch.stack([apply_attribute(model, image, attr, lam) for lam in lambdas])
