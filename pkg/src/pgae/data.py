"""Dataset ingestion, multi-resolution pyramids, and a synthetic generator.

Images live as float tensors in [-1, 1]. Lower resolutions are produced
by area averaging (block mean), which composes exactly across the
pyramid: downsampling level L to L-1 equals downsampling the native
image straight to L-1.

The synthetic generator renders a colored blob on a flat background from
sampled factors (position, size, hue, background shade) and records the
factors next to each image, giving ground-truth labels for attribute
probing at desk scale.
"""

from __future__ import annotations

import colorsys
import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import Tensor

from .exceptions import ConfigurationError, ShapeMismatchError

logger = logging.getLogger(__name__)

_EPOCH_SEED_STRIDE = 1_000_003
SUPPORTED_SUFFIXES = {".png", ".jpg", ".jpeg"}


# --- image <-> tensor conversions -------------------------------------------

def pixels_to_unit_range(pixels: np.ndarray) -> Tensor:
    """Map uint8 pixel values [0, 255] into [-1, 1]."""
    return torch.from_numpy(pixels.astype(np.float32) / 127.5 - 1.0)


def unit_range_to_pixels(images: Tensor) -> np.ndarray:
    """Clamp to [-1, 1] and map back to uint8 [0, 255]."""
    arr = ((images.detach().clamp(-1.0, 1.0) + 1.0) * 127.5).round()
    return arr.to(torch.uint8).cpu().numpy()


def load_image(path: str | Path, resolution: int | None = None) -> Tensor:
    """Load a PNG/JPEG as a (3, H, W) tensor in [-1, 1], optionally resized."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if resolution is not None and im.size != (resolution, resolution):
            im = im.resize((resolution, resolution), Image.BILINEAR)
        arr = np.asarray(im)
    return pixels_to_unit_range(arr).permute(2, 0, 1)


def image_to_png_bytes(image: Tensor) -> bytes:
    """Encode a (3, H, W) tensor in [-1, 1] as PNG bytes."""
    if image.dim() != 3 or image.shape[0] != 3:
        raise ShapeMismatchError(f"expected (3, H, W) image, got {tuple(image.shape)}")
    arr = unit_range_to_pixels(image).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(data: bytes, resolution: int | None = None) -> Tensor:
    with Image.open(io.BytesIO(data)) as im:
        im = im.convert("RGB")
        if resolution is not None and im.size != (resolution, resolution):
            im = im.resize((resolution, resolution), Image.BILINEAR)
        arr = np.asarray(im)
    return pixels_to_unit_range(arr).permute(2, 0, 1)


def save_image_png(image: Tensor, path: str | Path) -> None:
    Path(path).write_bytes(image_to_png_bytes(image))


def tile_grid(cells: Tensor) -> Tensor:
    """Tile a (rows, cols, 3, H, W) cell tensor into one (3, rows*H, cols*W) image."""
    if cells.dim() != 5:
        raise ShapeMismatchError("expected (rows, cols, 3, H, W)")
    rows = [torch.cat(list(cells[r]), dim=-1) for r in range(cells.shape[0])]
    return torch.cat(rows, dim=-2)


def downsample(images: Tensor, resolution: int) -> Tensor:
    """Area-averaged (block mean) downsampling to a square target resolution."""
    h = images.shape[-1]
    if h == resolution:
        return images
    if h % resolution != 0:
        raise ConfigurationError(f"cannot block-average {h} down to {resolution}")
    return F.avg_pool2d(images, h // resolution)


# --- dataset specs ------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Factor ranges for the rendered-blob dataset."""

    count: int = 512
    resolution: int = 32
    seed: int = 0
    pos_x: tuple[float, float] = (0.3, 0.7)
    pos_y: tuple[float, float] = (0.3, 0.7)
    radius: tuple[float, float] = (0.12, 0.28)
    hue: tuple[float, float] = (0.0, 1.0)
    background: tuple[float, float] = (-0.7, 0.1)

    def __post_init__(self):
        if self.count < 1:
            raise ConfigurationError("count must be >= 1")
        if self.resolution < 4 or self.resolution & (self.resolution - 1):
            raise ConfigurationError("resolution must be a power of two >= 4")
        for name in ("pos_x", "pos_y", "radius", "hue", "background"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"degenerate range for {name}: ({lo}, {hi})")

    def ranges(self) -> dict[str, tuple[float, float]]:
        return {
            "pos_x": self.pos_x, "pos_y": self.pos_y, "radius": self.radius,
            "hue": self.hue, "background": self.background,
        }


@dataclass
class DatasetSpec:
    source: str | Path | SyntheticSpec = field(default_factory=SyntheticSpec)
    split: tuple[float, float] = (0.9, 0.1)
    base_resolution: int = 4
    seed: int = 0

    def __post_init__(self):
        train, test = self.split
        if train <= 0 or test < 0 or train + test > 1.0 + 1e-9:
            raise ConfigurationError(f"invalid split fractions {self.split}")


@dataclass
class BatchCursor:
    """Position in the shuffled epoch stream of one consumer."""

    position: int = 0


class Dataset:
    """In-memory image set with deterministic split and pyramid access."""

    def __init__(self, images: Tensor, base_resolution: int = 4,
                 split: tuple[float, float] = (0.9, 0.1), seed: int = 0,
                 factors: dict[str, np.ndarray] | None = None):
        if images.dim() != 4 or images.shape[1] != 3:
            raise ShapeMismatchError("expected images of shape (N, 3, H, W)")
        if images.shape[-2] != images.shape[-1]:
            raise ConfigurationError("images must be square")
        native = images.shape[-1]
        if native < base_resolution or native % base_resolution:
            raise ConfigurationError(
                f"native resolution {native} not derivable from base {base_resolution}"
            )
        self.images = images
        self.base_resolution = base_resolution
        self.seed = seed
        self.factors = factors
        self._pyramid: dict[int, Tensor] = {native: images}

        n = images.shape[0]
        perm = torch.randperm(n, generator=torch.Generator().manual_seed(seed)).tolist()
        n_train = max(1, round(split[0] * n)) if split[1] > 0 and n > 1 else n
        n_train = min(n_train, n - 1) if split[1] > 0 and n > 1 else n
        self.train_indices = sorted(perm[:n_train])
        self.test_indices = sorted(perm[n_train:])

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def native_resolution(self) -> int:
        return self.images.shape[-1]

    @property
    def levels(self) -> int:
        return int(math.log2(self.native_resolution // self.base_resolution)) + 1

    def resolution_at(self, level: int) -> int:
        if not 0 <= level < self.levels:
            raise ConfigurationError(f"level {level} outside [0, {self.levels})")
        return self.base_resolution * (2 ** level)

    def at_resolution(self, resolution: int) -> Tensor:
        if resolution not in self._pyramid:
            self._pyramid[resolution] = downsample(self.images, resolution)
        return self._pyramid[resolution]

    def factor(self, name: str) -> np.ndarray:
        if self.factors is None or name not in self.factors:
            raise ConfigurationError(f"no factor table entry {name!r}")
        return self.factors[name]

    def split_by_factor_median(self, name: str) -> tuple[list[int], list[int]]:
        """Indices with factor above / at-or-below its median (A, B sets)."""
        values = self.factor(name)
        median = float(np.median(values))
        above = [i for i, v in enumerate(values) if v > median]
        below = [i for i, v in enumerate(values) if v <= median]
        return above, below

    def _epoch_permutation(self, epoch: int) -> list[int]:
        gen = torch.Generator().manual_seed(self.seed * _EPOCH_SEED_STRIDE + epoch)
        n = len(self.train_indices)
        return torch.randperm(n, generator=gen).tolist()

    def batch_at_level(self, level: int, batch_size: int,
                       cursor: BatchCursor) -> tuple[Tensor, BatchCursor]:
        """Next training batch at a pyramid level, with epoch-wrap semantics."""
        n = len(self.train_indices)
        if batch_size > n:
            raise ConfigurationError(f"batch_size {batch_size} exceeds train size {n}")
        resolution = self.resolution_at(level)
        stream: list[int] = []
        pos = cursor.position
        while len(stream) < batch_size:
            epoch, offset = divmod(pos, n)
            perm = self._epoch_permutation(epoch)
            take = min(batch_size - len(stream), n - offset)
            stream.extend(self.train_indices[perm[offset + i]] for i in range(take))
            pos += take
        batch = self.at_resolution(resolution)[stream]
        return batch, BatchCursor(position=pos)

    def train_images(self, resolution: int) -> Tensor:
        return self.at_resolution(resolution)[self.train_indices]

    def test_images(self, resolution: int) -> Tensor:
        return self.at_resolution(resolution)[self.test_indices]

    def save_to_dir(self, root: str | Path) -> None:
        """Write ``<root>/<split>/<index>.png`` plus a factor CSV when present."""
        root = Path(root)
        for split_name, indices in (("train", self.train_indices),
                                    ("test", self.test_indices)):
            out = root / split_name
            out.mkdir(parents=True, exist_ok=True)
            for idx in indices:
                save_image_png(self.images[idx], out / f"{idx:06d}.png")
        if self.factors is not None:
            split_of = {i: "train" for i in self.train_indices}
            split_of.update({i: "test" for i in self.test_indices})
            names = sorted(self.factors)
            with open(root / "factors.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["index", *names, "split"])
                for idx in range(len(self)):
                    writer.writerow(
                        [idx, *(repr(float(self.factors[n][idx])) for n in names),
                         split_of[idx]]
                    )


def _render_blobs(spec: SyntheticSpec, samples: dict[str, np.ndarray]) -> Tensor:
    res = spec.resolution
    coords = torch.arange(res, dtype=torch.float32) + 0.5
    yy, xx = torch.meshgrid(coords, coords, indexing="ij")
    images = torch.empty(spec.count, 3, res, res)
    for i in range(spec.count):
        bg = float(samples["background"][i])
        r, g, b = colorsys.hsv_to_rgb(float(samples["hue"][i]) % 1.0, 0.9, 0.9)
        color = torch.tensor([r, g, b], dtype=torch.float32) * 2.0 - 1.0
        radius_px = float(samples["radius"][i]) * res
        img = torch.full((3, res, res), bg)
        if radius_px > 0:
            cx = float(samples["pos_x"][i]) * res
            cy = float(samples["pos_y"][i]) * res
            dist_sq = (xx - cx).square() + (yy - cy).square()
            mask = torch.exp(-((dist_sq / radius_px**2) ** 2))
            img = img + mask.unsqueeze(0) * (color.view(3, 1, 1) - bg)
        images[i] = img
    return images.clamp(-1.0, 1.0)


def generate_synthetic(spec: SyntheticSpec, split: tuple[float, float] = (0.9, 0.1),
                       split_seed: int | None = None) -> Dataset:
    """Render a factor-labelled blob dataset deterministically from ``spec``."""
    rng = np.random.default_rng(spec.seed)
    samples = {
        name: rng.uniform(lo, hi, size=spec.count)
        for name, (lo, hi) in spec.ranges().items()
    }
    images = _render_blobs(spec, samples)
    return Dataset(images, base_resolution=4, split=split,
                   seed=spec.seed if split_seed is None else split_seed,
                   factors=samples)


def _load_directory(root: Path, base_resolution: int) -> tuple[Tensor, dict | None]:
    paths = sorted(p for p in root.rglob("*") if p.suffix.lower() in SUPPORTED_SUFFIXES)
    loaded: list[Tensor] = []
    kept_names: list[str] = []
    resolution: int | None = None
    for path in paths:
        try:
            img = load_image(path)
        except Exception as exc:  # undecodable file: skip, keep going
            logger.warning("skipping undecodable image %s: %s", path, exc)
            continue
        h, w = img.shape[-2:]
        if h != w or h % base_resolution or h & (h - 1):
            logger.warning("skipping %s: size %dx%d is not a square power of two", path, w, h)
            continue
        if resolution is None:
            resolution = h
        elif h != resolution:
            logger.warning("skipping %s: resolution %d != dataset resolution %d", path, h, resolution)
            continue
        loaded.append(img)
        kept_names.append(path.stem)
    if not loaded:
        raise ConfigurationError(f"no usable images under {root}")
    factors = _load_factor_csv(root / "factors.csv", kept_names)
    return torch.stack(loaded), factors


def _load_factor_csv(path: Path, names: list[str]) -> dict[str, np.ndarray] | None:
    if not path.exists():
        return None
    with open(path, newline="") as fh:
        rows = {row["index"]: row for row in csv.DictReader(fh)}

    def row_for(stem: str) -> dict:
        try:
            return rows[str(int(stem))]
        except ValueError:
            return rows[stem]

    try:
        keys = [k for k in next(iter(rows.values())) if k not in ("index", "split")]
        columns = {k: np.array([float(row_for(n)[k]) for n in names]) for k in keys}
    except (KeyError, ValueError):
        logger.warning("factor table %s does not cover all images; ignoring it", path)
        return None
    return columns


def ingest(spec: DatasetSpec) -> Dataset:
    """Build a dataset handle from a directory of images or a synthetic spec."""
    if isinstance(spec.source, SyntheticSpec):
        return generate_synthetic(spec.source, split=spec.split, split_seed=spec.seed)
    root = Path(spec.source)
    if not root.is_dir():
        raise ConfigurationError(f"dataset source {root} is not a readable directory")
    images, factors = _load_directory(root, spec.base_resolution)
    return Dataset(images, base_resolution=spec.base_resolution, split=spec.split,
                   seed=spec.seed, factors=factors)
