"""Symmetric progressive encoder/decoder pair.

The encoder maps images to unit-norm latent codes through residual
blocks (two 3x3 convolutions plus a 1x1 skip path, stride-2 halving per
block) and a final 4x4 filter onto the latent dimension. The decoder
mirrors it: a 4x4 transposed convolution from the code, then blocks that
upsample 2x (nearest neighbor) and convolve at stride 1. Per-level
``from_rgb``/``to_rgb`` adapters are the entry/exit points used while
growing the networks; a new level is blended in linearly with a fade
coefficient alpha.
"""

from __future__ import annotations

import copy
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .exceptions import ConfigurationError, ShapeMismatchError

CODE_NORM_ATOL = 1e-3


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def default_channel_schedule(latent_dim: int, levels: int, floor: int = 16) -> list[int]:
    """latent_dim channels at the low levels, halving as resolution grows."""
    return [max(floor, latent_dim >> max(0, level - 3)) for level in range(levels)]


@dataclass
class NetworkConfig:
    latent_dim: int = 512
    base_resolution: int = 4
    max_resolution: int = 256
    channel_schedule: list[int] | None = None
    leaky_slope: float = 0.2
    final_layer_activation: bool = False

    def __post_init__(self):
        if self.latent_dim <= 0:
            raise ConfigurationError("latent_dim must be positive")
        for name, res in (("base_resolution", self.base_resolution),
                          ("max_resolution", self.max_resolution)):
            if not _is_power_of_two(res):
                raise ConfigurationError(f"{name} must be a power of two, got {res}")
        if self.max_resolution < self.base_resolution:
            raise ConfigurationError("max_resolution must be >= base_resolution")
        if self.channel_schedule is None:
            self.channel_schedule = default_channel_schedule(self.latent_dim, self.levels)
        if len(self.channel_schedule) != self.levels:
            raise ConfigurationError(
                f"channel_schedule length {len(self.channel_schedule)} != levels {self.levels}"
            )

    @property
    def levels(self) -> int:
        return int(math.log2(self.max_resolution // self.base_resolution)) + 1

    def resolution_at(self, level: int) -> int:
        if not 0 <= level < self.levels:
            raise ConfigurationError(f"level {level} outside [0, {self.levels})")
        return self.base_resolution * (2 ** level)


@dataclass
class PhaseState:
    """Position within progressive training: level, fade-in mix, samples."""

    level: int = 0
    alpha: float = 1.0
    samples_seen: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise ConfigurationError("level must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.samples_seen < 0:
            raise ConfigurationError("samples_seen must be >= 0")


def blend_fade(coarse: Tensor, fine: Tensor, alpha: float) -> Tensor:
    """Linear fade between the upsampled previous-level path and the new block."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if coarse.shape != fine.shape:
        raise ShapeMismatchError(f"blend shapes differ: {tuple(coarse.shape)} vs {tuple(fine.shape)}")
    if alpha == 0.0:
        return coarse
    if alpha == 1.0:
        return fine
    return (1.0 - alpha) * coarse + alpha * fine


def unit_normalize(v: Tensor) -> Tensor:
    """Project code vectors (rows) onto the unit sphere."""
    norms = v.norm(dim=-1, keepdim=True)
    if bool((norms < 1e-12).any()):
        raise ValueError("cannot normalize a numerically zero code")
    return v / norms


def _he_init(module: nn.Module) -> None:
    # Fan-in scaling at init time; when EQLR is enabled the wrapper re-inits
    # to unit variance and applies the same constant at runtime instead.
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            if isinstance(m, nn.Linear):
                fan_in = m.in_features
            else:
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            nn.init.normal_(m.weight, std=math.sqrt(2.0 / fan_in))
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class EncoderBlock(nn.Module):
    """Residual block that halves resolution: two 3x3 convs, 1x1 skip, stride 2."""

    def __init__(self, in_ch: int, out_ch: int, leaky_slope: float):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=1, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, stride=2, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1, stride=2)
        self.leaky_slope = leaky_slope

    def forward(self, x: Tensor) -> Tensor:
        h = F.leaky_relu(self.conv1(x), self.leaky_slope)
        h = self.conv2(h)
        return F.leaky_relu(h + self.skip(x), self.leaky_slope)


class DecoderBlock(nn.Module):
    """Residual block that doubles resolution: upsample, then stride-1 convs."""

    def __init__(self, in_ch: int, out_ch: int, leaky_slope: float):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=1, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, stride=1, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1)
        self.leaky_slope = leaky_slope

    def forward(self, x: Tensor) -> Tensor:
        up = F.interpolate(x, scale_factor=2, mode="nearest")
        h = F.leaky_relu(self.conv1(up), self.leaky_slope)
        h = self.conv2(h)
        return F.leaky_relu(h + self.skip(up), self.leaky_slope)


class Encoder(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        ch = config.channel_schedule
        self.from_rgb = nn.ModuleList(
            [nn.Conv2d(3, ch[level], 1) for level in range(config.levels)]
        )
        # blocks[level] consumes level-resolution features, emits level-1.
        blocks: list[nn.Module] = [nn.Identity()]
        for level in range(1, config.levels):
            blocks.append(EncoderBlock(ch[level], ch[level - 1], config.leaky_slope))
        self.blocks = nn.ModuleList(blocks)
        self.latent_head = nn.Conv2d(ch[0], config.latent_dim, config.base_resolution)
        self.latent_head.is_output_layer = True
        _he_init(self)

    def forward(self, x: Tensor, phase: PhaseState) -> Tensor:
        config = self.config
        expected = config.resolution_at(phase.level)
        if x.dim() != 4 or x.shape[-1] != expected or x.shape[-2] != expected:
            raise ShapeMismatchError(
                f"batch resolution {tuple(x.shape[-2:])} does not match "
                f"level {phase.level} resolution {expected}"
            )
        level, alpha = phase.level, phase.alpha
        if level == 0:
            h = self.from_rgb[0](x)
        else:
            if alpha < 1.0:
                coarse = self.from_rgb[level - 1](F.avg_pool2d(x, 2))
                if alpha == 0.0:
                    h = coarse
                else:
                    fine = self.blocks[level](self.from_rgb[level](x))
                    h = blend_fade(coarse, fine, alpha)
            else:
                h = self.blocks[level](self.from_rgb[level](x))
            for l in range(level - 1, 0, -1):
                h = self.blocks[l](h)
        z = self.latent_head(h)
        if self.config.final_layer_activation:
            z = F.leaky_relu(z, config.leaky_slope)
        return unit_normalize(z.flatten(1))


class Decoder(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        ch = config.channel_schedule
        self.base = nn.ConvTranspose2d(config.latent_dim, ch[0], config.base_resolution)
        blocks: list[nn.Module] = [nn.Identity()]
        for level in range(1, config.levels):
            blocks.append(DecoderBlock(ch[level - 1], ch[level], config.leaky_slope))
        self.blocks = nn.ModuleList(blocks)
        self.to_rgb = nn.ModuleList(
            [nn.Conv2d(ch[level], 3, 1) for level in range(config.levels)]
        )
        for layer in self.to_rgb:
            layer.is_output_layer = True
        _he_init(self)

    def forward(self, codes: Tensor, phase: PhaseState) -> Tensor:
        if codes.dim() != 2 or codes.shape[1] != self.config.latent_dim:
            raise ShapeMismatchError(
                f"expected codes of shape (N, {self.config.latent_dim}), got {tuple(codes.shape)}"
            )
        with torch.no_grad():
            norms = codes.norm(dim=1)
            if bool((norms - 1.0).abs().max() > CODE_NORM_ATOL):
                raise ValueError("decoder requires unit-norm codes; normalize first")
        level, alpha = phase.level, phase.alpha
        h = F.leaky_relu(self.base(codes.unsqueeze(-1).unsqueeze(-1)), self.config.leaky_slope)
        for l in range(1, level):
            h = self.blocks[l](h)
        if level == 0:
            return self.to_rgb[0](h)
        if alpha < 1.0:
            coarse = F.interpolate(self.to_rgb[level - 1](h), scale_factor=2, mode="nearest")
            if alpha == 0.0:
                return coarse
            fine = self.to_rgb[level](self.blocks[level](h))
            return blend_fade(coarse, fine, alpha)
        return self.to_rgb[level](self.blocks[level](h))


def build_networks(config: NetworkConfig) -> tuple[Encoder, Decoder]:
    """Construct the unwrapped encoder/decoder pair for ``config``."""
    return Encoder(config), Decoder(config)


def encode(encoder: Encoder, batch: Tensor, phase: PhaseState) -> Tensor:
    """Encode an image batch at the phase resolution into unit-norm codes."""
    return encoder(batch, phase)


def decode(decoder: Decoder, codes: Tensor, phase: PhaseState) -> Tensor:
    """Decode unit-norm codes into an image batch at the phase resolution."""
    return decoder(codes, phase)


def ema_update(avg_params, live_params, decay: float):
    """In-place exponential average: ``v' = decay * v + (1 - decay) * w``."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must lie in [0, 1], got {decay}")
    if isinstance(avg_params, Mapping):
        if set(avg_params.keys()) != set(live_params.keys()):
            raise ShapeMismatchError("parameter name sets differ")
        pairs = [(avg_params[k], live_params[k]) for k in avg_params]
    else:
        avg_params = list(avg_params)
        live_params = list(live_params)
        if len(avg_params) != len(live_params):
            raise ShapeMismatchError("parameter counts differ")
        pairs = list(zip(avg_params, live_params))
    with torch.no_grad():
        for avg, live in pairs:
            if avg.shape != live.shape:
                raise ShapeMismatchError(
                    f"parameter shapes differ: {tuple(avg.shape)} vs {tuple(live.shape)}"
                )
            avg.mul_(decay).add_(live, alpha=1.0 - decay)
    return avg_params


class ModelSnapshot:
    """Immutable inference view of an encoder/decoder pair.

    Deep-copies the networks, switches them to eval mode, and freezes
    gradients, so any number of readers can evaluate it concurrently
    while training continues on the live parameters.
    """

    def __init__(self, encoder: Encoder, decoder: Decoder, phase: PhaseState,
                 config_hash: str = ""):
        self.encoder = copy.deepcopy(encoder).eval().requires_grad_(False)
        self.decoder = copy.deepcopy(decoder).eval().requires_grad_(False)
        self.phase = PhaseState(level=phase.level, alpha=phase.alpha,
                                samples_seen=phase.samples_seen)
        self.config_hash = config_hash

    @property
    def config(self) -> NetworkConfig:
        return self.encoder.config

    @property
    def resolution(self) -> int:
        return self.config.resolution_at(self.phase.level)

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    def encode_images(self, images: Tensor) -> Tensor:
        with torch.no_grad():
            return encode(self.encoder, images, self.phase)

    def decode_codes(self, codes: Tensor) -> Tensor:
        with torch.no_grad():
            return decode(self.decoder, codes, self.phase)

    def reconstruct(self, images: Tensor) -> Tensor:
        return self.decode_codes(self.encode_images(images))
