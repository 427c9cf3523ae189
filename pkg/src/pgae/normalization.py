"""Weight-normalization schemes as composable layer wrappers.

Three independent techniques can be toggled per network:

* spectral normalization -- divide each weight matrix by its largest
  singular value, estimated by power iteration with a persisted left
  singular vector,
* pixel norm -- normalize the channel vector at every spatial position
  of a convolution output to unit RMS,
* equalized learning rate -- keep raw weights unit-variance and rescale
  them by the He constant ``sqrt(2 / fan_in)`` at every forward pass.

Wrapper order within a layer is fixed: EQLR scale, then spectral divide,
then the convolution itself, then pixel norm on the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .exceptions import ConfigurationError

SIGMA_FLOOR = 1e-12

_SCHEME_TOKENS = {"SN": "use_spectral", "PN": "use_pixelnorm", "EQLR": "use_eqlr"}


@dataclass
class NormScheme:
    """Which normalization wrappers to apply and their knobs."""

    use_spectral: bool = False
    use_pixelnorm: bool = False
    use_eqlr: bool = False
    power_iterations: int = 1
    pixelnorm_epsilon: float = 1e-8

    def __post_init__(self):
        if self.power_iterations < 1:
            raise ConfigurationError("power_iterations must be >= 1")

    @classmethod
    def from_name(cls, name: str, **kwargs) -> "NormScheme":
        """Parse a scheme label such as ``"SN"``, ``"EQLR+PN"`` or ``"none"``."""
        flags = {}
        if name.strip().lower() != "none":
            for token in name.split("+"):
                token = token.strip().upper()
                if token not in _SCHEME_TOKENS:
                    raise ConfigurationError(f"unknown normalization token {token!r}")
                flags[_SCHEME_TOKENS[token]] = True
        return cls(**flags, **kwargs)

    @property
    def name(self) -> str:
        parts = [tok for tok, attr in _SCHEME_TOKENS.items() if getattr(self, attr)]
        return "+".join(parts) if parts else "none"

    def for_site(self, site: str) -> "NormScheme":
        """Scheme actually applied at a site.

        Spectral normalization goes on both networks; pixel norm and
        equalized learning rate act on the decoder only.
        """
        if site not in ("encoder", "decoder"):
            raise ConfigurationError(f"unknown site {site!r}")
        if site == "encoder":
            return NormScheme(
                use_spectral=self.use_spectral,
                power_iterations=self.power_iterations,
                pixelnorm_epsilon=self.pixelnorm_epsilon,
            )
        return self


@dataclass
class SpectralState:
    """Persisted left singular-vector estimate for one weight matrix."""

    u: Tensor

    def __post_init__(self):
        norm = float(self.u.norm())
        if norm > 0:
            self.u = self.u / norm


def _as_matrix(weight: Tensor, transposed: bool = False) -> Tensor:
    """Reshape a weight tensor to (out_features, flattened_in)."""
    if weight.dim() < 2:
        return weight.reshape(1, -1)
    if transposed:
        # ConvTranspose weights are stored (in, out, k, k); out lives on dim 1.
        weight = weight.transpose(0, 1)
    return weight.reshape(weight.shape[0], -1)


def init_spectral_state(weight: Tensor, transposed: bool = False, generator=None) -> SpectralState:
    mat = _as_matrix(weight, transposed)
    u = torch.randn(mat.shape[0], dtype=weight.dtype, device=weight.device, generator=generator)
    return SpectralState(u=u)


def _power_iterate(mat: Tensor, u: Tensor, iterations: int) -> tuple[Tensor, Tensor, Tensor]:
    """Run power iteration, returning (sigma, u, v) with u, v detached."""
    with torch.no_grad():
        v = None
        for _ in range(iterations):
            v = F.normalize(mat.t().mv(u), dim=0, eps=SIGMA_FLOOR)
            u = F.normalize(mat.mv(v), dim=0, eps=SIGMA_FLOOR)
        if v is None:
            v = F.normalize(mat.t().mv(u), dim=0, eps=SIGMA_FLOOR)
    sigma = torch.dot(u, mat.mv(v))
    return sigma, u, v


def spectral_normalize(
    weight: Tensor,
    state: SpectralState,
    iterations: int = 1,
    transposed: bool = False,
) -> tuple[Tensor, SpectralState]:
    """Divide ``weight`` by its estimated top singular value.

    The estimate comes from ``iterations`` power-iteration updates of
    ``state.u``; the refreshed vector is returned in a new state. A zero
    weight matrix is left unscaled beyond the ``SIGMA_FLOOR`` guard.
    """
    if iterations < 1:
        raise ConfigurationError("iterations must be >= 1")
    mat = _as_matrix(weight, transposed)
    if state.u.shape[0] != mat.shape[0]:
        raise ConfigurationError(
            f"spectral state dimension {state.u.shape[0]} does not match "
            f"out-dimension {mat.shape[0]}"
        )
    sigma, u, _ = _power_iterate(mat, state.u, iterations)
    sigma = sigma.clamp_min(SIGMA_FLOOR)
    return weight / sigma, SpectralState(u=u)


def pixel_norm(features: Tensor, epsilon: float = 1e-8) -> Tensor:
    """Normalize the channel vector at each spatial position to unit RMS.

    Accepts N,C,H,W tensors (channel dim 1) or N,C tensors.
    """
    if features.dim() < 2:
        raise ConfigurationError("pixel_norm expects at least 2 dimensions (N, C, ...)")
    mean_sq = features.square().mean(dim=1, keepdim=True)
    return features / torch.sqrt(mean_sq + epsilon)


def eqlr_scale(fan_in: int) -> float:
    """He constant applied multiplicatively to unit-variance raw weights."""
    if fan_in < 1:
        raise ConfigurationError("fan_in must be >= 1")
    return math.sqrt(2.0 / fan_in)


class NormalizedLayer(nn.Module):
    """Wraps a conv/linear layer with the configured normalization steps.

    The raw weight stays the optimized parameter; EQLR and spectral
    division are applied to it on every forward pass. The power-iteration
    vector ``u`` is a persisted buffer: it is refreshed only in training
    mode, so inference snapshots see a frozen estimate.
    """

    def __init__(self, inner: nn.Module, scheme: NormScheme, skip_pixelnorm: bool = False):
        super().__init__()
        if not isinstance(inner, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            raise ConfigurationError(f"cannot wrap layer of type {type(inner).__name__}")
        self.inner = inner
        self.scheme = scheme
        self.transposed = isinstance(inner, nn.ConvTranspose2d)
        self.apply_pixelnorm = scheme.use_pixelnorm and not skip_pixelnorm
        if scheme.use_eqlr:
            fan_in = self._fan_in(inner)
            self.weight_scale = eqlr_scale(fan_in)
            with torch.no_grad():
                inner.weight.normal_(0.0, 1.0)
                if inner.bias is not None:
                    inner.bias.zero_()
        else:
            self.weight_scale = 1.0
        if scheme.use_spectral:
            state = init_spectral_state(inner.weight, self.transposed)
            self.register_buffer("spectral_u", state.u)
        else:
            self.spectral_u = None

    @staticmethod
    def _fan_in(inner: nn.Module) -> int:
        if isinstance(inner, nn.Linear):
            return inner.in_features
        k = inner.kernel_size[0] * inner.kernel_size[1]
        return inner.in_channels * k

    def effective_weight(self) -> Tensor:
        w = self.inner.weight
        if self.weight_scale != 1.0:
            w = w * self.weight_scale
        if self.scheme.use_spectral:
            state = SpectralState(u=self.spectral_u)
            if self.training:
                w, new_state = spectral_normalize(
                    w, state, self.scheme.power_iterations, self.transposed
                )
                self.spectral_u.copy_(new_state.u)
            else:
                mat = _as_matrix(w, self.transposed)
                with torch.no_grad():
                    v = F.normalize(mat.t().mv(self.spectral_u), dim=0, eps=SIGMA_FLOOR)
                sigma = torch.dot(self.spectral_u, mat.mv(v)).clamp_min(SIGMA_FLOOR)
                w = w / sigma
        return w

    def forward(self, x: Tensor) -> Tensor:
        w = self.effective_weight()
        inner = self.inner
        if isinstance(inner, nn.Linear):
            out = F.linear(x, w, inner.bias)
        elif self.transposed:
            out = F.conv_transpose2d(
                x, w, inner.bias, inner.stride, inner.padding,
                inner.output_padding, inner.groups, inner.dilation,
            )
        else:
            out = F.conv2d(
                x, w, inner.bias, inner.stride, inner.padding,
                inner.dilation, inner.groups,
            )
        if self.apply_pixelnorm:
            out = pixel_norm(out, self.scheme.pixelnorm_epsilon)
        return out


_WRAPPABLE = (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)


def wrap_layers(model: nn.Module, scheme: NormScheme, site: str) -> nn.Module:
    """Decorate every conv/linear layer of ``model`` with ``scheme``.

    Pixel norm is skipped on layers tagged ``is_output_layer`` (image and
    latent heads), where normalizing the output vector would destroy its
    meaning. Wrapping an already-wrapped model raises.
    """
    if site not in ("encoder", "decoder"):
        raise ConfigurationError(f"unknown site {site!r}")
    for module in model.modules():
        if isinstance(module, NormalizedLayer):
            raise ConfigurationError("model already carries normalization wrappers")
    if scheme.name == "none":
        return model

    def _wrap(parent: nn.Module):
        for name, child in list(parent.named_children()):
            if isinstance(child, _WRAPPABLE):
                skip_pn = bool(getattr(child, "is_output_layer", False))
                setattr(parent, name, NormalizedLayer(child, scheme, skip_pixelnorm=skip_pn))
            else:
                _wrap(child)

    _wrap(model)
    return model


def apply_norm_scheme(encoder: nn.Module, decoder: nn.Module, scheme: NormScheme) -> None:
    """Apply the site-resolved scheme to an encoder/decoder pair in place."""
    wrap_layers(encoder, scheme.for_site("encoder"), "encoder")
    wrap_layers(decoder, scheme.for_site("decoder"), "decoder")
