"""Loss terms for the adversarial encoder/decoder game.

The encoder pushes codes of real images toward a unit Gaussian and codes
of generated images away from it; the decoder pulls the generated-image
codes back. Both divergences use the closed-form KL between the
batch-fitted diagonal Gaussian and N(0, I):

    sum_j [ (mu_j^2 + var_j) / 2 - ln(sigma_j) - 1/2 ]

The encoder objective is hinged: the gap between the two KL terms is
clamped from below at ``-m_gap`` so the encoder gains nothing by pushing
the gap past the bound. With ``m_gap = inf`` the hinge vanishes and the
plain difference-of-KLs objective is recovered exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import Tensor

from .exceptions import ConfigurationError, ShapeMismatchError
from .model import PhaseState

VARIANCE_FLOOR = 1e-12


@dataclass
class LossWeights:
    """Weights of the reconstruction terms; tuning knobs, not fixed constants."""

    lambda_x: float = 1.0
    lambda_z: float = 10.0

    def __post_init__(self):
        for name in ("lambda_x", "lambda_z"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(f"{name} must be finite and >= 0")


@dataclass(frozen=True)
class MarginEntry:
    """Hinge bound ``m_gap`` active from ``threshold`` samples at ``level``."""

    threshold: int
    level: int
    m_gap: float


@dataclass
class MarginSchedule:
    """Piecewise mapping from training position to the hinge bound.

    Entries are matched on the phase level; among entries whose sample
    threshold has been reached, the last one wins. Before any entry
    matches the margin is infinite, i.e. the hinge is disabled.
    """

    entries: list[MarginEntry] = field(default_factory=list)

    def __post_init__(self):
        self.entries = [
            e if isinstance(e, MarginEntry) else MarginEntry(*e) for e in self.entries
        ]
        thresholds = [e.threshold for e in self.entries]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ConfigurationError("margin thresholds must be strictly increasing")
        for e in self.entries:
            if not (e.m_gap > 0):
                raise ConfigurationError("m_gap must be > 0 (or inf)")

    @classmethod
    def disabled(cls) -> "MarginSchedule":
        return cls(entries=[])


def margin_for(schedule: MarginSchedule, phase: PhaseState) -> float:
    """Resolve the hinge bound for the current phase (inf = hinge off)."""
    selected = math.inf
    for entry in schedule.entries:
        if entry.threshold <= phase.samples_seen and entry.level == phase.level:
            selected = entry.m_gap
    return selected


def batch_moments(codes: Tensor) -> tuple[Tensor, Tensor, bool]:
    """Per-dimension empirical mean and variance, with a degeneracy flag.

    Variances below ``VARIANCE_FLOOR`` are floored so the log term stays
    finite; the flag reports whether flooring occurred.
    """
    if codes.dim() != 2 or codes.shape[0] < 2:
        raise ShapeMismatchError("batch moments need a (M, D) batch with M >= 2")
    mu = codes.mean(dim=0)
    var = codes.var(dim=0, unbiased=False)
    degenerate = bool((var < VARIANCE_FLOOR).any())
    if degenerate:
        var = var.clamp_min(VARIANCE_FLOOR)
    return mu, var, degenerate


def kl_from_moments(mu: Tensor, var: Tensor) -> Tensor:
    return ((mu.square() + var) / 2 - 0.5 * torch.log(var) - 0.5).sum()


def kl_unit_gaussian(codes: Tensor) -> Tensor:
    """KL divergence of the batch-fitted diagonal Gaussian from N(0, I)."""
    mu, var, _ = batch_moments(codes)
    return kl_from_moments(mu, var)


def recon_x(x: Tensor, x_rec: Tensor) -> Tensor:
    """L1 reconstruction distance in image space, averaged over all elements."""
    if x.shape != x_rec.shape:
        raise ShapeMismatchError(
            f"reconstruction shape {tuple(x_rec.shape)} != input shape {tuple(x.shape)}"
        )
    return (x - x_rec).abs().mean()


def recon_z(z: Tensor, z_rec: Tensor) -> Tensor:
    """Cosine reconstruction distance in code space: mean of 1 - <z, z_rec>."""
    if z.shape != z_rec.shape:
        raise ShapeMismatchError("code batches must have matching shapes")
    with torch.no_grad():
        for name, t in (("z", z), ("z_rec", z_rec)):
            if bool((t.norm(dim=-1) - 1.0).abs().max() > 1e-3):
                raise ValueError(f"{name} must be unit-norm")
    return (1.0 - (z * z_rec).sum(dim=-1)).mean()


def encoder_loss(kl_real, kl_fake, recon_x_value, weights: LossWeights, m_gap: float):
    """Hinged encoder objective: ``max(-m_gap, kl_real - kl_fake) + lambda_x * L_x``."""
    gap = kl_real - kl_fake
    if math.isinf(m_gap):
        hinged = gap
    else:
        hinged = torch.clamp(gap, min=-m_gap) if isinstance(gap, Tensor) else max(-m_gap, gap)
    return hinged + weights.lambda_x * recon_x_value


def decoder_loss(kl_fake, recon_z_value, weights: LossWeights):
    """Decoder objective: ``kl_fake + lambda_z * L_z``."""
    return kl_fake + weights.lambda_z * recon_z_value


@dataclass
class LossReport:
    """Per-step loss record; the unit written to the training log."""

    kl_real: float
    kl_fake: float
    gap: float
    hinge_active: bool
    recon_x: float
    recon_z: float
    encoder_total: float
    decoder_total: float
    m_gap: float = math.inf
    degenerate_variance: bool = False
    non_finite: bool = False

    def is_finite(self) -> bool:
        return all(
            math.isfinite(v)
            for v in (self.kl_real, self.kl_fake, self.gap, self.recon_x,
                      self.recon_z, self.encoder_total, self.decoder_total)
        )

    def to_record(self) -> dict:
        return {
            "kl_real": self.kl_real,
            "kl_fake": self.kl_fake,
            "gap": self.gap,
            "hinge_active": self.hinge_active,
            "recon_x": self.recon_x,
            "recon_z": self.recon_z,
            "encoder_total": self.encoder_total,
            "decoder_total": self.decoder_total,
            "m_gap": self.m_gap,
            "degenerate_variance": self.degenerate_variance,
            "non_finite": self.non_finite,
        }
