"""Progressively grown adversarial autoencoder toolkit."""

from .data import Dataset, DatasetSpec, SyntheticSpec, generate_synthetic, ingest
from .latent_ops import (AttributeVector, apply_attribute, extract_attribute,
                         interpolation_grid, slerp)
from .losses import (LossReport, LossWeights, MarginSchedule, decoder_loss,
                     encoder_loss, kl_unit_gaussian, margin_for, recon_x, recon_z)
from .metrics import (FeatureStats, fit_feature_stats, frechet_distance,
                      identity_distance, perceptual_path_length)
from .model import (ModelSnapshot, NetworkConfig, PhaseState, blend_fade,
                    build_networks, decode, ema_update, encode)
from .normalization import (NormScheme, SpectralState, eqlr_scale, pixel_norm,
                            spectral_normalize, wrap_layers)
from .trainer import (AblationSpec, TrainConfig, Trainer, load_checkpoint,
                      run_ablation, run_schedule, save_checkpoint)

__version__ = "0.1.0"
