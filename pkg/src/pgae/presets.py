"""Named training presets.

``celebahq-paper`` and ``lsun-paper`` reproduce the published schedule
shape (seven phases to 256x256, margin switched on after 13M samples);
they are compute-bound references. ``desk-synthetic`` is the runnable
desk-scale preset: four phases to 32x32 on the synthetic blob dataset,
with every sample budget scaled down by a factor of 1000.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import DatasetSpec, SyntheticSpec
from .exceptions import ConfigurationError
from .losses import LossWeights, MarginSchedule
from .model import NetworkConfig
from .normalization import NormScheme
from .trainer import OptimizerConfig, TrainConfig


def _paper_schedule(margin_low: float, scale: float) -> TrainConfig:
    phase_samples = [2_400_000] * 4 + [5_200_000, 5_240_000, 5_500_000]
    batch_schedule = [1024, 512, 256, 128, 64, 32, 16]
    margin_on = 13_000_000
    level5_start = sum(phase_samples[:5])
    level6_start = sum(phase_samples[:6])
    entries = [
        (margin_on, 4, margin_low),
        (level5_start, 5, margin_low),
        (level6_start, 6, 0.4),
    ]
    if scale != 1.0:
        phase_samples = [max(64, int(round(s * scale))) for s in phase_samples]
        entries = [(max(1, int(round(t * scale))), lvl, m) for t, lvl, m in entries]
    return TrainConfig(
        network=NetworkConfig(latent_dim=512, base_resolution=4, max_resolution=256),
        phase_samples=phase_samples,
        batch_schedule=batch_schedule,
        optimizer=OptimizerConfig(),
        margin_schedule=MarginSchedule(entries=entries),
        norm_scheme=NormScheme(use_spectral=True),
        loss_weights=LossWeights(),
    )


def celebahq_paper(scale: float = 1.0) -> TrainConfig:
    return _paper_schedule(margin_low=0.2, scale=scale)


def lsun_paper(scale: float = 1.0) -> TrainConfig:
    return _paper_schedule(margin_low=0.6, scale=scale)


def desk_synthetic(seed: int = 0) -> TrainConfig:
    """Desk-scale preset: 4 -> 32 pixels, budgets at 1/1000 of full scale."""
    phase_samples = [2400] * 4  # 2.4M per phase, scaled by 1/1000
    total = sum(phase_samples)
    margin_on = total // 2
    return TrainConfig(
        network=NetworkConfig(latent_dim=64, base_resolution=4, max_resolution=32),
        phase_samples=phase_samples,
        batch_schedule=[16, 16, 16, 16],
        optimizer=OptimizerConfig(),
        margin_schedule=MarginSchedule(entries=[
            (margin_on, 2, 0.2),
            (phase_samples[0] * 3, 3, 0.2),
        ]),
        norm_scheme=NormScheme(use_spectral=True),
        loss_weights=LossWeights(),
        seed=seed,
        metric_cadence=total // 64,
        fid_every_windows=16,
        fid_samples=1000,
    )


def desk_dataset_spec(seed: int = 0, count: int = 512) -> DatasetSpec:
    return DatasetSpec(
        source=SyntheticSpec(count=count, resolution=32, seed=seed),
        split=(0.9, 0.1),
        seed=seed,
    )


@dataclass
class RunConfig:
    """Full experiment config tree: training schedule plus dataset source."""

    train: TrainConfig = field(default_factory=TrainConfig)
    data: DatasetSpec = field(default_factory=DatasetSpec)


def _celebahq_run() -> RunConfig:
    return RunConfig(train=celebahq_paper(),
                     data=DatasetSpec(source="data/celebahq", split=(0.9, 0.1)))


def _lsun_run() -> RunConfig:
    return RunConfig(train=lsun_paper(),
                     data=DatasetSpec(source="data/lsun_bedrooms", split=(1.0, 0.0)))


def _desk_run() -> RunConfig:
    return RunConfig(train=desk_synthetic(), data=desk_dataset_spec())


_PRESETS = {
    "celebahq-paper": _celebahq_run,
    "lsun-paper": _lsun_run,
    "desk-synthetic": _desk_run,
}


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def get_preset(name: str, seed: int | None = None) -> RunConfig:
    if name not in _PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        )
    config = _PRESETS[name]()
    if seed is not None:
        config.train.seed = seed
        if isinstance(config.data.source, SyntheticSpec):
            config.data.source.seed = seed
        config.data.seed = seed
    return config
