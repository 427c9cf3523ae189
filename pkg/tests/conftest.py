from dataclasses import dataclass
from pathlib import Path

import pytest
import torch

from pgae.data import Dataset, SyntheticSpec, generate_synthetic
from pgae.losses import MarginSchedule
from pgae.model import NetworkConfig
from pgae.normalization import NormScheme
from pgae.trainer import TrainConfig


def tiny_network(latent_dim=16, max_resolution=8, **kwargs) -> NetworkConfig:
    return NetworkConfig(latent_dim=latent_dim, base_resolution=4,
                         max_resolution=max_resolution, **kwargs)


def tiny_train_config(levels=2, samples_per_phase=64, batch=8, seed=3,
                      **kwargs) -> TrainConfig:
    network = kwargs.pop("network", tiny_network(max_resolution=4 * 2 ** (levels - 1)))
    defaults = dict(
        network=network,
        phase_samples=[samples_per_phase] * network.levels,
        batch_schedule=[batch] * network.levels,
        margin_schedule=MarginSchedule.disabled(),
        norm_scheme=NormScheme(use_spectral=True),
        seed=seed,
    )
    defaults.update(kwargs)
    return TrainConfig(**defaults)


@pytest.fixture(scope="session")
def blob_dataset():
    return generate_synthetic(SyntheticSpec(count=48, resolution=16, seed=11))


@dataclass
class MicroRun:
    """A quickly trained tiny model shared by the CLI and serve tests."""

    checkpoint: Path
    data_dir: Path
    attribute_path: Path
    dataset: Dataset
    out_dir: Path


@pytest.fixture(scope="session")
def micro_run(tmp_path_factory) -> MicroRun:
    from pgae.latent_ops import extract_attribute
    from pgae.trainer import Trainer

    root = tmp_path_factory.mktemp("micro_run")
    spec = SyntheticSpec(count=32, resolution=8, seed=13)
    dataset = generate_synthetic(spec, split=(0.9, 0.1))
    data_dir = root / "data"
    dataset.save_to_dir(data_dir)
    config = tiny_train_config(levels=2, samples_per_phase=48, batch=8, seed=13)
    trainer = Trainer(config)
    result = trainer.run(dataset, out_dir=root / "train")
    above, below = dataset.split_by_factor_median("pos_x")
    snapshot = result.snapshot
    attr = extract_attribute(snapshot, dataset.images[above], dataset.images[below],
                             name="move-right")
    attr.config_hash = snapshot.config_hash
    attr_dir = root / "attrs"
    attr_dir.mkdir()
    attr_path = attr_dir / "move-right.json"
    attr.save(attr_path)
    return MicroRun(checkpoint=result.checkpoint_path, data_dir=data_dir,
                    attribute_path=attr_path, dataset=dataset, out_dir=root)


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)
