"""
Shared pytest fixtures: a tiny phantom dataset and a matching desk-scale
experiment configuration. Long trend experiments are marked `slow` and run
only with --runslow.
"""

import shutil

import pytest

from models.phantom_models import PhantomConfig
from models.training_models import (
    AugmentSpec, BackboneConfig, ExperimentConfig, LossConfig, RoiSpec, TextConfig, TrainConfig, TrainMode
)
from services.phantom_service import generate_dataset

TINY_N = 24
TINY_SEED = 3


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow trend experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running trend experiment")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def tiny_phantom_config() -> PhantomConfig:
    return PhantomConfig(volume_shape=(24, 24, 24), organ_radius_range=(3.0, 4.0),
                         tumor_radius_range=(2.0, 3.0), seed=TINY_SEED)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory, tiny_phantom_config) -> str:
    """Read-only shared dataset; copy it before modifying files"""
    out = tmp_path_factory.mktemp("phantoms")
    generate_dataset(tiny_phantom_config, TINY_N, (0.64, 0.16, 0.20), TINY_SEED, str(out))
    return str(out)


@pytest.fixture
def dataset_copy(tiny_dataset_dir, tmp_path) -> str:
    target = tmp_path / "dataset"
    shutil.copytree(tiny_dataset_dir, target)
    return str(target)


def make_experiment(dataset_dir: str, run_dir: str, **overrides) -> ExperimentConfig:
    """Two-epoch, 16^3, three-stage setup that trains in seconds on CPU"""
    train = dict(epochs=2, warmup_epochs=1, batch_size=4, seed=TINY_SEED)
    payload = dict(
        name="tiny",
        dataset_dir=dataset_dir,
        run_dir=run_dir,
        seed=TINY_SEED,
        full_fraction=0.5,
        roi=RoiSpec(margin=(4, 4, 2), target_shape=(16, 16, 16)),
        augment=AugmentSpec(),
        backbone=BackboneConfig(stages=3, base_channels=4, input_shape=(16, 16, 16)),
        det_channels=8,
        text=TextConfig(table_path=None, dim=16),
        teacher=TrainConfig(mode=TrainMode.TEACHER, loss=LossConfig(), **train),
        student=TrainConfig(mode=TrainMode.STUDENT, loss=LossConfig(), **train),
    )
    payload.update(overrides)
    return ExperimentConfig(**payload)


@pytest.fixture
def tiny_experiment(tiny_dataset_dir, tmp_path) -> ExperimentConfig:
    return make_experiment(tiny_dataset_dir, str(tmp_path / "run"))
