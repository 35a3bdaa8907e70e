"""
Shared test fixtures for sdmseg
"""
import numpy as np
import pytest
import torch

from app import create_app
from core.data_manager import DataManager
from core.models import VolumeShape
from core.synthdata import make_dataset
from core.trainer import TrainConfig


@pytest.fixture
def app():
    """Create and configure test app"""
    app = create_app('testing')

    with app.app_context():
        yield app


@pytest.fixture
def runner(app):
    """Test CLI runner"""
    return app.test_cli_runner()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(autouse=True)
def torch_threads():
    torch.set_num_threads(1)
    yield


@pytest.fixture(scope='session')
def tiny_dataset(tmp_path_factory):
    """Seven 20x20x20 volumes: 3 labeled, 2 unlabeled, 2 val"""
    out = tmp_path_factory.mktemp('tiny_dataset')
    make_dataset(7, VolumeShape(20, 20, 20), (3, 2, 2), rng_seed=5, out_dir=out)
    return out


@pytest.fixture
def tiny_dm(tiny_dataset):
    return DataManager(tiny_dataset)


def tiny_config(**overrides) -> TrainConfig:
    """Small networks on 16^3 crops for fast CPU runs"""
    values = dict(
        mode='full',
        total_iters=4,
        crop=[16, 16, 16],
        base_channels=4,
        levels=2,
        disc_channels=[4, 4, 8, 8, 8],
        mlp_hidden=8,
        checkpoint_every=2,
        validate_every=2,
        max_checkpoints=1,
        seed=3,
    )
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture
def make_config():
    return tiny_config
