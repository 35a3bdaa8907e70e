"""
Long training runs on the demo dataset
Run with: python -m pytest test_acceptance.py -m slow -v
"""
import json

import pytest

from blueprints.train.forms import parse_train_config
from core.data_manager import DataManager
from core.trainer import run_ablation, run_training
from scripts.setup_demo_data import demo_train_config, setup_demo_data

pytestmark = pytest.mark.slow


@pytest.fixture(scope='module')
def demo_dm(tmp_path_factory):
    out = tmp_path_factory.mktemp('demo')
    setup_demo_data(out, seed=0)
    return DataManager(out)


def test_full_mode_reaches_target_dice(demo_dm, tmp_path):
    result = run_training(demo_dm, parse_train_config(demo_train_config()), tmp_path / 'full', prefetch=0)
    assert result.val_dice >= 0.8


def test_supervised_oracle(demo_dm, tmp_path):
    config = parse_train_config(demo_train_config(), mode='supervised')
    result = run_training(demo_dm, config, tmp_path / 'supervised', prefetch=0)
    assert result.val_dice >= 0.75
    assert result.discriminator_params == 0


def test_repeated_runs_match(demo_dm, tmp_path):
    config = parse_train_config({**demo_train_config(), 'total_iters': 50, 'validate_every': 25})

    def records(run_dir):
        lines = (run_dir / 'train_log.jsonl').read_text().splitlines()
        return [{k: v for k, v in json.loads(line).items() if k != 'wall_time'} for line in lines if line.strip()]

    run_training(demo_dm, config, tmp_path / 'a', prefetch=2)
    run_training(demo_dm, config, tmp_path / 'b', prefetch=0)
    assert records(tmp_path / 'a') == records(tmp_path / 'b')


def test_ablation_ordering(demo_dm, tmp_path):
    runs, comparison = run_ablation(demo_dm, parse_train_config(demo_train_config()), tmp_path,
                                    seeds=(0, 1, 2), labeled=4, prefetch=0)
    assert len(runs) == 9
    dice = comparison.set_index('arm')['Dice']
    assert dice['supervised'] <= dice['supervised+sdm'] <= dice['full']
    assert dice['full'] > dice['supervised']
    assert set(comparison['labeled']) == {4}
