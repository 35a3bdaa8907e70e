"""
Train Commands
Training runs and the ablation preset
"""
from pathlib import Path

import click
from flask import Blueprint, current_app

from blueprints import echo_params, handle_errors
from blueprints.train.forms import parse_train_config
from core.data_manager import DataManager, read_json, write_json
from core.trainer import MODES, TrainConfig, run_ablation, run_training
from core.utils import write_run_echo

train_bp = Blueprint('train', __name__, cli_group=None)


def load_train_config(path, mode=None) -> TrainConfig:
    """Train config from a JSON file (defaults when no file is given)"""
    data = read_json(path) if path is not None else {}
    return parse_train_config(data, mode=mode)


@train_bp.cli.command('train')
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None, help='Train config JSON (missing keys take defaults)')
@click.option('--mode', type=click.Choice(MODES), default=None, help='Overrides the config mode')
@click.option('--data', 'data_dir', type=click.Path(path_type=Path), required=True,
              help='Dataset directory or split manifest')
@click.option('--out', type=click.Path(file_okay=False, path_type=Path), required=True, help='Run directory')
@click.option('--resume', type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help='Checkpoint to continue from')
@click.pass_context
@handle_errors
def train(ctx, config_path, mode, data_dir, out, resume):
    """Train the segmenter (and discriminator in full mode)"""
    config = load_train_config(config_path, mode)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / 'config.json', config.to_dict())
    write_run_echo(out, 'train', {**echo_params(ctx), 'config': config.to_dict()})

    result = run_training(DataManager(data_dir), config, out, resume=resume,
                          device=current_app.config['DEVICE'],
                          prefetch=current_app.config['PREFETCH_BATCHES'])
    dice = 'n/a' if result.val_dice is None else f"{result.val_dice:.4f}"
    click.echo(f"Finished {config.mode} training: {result.final_checkpoint} (val Dice {dice})")


@train_bp.cli.command('ablation')
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None, help='Base train config JSON')
@click.option('--data', 'data_dir', type=click.Path(path_type=Path), required=True,
              help='Dataset directory or split manifest')
@click.option('--out', type=click.Path(file_okay=False, path_type=Path), required=True, help='Ablation directory')
@click.option('--seed', 'seeds', type=int, multiple=True, default=(0, 1, 2), show_default=True,
              help='Seed shared by all arms (repeatable)')
@click.option('--labeled', type=int, default=None, help='Labeled budget taken from the manifest split')
@click.option('--upper-bound', is_flag=True, help='Add a supervised arm trained on every training volume')
@click.pass_context
@handle_errors
def ablation(ctx, config_path, data_dir, out, seeds, labeled, upper_bound):
    """Run the supervised, supervised+sdm and full arms with shared seeds"""
    config = load_train_config(config_path)
    out.mkdir(parents=True, exist_ok=True)
    write_run_echo(out, 'ablation', {**echo_params(ctx), 'config': config.to_dict()})

    runs, comparison = run_ablation(DataManager(data_dir), config, out, seeds=seeds,
                                    upper_bound=upper_bound, labeled=labeled,
                                    device=current_app.config['DEVICE'],
                                    prefetch=current_app.config['PREFETCH_BATCHES'])
    runs.to_csv(out / 'ablation_runs.csv', index=False)
    comparison.to_csv(out / 'ablation.csv', index=False)
    write_json(out / 'ablation.json', {
        'runs': runs.to_dict(orient='records'),
        'comparison': comparison.to_dict(orient='records'),
    })
    click.echo(comparison.to_string(index=False))
