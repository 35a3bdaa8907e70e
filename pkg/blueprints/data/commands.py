"""
Data Commands
Synthetic dataset generation and mask-to-SDM conversion
"""
from pathlib import Path

import click
import numpy as np
from flask import Blueprint, current_app

from blueprints import echo_params, handle_errors
from core.errors import ValidationError
from core.models import VolumeShape
from core.synthdata import DEFAULT_NOISE, make_dataset
from core.utils import write_run_echo
from core.volume_io import load_volume, save_volume
from core.voxelgeom import sdm_target

data_bp = Blueprint('data', __name__, cli_group=None)


@data_bp.cli.command('gen-data')
@click.option('--count', type=int, default=None, help='Number of volumes (default: labeled + unlabeled + val)')
@click.option('--shape', type=int, nargs=3, default=(48, 48, 48), show_default=True, help='Grid size D H W')
@click.option('--labeled', type=int, required=True, help='Labeled volumes')
@click.option('--unlabeled', type=int, required=True, help='Unlabeled volumes')
@click.option('--val', type=int, required=True, help='Validation volumes')
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--noise', type=float, default=DEFAULT_NOISE, show_default=True, help='Noise standard deviation')
@click.option('--workers', type=int, default=None, help='Worker processes (default: GEN_WORKERS)')
@click.option('--previews', is_flag=True, help='Write PNG slice previews')
@click.option('--out', type=click.Path(file_okay=False, path_type=Path), required=True)
@click.pass_context
@handle_errors
def gen_data(ctx, count, shape, labeled, unlabeled, val, seed, noise, workers, previews, out):
    """Generate a synthetic labeled / unlabeled / validation dataset"""
    if count is None:
        count = labeled + unlabeled + val
    if workers is None:
        workers = current_app.config['GEN_WORKERS']
    if workers < 1:
        raise ValidationError(f"--workers must be at least 1, got {workers}")

    split = make_dataset(count, VolumeShape.from_dhw(shape), (labeled, unlabeled, val), seed, out,
                         noise_level=noise, workers=workers, previews=previews)
    write_run_echo(out, 'gen-data', echo_params(ctx))
    click.echo(f"Wrote {count} volumes to {out} "
               f"({len(split.labeled_ids)} labeled, {len(split.unlabeled_ids)} unlabeled, {len(split.val_ids)} val)")


@data_bp.cli.command('compute-sdm')
@click.option('--mask', 'mask_path', type=click.Path(dir_okay=False, path_type=Path), required=True,
              help='Mask volume (header or payload path)')
@click.option('--out', type=click.Path(dir_okay=False, path_type=Path), required=True,
              help='Output base path for the normalized SDM')
@click.pass_context
@handle_errors
def compute_sdm(ctx, mask_path, out):
    """Compute the normalized signed distance map of a binary mask"""
    record = load_volume(mask_path)
    values = np.unique(record.voxels)
    if not np.isin(values, (0, 1)).all():
        raise ValidationError(f"{mask_path}: mask values must be 0 or 1, found {values[:5].tolist()}")

    header = save_volume(sdm_target(record.voxels), out, kind='sdm', volume_id=record.id)
    write_run_echo(header, 'compute-sdm', echo_params(ctx))
    click.echo(f"Wrote SDM {header}")
