"""
Evaluate Commands
Dataset metric tables and single-volume prediction
"""
from pathlib import Path

import click
from flask import Blueprint, current_app

from blueprints import echo_params, handle_errors
from core.data_manager import DataManager, write_json
from core.errors import MissingVolumeError, ValidationError
from core.evalmetrics import DEFAULT_THRESHOLD, binarize, evaluate_dataset
from core.segnet import load_segmenter, predict_volume
from core.utils import save_slice_preview, write_run_echo
from core.volume_io import load_volume, save_volume
from core.voxelgeom import largest_component

evaluate_bp = Blueprint('evaluate', __name__, cli_group=None)

NMS_SETTINGS = {
    'off': (False,),
    'on': (True,),
    'both': (False, True),
}


@evaluate_bp.cli.command('evaluate')
@click.option('--checkpoint', type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True,
              help='Training checkpoint or segmenter archive')
@click.option('--data', 'data_dir', type=click.Path(path_type=Path), required=True,
              help='Dataset directory or split manifest')
@click.option('--nms', type=click.Choice(list(NMS_SETTINGS)), default='off', show_default=True,
              help='Keep only the largest component before scoring')
@click.option('--threshold', type=click.FloatRange(0.0, 1.0), default=DEFAULT_THRESHOLD, show_default=True)
@click.option('--patch', type=int, nargs=3, default=None, help='Sliding-window patch D H W')
@click.option('--out', type=click.Path(file_okay=False, path_type=Path), required=True)
@click.pass_context
@handle_errors
def evaluate(ctx, checkpoint, data_dir, nms, threshold, patch, out):
    """Score the validation volumes: Dice, Jaccard, ASD, 95HD"""
    dm = DataManager(data_dir)
    model = load_segmenter(checkpoint)
    report = evaluate_dataset(model, dm, nms_settings=NMS_SETTINGS[nms], threshold=threshold,
                              patch=patch, device=current_app.config['DEVICE'])

    out.mkdir(parents=True, exist_ok=True)
    table = report.table()
    table.to_csv(out / 'metrics.csv', index=False)
    write_json(out / 'summary.json', report.summary())
    write_run_echo(out, 'evaluate', echo_params(ctx))
    click.echo(table.to_string(index=False, float_format=lambda v: f"{v:.2f}"))

    if report.failures:
        for volume_id, reason in sorted(report.failures.items()):
            click.echo(f"FAILED {volume_id}: {reason}", err=True)
        raise MissingVolumeError(f"{len(report.failures)} volume(s) could not be evaluated")


@evaluate_bp.cli.command('predict')
@click.option('--checkpoint', type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True,
              help='Training checkpoint or segmenter archive')
@click.option('--volume', 'volume_path', type=click.Path(dir_okay=False, path_type=Path), required=True,
              help='Image volume (header or payload path)')
@click.option('--out-mask', type=click.Path(dir_okay=False, path_type=Path), required=True,
              help='Output base path of the binary mask')
@click.option('--out-sdm', type=click.Path(dir_okay=False, path_type=Path), default=None,
              help='Output base path of the predicted SDM')
@click.option('--threshold', type=click.FloatRange(0.0, 1.0), default=DEFAULT_THRESHOLD, show_default=True)
@click.option('--nms/--no-nms', default=False, show_default=True, help='Keep only the largest component')
@click.option('--patch', type=int, nargs=3, default=None, help='Sliding-window patch D H W')
@click.option('--preview', is_flag=True, help='Write PNG slice previews next to the outputs')
@click.pass_context
@handle_errors
def predict(ctx, checkpoint, volume_path, out_mask, out_sdm, threshold, nms, patch, preview):
    """Segment one volume"""
    model = load_segmenter(checkpoint)
    if out_sdm is not None and model.sdm_head is None:
        raise ValidationError(f"{checkpoint}: segmenter has no SDM head, drop --out-sdm")

    record = load_volume(volume_path)
    prob, sdm = predict_volume(model, record.voxels, patch=patch, device=current_app.config['DEVICE'])
    mask = binarize(prob, threshold)
    if nms:
        mask = largest_component(mask)

    header = save_volume(mask, out_mask, kind='mask', volume_id=record.id)
    written = [header]
    if out_sdm is not None:
        written.append(save_volume(sdm, out_sdm, kind='sdm', volume_id=record.id))
    if preview:
        save_slice_preview(mask, header.with_name(header.name.split('.')[0] + '.mask.png'), kind='mask')
        if sdm is not None:
            save_slice_preview(sdm, header.with_name(header.name.split('.')[0] + '.sdm.png'), kind='sdm')

    write_run_echo(header, 'predict', echo_params(ctx))
    for path in written:
        click.echo(f"Wrote {path}")
