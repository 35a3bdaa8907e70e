"""
Evaluation for sdmseg
Dice, Jaccard, ASD and 95HD on binary masks, NMS post-processing and
dataset-level metric tables
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch

from core.errors import (
    MissingVolumeError,
    ShapeMismatchError,
    UndefinedSurfaceMetricError,
    ValidationError,
    VolumeFormatError,
)
from core.models import MetricsReport
from core.segnet import load_segmenter, predict_volume
from core.voxelgeom import boundary_mask, boundary_voxels, exact_edt, largest_component

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
TABLE_COLUMNS = ['Dice', 'Jaccard', 'ASD', '95HD']


def binarize(m: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Voxel is 1 iff probability >= threshold"""
    return (np.asarray(m) >= threshold).astype(np.uint8)


def _check_pair(pred: np.ndarray, gt: np.ndarray):
    if np.shape(pred) != np.shape(gt):
        raise ShapeMismatchError(f"prediction {np.shape(pred)} and ground truth {np.shape(gt)} differ in shape")


def dice_jaccard(pred: np.ndarray, gt: np.ndarray) -> Tuple[float, float]:
    """
    Overlap scores; two empty masks score (1, 1)

    Returns:
        Tuple[float, float]: dice, jaccard
    """
    _check_pair(pred, gt)
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    intersection = int(np.count_nonzero(p & g))
    union = int(np.count_nonzero(p | g))
    total = int(np.count_nonzero(p)) + int(np.count_nonzero(g))
    if total == 0:
        return 1.0, 1.0
    return 2.0 * intersection / total, intersection / union


def surface_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Bidirectional boundary-to-boundary distances

    Every boundary voxel of ``a`` contributes its distance to the boundary of
    ``b``, and vice versa.

    Raises:
        UndefinedSurfaceMetricError: either mask is empty or fills the grid
    """
    _check_pair(a, b)
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if not a.any() or not b.any():
        raise UndefinedSurfaceMetricError("undefined-surface-metric: surface distances need two nonempty masks")

    surface_a = boundary_mask(a)
    surface_b = boundary_mask(b)
    if not surface_a.any() or not surface_b.any():
        raise UndefinedSurfaceMetricError("undefined-surface-metric: a mask filling the whole grid has no surface")
    a_to_b = exact_edt(surface_b)[tuple(boundary_voxels(a).T)]
    b_to_a = exact_edt(surface_a)[tuple(boundary_voxels(b).T)]
    return np.concatenate([a_to_b, b_to_a])


def _nonempty(distances) -> np.ndarray:
    values = np.asarray(distances, dtype=np.float64)
    if values.size == 0:
        raise ValidationError("empty distance multiset")
    return values


def asd(distances) -> float:
    """Average symmetric surface distance"""
    return float(_nonempty(distances).mean())


def hd95(distances) -> float:
    """95th percentile (linear interpolation) of the combined distances"""
    return float(np.percentile(_nonempty(distances), 95))


def evaluate_volume(m: np.ndarray, gt: np.ndarray, apply_nms: bool = False,
                    threshold: float = DEFAULT_THRESHOLD, volume_id: str = '') -> MetricsReport:
    """
    Threshold, optionally keep the largest component, and score

    Surface metrics are None when the prediction or ground truth is empty.
    """
    _check_pair(m, gt)
    pred = binarize(m, threshold)
    if apply_nms:
        pred = largest_component(pred)

    dice, jaccard = dice_jaccard(pred, gt)
    try:
        distances = surface_distances(pred, gt)
        surface = (asd(distances), hd95(distances))
    except UndefinedSurfaceMetricError:
        surface = (None, None)

    return MetricsReport(id=volume_id, dice=dice, jaccard=jaccard, asd=surface[0], hd95=surface[1],
                         nms_applied=apply_nms)


@dataclass
class DatasetReport:
    """Per-volume rows plus failures keyed by id"""

    rows: List[MetricsReport] = field(default_factory=list)
    failures: Dict[str, str] = field(default_factory=dict)

    def table(self) -> pd.DataFrame:
        """
        Metric table in reporting units

        Dice and Jaccard in percent, distances in voxels, one row per volume and
        NMS setting followed by a mean row per NMS setting.
        """
        records = [{
            'id': r.id,
            'nms': 'on' if r.nms_applied else 'off',
            'Dice': 100.0 * r.dice,
            'Jaccard': 100.0 * r.jaccard,
            'ASD': r.asd,
            '95HD': r.hd95,
        } for r in self.rows]
        frame = pd.DataFrame.from_records(records, columns=['id', 'nms'] + TABLE_COLUMNS)
        frame[TABLE_COLUMNS] = frame[TABLE_COLUMNS].astype(float)
        means = frame.groupby('nms', sort=True)[TABLE_COLUMNS].mean().reset_index()
        means.insert(0, 'id', 'mean')
        return pd.concat([frame, means], ignore_index=True)

    def summary(self) -> dict:
        """Mean metrics per NMS setting plus failure report"""
        table = self.table()
        means = table[table['id'] == 'mean']
        summary = {}
        for _, row in means.iterrows():
            summary[f"nms_{row['nms']}"] = {
                column: (None if pd.isna(row[column]) else float(row[column])) for column in TABLE_COLUMNS
            }
        return {
            'means': summary,
            'volumes': len({r.id for r in self.rows}),
            'failures': dict(self.failures),
        }


def evaluate_predictions(predictions, nms_settings=(False,), threshold: float = DEFAULT_THRESHOLD) -> DatasetReport:
    """
    Score an iterable of ``(id, probability map or None, ground truth or error)``

    A ``None`` probability map marks a failed volume; the third element is then
    the failure message.
    """
    report = DatasetReport()
    for volume_id, prob, gt in predictions:
        if prob is None:
            report.failures[volume_id] = str(gt)
            logger.warning("Skipping %s: %s", volume_id, gt)
            continue
        for nms in nms_settings:
            report.rows.append(evaluate_volume(prob, gt, apply_nms=nms, threshold=threshold, volume_id=volume_id))
    return report


def evaluate_dataset(model, dm, ids: Optional[List[str]] = None, nms_settings=(False,),
                     threshold: float = DEFAULT_THRESHOLD, patch=None, device='cpu') -> DatasetReport:
    """
    Predict and score validation volumes

    Args:
        model: Segmenter, or a checkpoint / parameter archive path
        dm: DataManager of the dataset
        ids: Volume ids (default: the split's val ids)
        nms_settings: NMS flags to evaluate; each adds one row per volume
        threshold: Binarization threshold
        patch: Sliding-window patch for volumes not divisible by the network stride
        device: Torch device

    Returns:
        DatasetReport: rows and per-id failures (missing or unreadable files)
    """
    if not isinstance(model, torch.nn.Module):
        model = load_segmenter(model)
    model = model.to(device)
    ids = dm.split.val_ids if ids is None else ids
    missing = dm.missing_files(ids)

    def predictions():
        for volume_id in ids:
            if volume_id in missing:
                yield volume_id, None, f"missing {', '.join(missing[volume_id])} volume"
                continue
            try:
                image = dm.load(volume_id, 'image')
                gt = dm.load(volume_id, 'mask')
            except (MissingVolumeError, VolumeFormatError) as e:
                yield volume_id, None, e
                continue
            prob, _ = predict_volume(model, image, patch=patch, device=device)
            yield volume_id, prob, gt

    return evaluate_predictions(predictions(), nms_settings, threshold)
