"""
Tests for overlap and surface metrics, NMS and dataset evaluation
Run with: python -m pytest test_evalmetrics.py -v
"""
import shutil

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import cdist

from core.errors import ShapeMismatchError, UndefinedSurfaceMetricError, ValidationError
from core.evalmetrics import (
    TABLE_COLUMNS,
    DatasetReport,
    asd,
    binarize,
    dice_jaccard,
    evaluate_dataset,
    evaluate_predictions,
    evaluate_volume,
    hd95,
    surface_distances,
)
from core.data_manager import DataManager
from core.models import MetricsReport
from core.segnet import SegmenterConfig, init_params, save_params
from test_voxelgeom import brute_boundary


@st.composite
def mask_pairs(draw, max_side=10):
    shape = tuple(draw(st.integers(2, max_side)) for _ in range(3))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    a = rng.random(shape) < draw(st.floats(0.05, 0.8))
    b = rng.random(shape) < draw(st.floats(0.05, 0.8))
    a.flat[0], a.flat[-1] = True, False
    b.flat[0], b.flat[-1] = False, True
    return a, b


def cube(shape, lo, hi):
    mask = np.zeros(shape, dtype=np.uint8)
    mask[lo:hi, lo:hi, lo:hi] = 1
    return mask


class TestOverlap:
    """Dice and Jaccard"""

    @settings(max_examples=100, deadline=None)
    @given(mask_pairs())
    def test_dice_jaccard_identity(self, pair):
        dice, jaccard = dice_jaccard(*pair)
        assert dice == pytest.approx(2 * jaccard / (1 + jaccard), abs=1e-12)
        assert 0.0 <= jaccard <= dice <= 1.0

    def test_known_values(self):
        a = cube((6, 6, 6), 0, 2)
        b = np.zeros_like(a)
        b[0:2, 0:2, 0:1] = 1
        assert dice_jaccard(a, b) == pytest.approx((2 * 4 / 12, 4 / 8))

    def test_both_empty(self):
        empty = np.zeros((3, 3, 3), dtype=np.uint8)
        assert dice_jaccard(empty, empty) == (1.0, 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            dice_jaccard(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))

    def test_binarize_threshold_inclusive(self):
        m = np.array([0.49, 0.5, 0.51]).reshape(1, 1, 3)
        assert binarize(m).tolist() == [[[0, 1, 1]]]
        assert binarize(m, 0.51).tolist() == [[[0, 0, 1]]]


class TestSurfaceMetrics:
    """ASD and 95HD over boundary distances"""

    @settings(max_examples=60, deadline=None)
    @given(mask_pairs())
    def test_matches_all_pairs_oracle(self, pair):
        a, b = pair
        surface_a = np.argwhere(brute_boundary(a))
        surface_b = np.argwhere(brute_boundary(b))
        pairwise = cdist(surface_a, surface_b)
        expected = np.concatenate([pairwise.min(axis=1), pairwise.min(axis=0)])
        np.testing.assert_allclose(np.sort(surface_distances(a, b)), np.sort(expected), rtol=0, atol=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(mask_pairs())
    def test_symmetry_and_bounds(self, pair):
        a, b = pair
        forward = surface_distances(a, b)
        backward = surface_distances(b, a)
        assert asd(forward) == pytest.approx(asd(backward), rel=1e-12)
        assert hd95(forward) == hd95(backward)
        assert dice_jaccard(a, b) == dice_jaccard(b, a)
        assert 0.0 <= asd(forward) <= forward.max()
        assert hd95(forward) <= forward.max()

    @settings(max_examples=50, deadline=None)
    @given(mask_pairs())
    def test_identity(self, pair):
        a, _ = pair
        report = evaluate_volume(a.astype(np.float32), a)
        assert (report.dice, report.jaccard, report.asd, report.hd95) == (1.0, 1.0, 0.0, 0.0)

    def test_shifted_cube(self):
        a = cube((12, 12, 12), 2, 6)
        b = np.roll(a, 3, axis=0)
        distances = surface_distances(a, b)
        assert distances.min() == 0.0
        assert distances.max() == 3.0

    def test_empty_mask_undefined(self):
        with pytest.raises(UndefinedSurfaceMetricError):
            surface_distances(np.zeros((3, 3, 3)), cube((3, 3, 3), 0, 2))
        with pytest.raises(UndefinedSurfaceMetricError):
            surface_distances(np.ones((3, 3, 3)), cube((3, 3, 3), 0, 2))

    def test_empty_distances_rejected(self):
        with pytest.raises(ValidationError):
            asd([])

    def test_percentile_is_linear(self):
        values = np.arange(21, dtype=float)
        assert hd95(values) == pytest.approx(19.0)
        assert asd(values) == pytest.approx(10.0)


class TestEvaluateVolume:
    """Thresholding, NMS and per-volume reports"""

    def test_nms_recovers_clean_metrics(self):
        gt = cube((20, 20, 20), 2, 5)
        prediction = gt.astype(np.float32)
        prediction[15:17, 15:17, 15:17] = 0.9

        clean = evaluate_volume(gt.astype(np.float32), gt)
        with_nms = evaluate_volume(prediction, gt, apply_nms=True)
        without_nms = evaluate_volume(prediction, gt, apply_nms=False)

        assert (with_nms.dice, with_nms.jaccard, with_nms.asd, with_nms.hd95) == \
            (clean.dice, clean.jaccard, clean.asd, clean.hd95)
        assert with_nms.nms_applied and not without_nms.nms_applied
        assert without_nms.hd95 > with_nms.hd95
        assert without_nms.dice < with_nms.dice

    def test_empty_prediction_has_no_surface_metrics(self):
        gt = cube((8, 8, 8), 2, 5)
        report = evaluate_volume(np.zeros(gt.shape, dtype=np.float32), gt, volume_id='v')
        assert report.dice == 0.0
        assert report.asd is None and report.hd95 is None
        assert report.id == 'v'

    def test_threshold_applies(self):
        gt = cube((8, 8, 8), 2, 5)
        prob = gt * 0.6
        assert evaluate_volume(prob, gt, threshold=0.5).dice == 1.0
        assert evaluate_volume(prob, gt, threshold=0.7).dice == 0.0


class TestDatasetReport:
    """Metric tables and summaries"""

    @pytest.fixture
    def report(self):
        return DatasetReport(rows=[
            MetricsReport('a', 0.9, 0.8, 1.0, 2.0, nms_applied=False),
            MetricsReport('b', 0.7, 0.6, None, None, nms_applied=False),
            MetricsReport('a', 0.95, 0.9, 0.5, 1.0, nms_applied=True),
        ], failures={'c': 'missing mask'})

    def test_table_layout(self, report):
        table = report.table()
        assert list(table.columns) == ['id', 'nms'] + TABLE_COLUMNS
        means = table[table['id'] == 'mean'].set_index('nms')
        assert means.loc['off', 'Dice'] == pytest.approx(80.0)
        assert means.loc['off', 'ASD'] == pytest.approx(1.0)
        assert means.loc['on', 'Jaccard'] == pytest.approx(90.0)

    def test_summary(self, report):
        summary = report.summary()
        assert summary['volumes'] == 2
        assert summary['failures'] == {'c': 'missing mask'}
        assert summary['means']['nms_on']['95HD'] == pytest.approx(1.0)

    def test_evaluate_predictions_tags_rows(self):
        gt = cube((8, 8, 8), 2, 5)
        report = evaluate_predictions([('x', gt.astype(np.float32), gt), ('y', None, 'gone')],
                                      nms_settings=(False, True))
        assert [(r.id, r.nms_applied) for r in report.rows] == [('x', False), ('x', True)]
        assert report.failures == {'y': 'gone'}


class TestEvaluateDataset:
    """Prediction plus scoring over a dataset split"""

    @pytest.fixture
    def archive(self, tmp_path):
        model = init_params(SegmenterConfig(base_channels=4, levels=2), rng_seed=0)
        path = tmp_path / 'seg.pt'
        save_params(path, model)
        return path

    def test_rows_per_val_volume(self, tiny_dm, archive):
        report = evaluate_dataset(archive, tiny_dm, nms_settings=(False, True))
        assert len(report.rows) == 2 * len(tiny_dm.split.val_ids)
        assert report.failures == {}
        assert all(0.0 <= r.dice <= 1.0 for r in report.rows)

    def test_missing_files_reported(self, tiny_dataset, archive, tmp_path):
        copy = tmp_path / 'data'
        shutil.copytree(tiny_dataset, copy)
        dm = DataManager(copy)
        missing = dm.split.val_ids[0]
        (copy / 'volumes' / f"{missing}.mask.raw").unlink()

        report = evaluate_dataset(archive, dm)
        assert list(report.failures) == [missing]
        assert report.failures[missing] == 'missing mask volume'
        assert len(report.rows) == len(dm.split.val_ids) - 1
