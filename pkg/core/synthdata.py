"""
Synthetic volumetric datasets for sdmseg
Bumped, rotated ellipsoids with Gaussian intensity noise, dataset writing,
crops and flips
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from core.data_manager import DataManager
from core.errors import ShapeOutOfBoundsError, ValidationError
from core.models import DatasetSplit, Sample, ShapeSpec, VolumeShape
from core.utils import save_slice_preview
from core.volume_io import save_volume
from core.voxelgeom import largest_component, sdm_target

logger = logging.getLogger(__name__)

FOREGROUND_MEAN = 0.75
BACKGROUND_MEAN = 0.25
DEFAULT_NOISE = 0.1
DEFAULT_SHAPE = VolumeShape(48, 48, 48)
DEFAULT_CROP = VolumeShape(32, 32, 32)


def _rotation_matrix(spec: ShapeSpec) -> np.ndarray:
    return Rotation.from_euler('zyx', spec.rotation).as_matrix()


def half_extents(spec: ShapeSpec) -> np.ndarray:
    """Axis-aligned half extent of the bumped, rotated ellipsoid per (d, h, w) axis"""
    rot = _rotation_matrix(spec)
    radii = np.asarray(spec.radii, dtype=np.float64) * (1.0 + spec.bump_amplitude)
    return np.sqrt(((rot * radii[None, :]) ** 2).sum(axis=1))


def fits(spec: ShapeSpec, shape: VolumeShape) -> bool:
    """True when the object keeps at least one voxel of margin to every face"""
    extents = half_extents(spec)
    center = np.asarray(spec.center, dtype=np.float64)
    upper = np.asarray(shape.array_shape, dtype=np.float64) - 2.0
    return bool(np.all(center - extents >= 1.0) and np.all(center + extents <= upper))


def ellipsoid_mask(spec: ShapeSpec, shape: VolumeShape) -> np.ndarray:
    """Voxels inside the bumped, rotated ellipsoid, as one 26-connected component"""
    coords = np.indices(shape.array_shape, dtype=np.float64).reshape(3, -1).T
    local = (coords - np.asarray(spec.center)) @ _rotation_matrix(spec)
    unit = local / np.asarray(spec.radii, dtype=np.float64)
    radius = np.linalg.norm(unit, axis=1)

    limit = np.ones_like(radius)
    if spec.bump_amplitude > 0:
        safe = np.where(radius > 0, radius, 1.0)
        polar = np.arccos(np.clip(unit[:, 0] / safe, -1.0, 1.0))
        azimuth = np.arctan2(unit[:, 1], unit[:, 2])
        k = spec.bump_frequency
        limit = 1.0 + spec.bump_amplitude * np.sin(k * azimuth) * np.sin(k * polar)

    mask = (radius <= limit).reshape(shape.array_shape)
    if spec.bump_amplitude > 0:
        # sampling can split off voxels of thin lobes
        return largest_component(mask)
    return mask.astype(np.uint8)


def generate_sample(spec: ShapeSpec, shape: VolumeShape, noise_level: float,
                    rng_seed: int, sample_id: str = '') -> Sample:
    """
    Render one labeled sample

    Args:
        spec: Object geometry
        shape: Grid size
        noise_level: Standard deviation of the additive Gaussian noise
        rng_seed: Noise seed
        sample_id: Identifier (defaults to ``sample_<seed>``)

    Returns:
        Sample: min-max scaled image, mask and normalized SDM

    Raises:
        ShapeOutOfBoundsError: object leaves the one-voxel margin
    """
    if noise_level < 0:
        raise ValidationError(f"noise_level must be non-negative, got {noise_level}")
    if not fits(spec, shape):
        raise ShapeOutOfBoundsError(
            f"shape-out-of-bounds: object with center {spec.center} and radii {spec.radii} "
            f"does not fit in {shape.array_shape}"
        )

    rng = np.random.default_rng(rng_seed)
    mask = ellipsoid_mask(spec, shape)
    volume = np.where(mask > 0, FOREGROUND_MEAN, BACKGROUND_MEAN)
    if noise_level > 0:
        volume = volume + rng.normal(0.0, noise_level, size=volume.shape)

    low, high = volume.min(), volume.max()
    volume = (volume - low) / (high - low) if high > low else np.zeros_like(volume)

    return Sample(
        id=sample_id or f"sample_{rng_seed}",
        volume=volume.astype(np.float32),
        mask=mask,
        sdm=sdm_target(mask).astype(np.float32),
    )


def random_shape_spec(shape: VolumeShape, rng: np.random.Generator, max_bump: float = 0.2) -> ShapeSpec:
    """Draw an ellipsoid that fits ``shape`` with margin"""
    dims = np.asarray(shape.array_shape, dtype=np.float64)
    scale = 1.0
    while True:
        radii = np.maximum(rng.uniform(0.16, 0.28, size=3) * dims.min() * scale, 2.0)
        spec = ShapeSpec(
            center=tuple(dims / 2.0),
            radii=tuple(float(r) for r in radii),
            rotation=tuple(float(a) for a in rng.uniform(0.0, 2.0 * np.pi, size=3)),
            bump_amplitude=float(rng.uniform(0.0, max_bump)),
            bump_frequency=int(rng.integers(1, 4)),
        )
        extents = half_extents(spec)
        low = 1.0 + extents
        high = dims - 2.0 - extents
        if np.all(low <= high):
            center = tuple(float(c) for c in rng.uniform(low, high))
            return ShapeSpec(center, spec.radii, spec.rotation, spec.bump_amplitude, spec.bump_frequency)
        if scale < 0.05:
            raise ShapeOutOfBoundsError(f"grid {shape.array_shape} is too small for a shape with margin")
        scale *= 0.9


def sample_seed(rng_seed: int, index: int) -> int:
    """Per-sample seed derived from the dataset seed"""
    return int(np.random.SeedSequence([rng_seed, index]).generate_state(1)[0])


def _build_and_write(job) -> dict:
    index, sample_id, shape, noise_level, rng_seed, out_dir, previews = job
    seed = sample_seed(rng_seed, index)
    spec = random_shape_spec(shape, np.random.default_rng(seed))
    sample = generate_sample(spec, shape, noise_level, seed, sample_id=sample_id)

    dm = DataManager(out_dir)
    for kind, grid in (('image', sample.volume), ('mask', sample.mask), ('sdm', sample.sdm)):
        save_volume(grid, dm.volume_path(sample_id, kind), kind=kind, volume_id=sample_id)
        if previews:
            save_slice_preview(grid, Path(out_dir) / 'previews' / f"{sample_id}.{kind}.png", kind=kind)
    return spec.to_dict()


def make_dataset(count: int, shape: VolumeShape, split: Tuple[int, int, int], rng_seed: int,
                 out_dir, noise_level: float = DEFAULT_NOISE, workers: int = 1,
                 previews: bool = False) -> DatasetSplit:
    """
    Generate and write a synthetic dataset

    Args:
        count: Number of volumes
        shape: Grid size of every volume
        split: (labeled, unlabeled, val) counts summing to ``count``
        rng_seed: Dataset seed; geometry, noise and split follow from it
        out_dir: Dataset directory
        noise_level: Gaussian noise standard deviation
        workers: Worker processes for sample generation
        previews: Also write PNG slice previews

    Returns:
        DatasetSplit: The written split
    """
    n_labeled, n_unlabeled, n_val = (int(v) for v in split)
    if min(n_labeled, n_unlabeled, n_val) < 0 or n_labeled + n_unlabeled + n_val != count:
        raise ValidationError(f"invalid split {split}: counts must be non-negative and sum to {count}")
    if n_labeled < 1:
        raise ValidationError("invalid split: at least one labeled volume is required")

    ids = [f"case_{i:04d}" for i in range(count)]
    jobs = [(i, sample_id, shape, noise_level, rng_seed, str(out_dir), previews)
            for i, sample_id in enumerate(ids)]

    logger.info("Generating %d volumes of shape %s into %s", count, shape.array_shape, out_dir)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            specs = list(pool.map(_build_and_write, jobs))
    else:
        specs = [_build_and_write(job) for job in jobs]

    order = np.random.default_rng(rng_seed).permutation(count)
    shuffled = [ids[i] for i in order]
    result = DatasetSplit(
        labeled_ids=sorted(shuffled[:n_labeled]),
        unlabeled_ids=sorted(shuffled[n_labeled:n_labeled + n_unlabeled]),
        val_ids=sorted(shuffled[n_labeled + n_unlabeled:]),
    )
    DataManager(out_dir).write_split(result, extra={
        'shape': list(shape.array_shape),
        'seed': rng_seed,
        'noise_level': noise_level,
        'specs': dict(zip(ids, specs)),
    })
    return result


def crop_offsets(grid_shape, crop: VolumeShape, rng: np.random.Generator) -> Tuple[int, int, int]:
    """Uniform crop origin; raises when the crop is larger than the grid"""
    target = crop.array_shape
    if any(c > g for c, g in zip(target, grid_shape)):
        raise ValidationError(f"crop {target} is larger than volume {tuple(grid_shape)}")
    return tuple(int(rng.integers(0, g - c + 1)) for c, g in zip(target, grid_shape))


def crop_grid(grid: np.ndarray, offsets, crop: VolumeShape) -> np.ndarray:
    d, h, w = offsets
    cd, ch, cw = crop.array_shape
    return grid[d:d + cd, h:h + ch, w:w + cw]


def random_crop(sample: Sample, crop: VolumeShape, rng: np.random.Generator) -> Sample:
    """
    Crop image, mask and SDM with one origin

    The SDM is recomputed from the cropped mask; distances near the cut planes
    change with the crop.
    """
    offsets = crop_offsets(sample.volume.shape, crop, rng)
    mask = np.ascontiguousarray(crop_grid(sample.mask, offsets, crop))
    return Sample(
        id=sample.id,
        volume=np.ascontiguousarray(crop_grid(sample.volume, offsets, crop)),
        mask=mask,
        sdm=sdm_target(mask).astype(np.float32),
    )


def flip(sample: Sample, axis: int) -> Sample:
    """Mirror all three grids along one axis"""
    if axis not in (0, 1, 2):
        raise ValidationError(f"axis must be 0, 1 or 2, got {axis}")
    return Sample(
        id=sample.id,
        volume=np.ascontiguousarray(np.flip(sample.volume, axis)),
        mask=np.ascontiguousarray(np.flip(sample.mask, axis)),
        sdm=np.ascontiguousarray(np.flip(sample.sdm, axis)),
    )


def random_flip(sample: Sample, axis: int, rng: np.random.Generator, p: float = 0.5) -> Sample:
    """Mirror along ``axis`` with probability ``p``"""
    return flip(sample, axis) if rng.random() < p else sample


def augment(sample: Sample, crop: VolumeShape, rng: np.random.Generator,
            flip_prob: float = 0.5) -> Sample:
    """Random crop followed by independent random flips on each axis"""
    out = random_crop(sample, crop, rng)
    for axis in range(3):
        out = random_flip(out, axis, rng, flip_prob)
    return out


def augment_image(volume: np.ndarray, crop: VolumeShape, rng: np.random.Generator,
                  flip_prob: float = 0.5) -> np.ndarray:
    """Image-only counterpart of ``augment`` for unlabeled volumes"""
    out = crop_grid(volume, crop_offsets(volume.shape, crop, rng), crop)
    for axis in range(3):
        if rng.random() < flip_prob:
            out = np.flip(out, axis)
    return np.ascontiguousarray(out)
