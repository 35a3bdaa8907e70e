"""
Domain records for sdmseg
Volume shapes, samples, dataset splits and report rows with dict conversion
"""
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Tuple

import numpy as np

from core.errors import ValidationError

MAX_BUMP_AMPLITUDE = 0.3
MAX_BUMP_FREQUENCY = 4


@dataclass(frozen=True)
class VolumeShape:
    """
    Grid dimensions in voxels

    Arrays are stored depth-major, so ``array_shape`` is (depth, height, width).
    """

    height: int
    width: int
    depth: int

    def __post_init__(self):
        for name in ('height', 'width', 'depth'):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValidationError(f"invalid-shape: {name} must be a positive integer, got {value}")

    @classmethod
    def from_dhw(cls, dhw) -> 'VolumeShape':
        d, h, w = (int(v) for v in dhw)
        return cls(height=h, width=w, depth=d)

    @classmethod
    def of(cls, array: np.ndarray) -> 'VolumeShape':
        if array.ndim != 3:
            raise ValidationError(f"expected a 3D grid, got {array.ndim} dimensions")
        return cls.from_dhw(array.shape)

    @property
    def array_shape(self) -> Tuple[int, int, int]:
        return (self.depth, self.height, self.width)

    @property
    def size(self) -> int:
        return self.depth * self.height * self.width

    def fits_in(self, other: 'VolumeShape') -> bool:
        return all(a <= b for a, b in zip(self.array_shape, other.array_shape))


@dataclass
class SignedDistanceMap:
    """
    Signed distance grid

    Negative strictly inside the object, positive outside, zero on boundary
    voxels. ``degenerate`` marks constant maps built from empty or full masks.
    """

    voxels: np.ndarray
    normalized: bool = False
    degenerate: bool = False

    @property
    def shape(self) -> VolumeShape:
        return VolumeShape.of(self.voxels)


@dataclass
class ShapeSpec:
    """Bumped, rotated ellipsoid; center and radii in (d, h, w) voxel order"""

    center: Tuple[float, float, float]
    radii: Tuple[float, float, float]
    rotation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    bump_amplitude: float = 0.0
    bump_frequency: int = 1

    def __post_init__(self):
        if len(self.center) != 3 or len(self.radii) != 3 or len(self.rotation) != 3:
            raise ValidationError("center, radii and rotation must be triples")
        if min(self.radii) < 2:
            raise ValidationError(f"radii must be at least 2 voxels, got {self.radii}")
        if not 0 <= self.bump_amplitude <= MAX_BUMP_AMPLITUDE:
            raise ValidationError(f"bump_amplitude must lie in [0, {MAX_BUMP_AMPLITUDE}], got {self.bump_amplitude}")
        if (int(self.bump_frequency) != self.bump_frequency
                or not 1 <= self.bump_frequency <= MAX_BUMP_FREQUENCY):
            raise ValidationError(
                f"bump_frequency must be an integer in [1, {MAX_BUMP_FREQUENCY}], got {self.bump_frequency}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Sample:
    """Image, label mask and normalized ground-truth SDM sharing one grid"""

    id: str
    volume: np.ndarray
    mask: np.ndarray
    sdm: np.ndarray

    def __post_init__(self):
        if not (self.volume.shape == self.mask.shape == self.sdm.shape):
            raise ValidationError(
                f"sample {self.id}: grids differ in shape "
                f"{self.volume.shape}, {self.mask.shape}, {self.sdm.shape}"
            )

    @property
    def shape(self) -> VolumeShape:
        return VolumeShape.of(self.volume)


@dataclass
class DatasetSplit:
    """Labeled, unlabeled and validation id lists"""

    labeled_ids: List[str]
    unlabeled_ids: List[str]
    val_ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.labeled_ids:
            raise ValidationError("a split needs at least one labeled volume")
        groups = [set(self.labeled_ids), set(self.unlabeled_ids), set(self.val_ids)]
        total = len(self.labeled_ids) + len(self.unlabeled_ids) + len(self.val_ids)
        if len(groups[0] | groups[1] | groups[2]) != total:
            raise ValidationError("labeled, unlabeled and val ids must be pairwise disjoint and unique")

    @property
    def all_ids(self) -> List[str]:
        return self.labeled_ids + self.unlabeled_ids + self.val_ids

    def to_dict(self) -> dict:
        return {
            'labeled': list(self.labeled_ids),
            'unlabeled': list(self.unlabeled_ids),
            'val': list(self.val_ids),
        }

    @staticmethod
    def from_dict(data: dict) -> 'DatasetSplit':
        try:
            return DatasetSplit(
                labeled_ids=list(data['labeled']),
                unlabeled_ids=list(data.get('unlabeled', [])),
                val_ids=list(data.get('val', [])),
            )
        except KeyError as exc:
            raise ValidationError(f"split manifest is missing {exc}") from exc


@dataclass
class MetricsReport:
    """Per-volume metrics; surface metrics are None when undefined"""

    id: str
    dice: float
    jaccard: float
    asd: Optional[float]
    hd95: Optional[float]
    nms_applied: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class IterationLog:
    """One training iteration as written to the log stream"""

    t: int
    dice: float
    sdm_mse: float
    adversarial: float
    seg_loss: float
    disc_loss: float
    beta: float
    lr: float
    wall_time: float

    def to_dict(self) -> dict:
        record = asdict(self)
        record['kind'] = 'iteration'
        return record
