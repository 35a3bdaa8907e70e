"""
Data Manager for sdmseg
Dataset directory manager: split manifest, volume lookup and sample loading
with thread-safe JSON writes
"""
import json
import shutil
from datetime import datetime
from pathlib import Path
from threading import Lock
from typing import Any, Dict, List, Optional

from werkzeug.utils import secure_filename

from core.errors import MissingVolumeError, ValidationError
from core.models import DatasetSplit, Sample
from core.volume_io import load_volume, volume_files

MANIFEST_NAME = 'split.json'


def write_json(path, data: Dict[str, Any]):
    """
    Write JSON atomically

    Args:
        path: Target file
        data: JSON-serialisable mapping
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)

    # Write to temporary file first (atomic write)
    temp_file = target.with_name(target.name + '.tmp')
    with open(temp_file, 'w', encoding='utf-8') as f:
        json.dump(data, f, ensure_ascii=False, indent=2)

    shutil.move(str(temp_file), str(target))


def read_json(path) -> Dict[str, Any]:
    """Read a JSON document, raising ValidationError on bad content"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON ({e})") from e


class DataManager:
    """
    Dataset directory with a split manifest and per-id volume files

    Layout: ``<root>/split.json`` plus ``<root>/volumes/<id>.<kind>.{json,raw}``
    for kind in image, mask, sdm.
    """

    def __init__(self, root_dir):
        """
        Initialize DataManager

        Args:
            root_dir: Dataset directory, or the path of its split manifest
        """
        root = Path(root_dir)
        if root.suffix == '.json':
            self.manifest_file = root
            self.root_dir = root.parent
        else:
            self.root_dir = root
            self.manifest_file = root / MANIFEST_NAME
        self.volume_dir = self.root_dir / 'volumes'
        self.lock = Lock()
        self._split: Optional[DatasetSplit] = None

    # Manifest

    def write_split(self, split: DatasetSplit, extra: Optional[Dict[str, Any]] = None):
        """
        Write the split manifest (thread-safe)

        Args:
            split: Split to store
            extra: Additional metadata (shape, seed, generator settings)
        """
        document = {
            'split': split.to_dict(),
            'created_at': datetime.now().isoformat(),
        }
        if extra:
            document.update(extra)
        with self.lock:
            write_json(self.manifest_file, document)
            self._split = split

    def read_manifest(self) -> Dict[str, Any]:
        if not self.manifest_file.exists():
            raise MissingVolumeError(f"split manifest not found: {self.manifest_file}")
        with self.lock:
            return read_json(self.manifest_file)

    @property
    def split(self) -> DatasetSplit:
        if self._split is None:
            self._split = DatasetSplit.from_dict(self.read_manifest().get('split', {}))
        return self._split

    # Volumes

    def volume_path(self, volume_id: str, kind: str) -> Path:
        """Base path (no suffix) of one volume file"""
        return self.volume_dir / f"{secure_filename(volume_id)}.{kind}"

    def has_volume(self, volume_id: str, kind: str) -> bool:
        return all(p.exists() for p in volume_files(self.volume_path(volume_id, kind)))

    def load(self, volume_id: str, kind: str):
        """
        Load one grid

        Raises:
            MissingVolumeError: header or payload file absent
        """
        if not self.has_volume(volume_id, kind):
            raise MissingVolumeError(f"{volume_id}: missing {kind} volume under {self.volume_dir}")
        return load_volume(self.volume_path(volume_id, kind)).voxels

    def load_sample(self, volume_id: str) -> Sample:
        """Load image, mask and SDM of one labeled volume"""
        return Sample(
            id=volume_id,
            volume=self.load(volume_id, 'image'),
            mask=self.load(volume_id, 'mask'),
            sdm=self.load(volume_id, 'sdm'),
        )

    def missing_files(self, ids: List[str], kinds=('image', 'mask')) -> Dict[str, List[str]]:
        """
        Report absent volume files per id

        Returns:
            Dict[str, List[str]]: id -> missing kinds (ids with nothing missing are omitted)
        """
        report = {}
        for volume_id in ids:
            missing = [kind for kind in kinds if not self.has_volume(volume_id, kind)]
            if missing:
                report[volume_id] = missing
        return report
