"""
Volume file format for sdmseg

A volume is a JSON sidecar header (``<name>.json``) next to a raw
little-endian payload (``<name>.raw``) stored depth-major (d, h, w).
"""
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from core.errors import VolumeFormatError

FORMAT_VERSION = 1

DTYPES = {
    'uint8': np.dtype('<u1'),
    'float32': np.dtype('<f4'),
}

KIND_DTYPES = {
    'image': 'float32',
    'mask': 'uint8',
    'sdm': 'float32',
}


@dataclass
class VolumeRecord:
    """A loaded grid with its header identity"""

    id: str
    kind: str
    voxels: np.ndarray


def volume_files(path: Union[str, Path]):
    """Header and payload paths for a base path (or for either file)"""
    base = Path(path)
    if base.suffix in ('.json', '.raw'):
        base = base.with_suffix('')
    return base.with_name(base.name + '.json'), base.with_name(base.name + '.raw')


def _atomic_write_bytes(target: Path, payload: bytes):
    temp = target.with_name(target.name + '.tmp')
    with open(temp, 'wb') as f:
        f.write(payload)
    os.replace(temp, target)


def save_volume(voxels: np.ndarray, path: Union[str, Path], kind: str, volume_id: str = '') -> Path:
    """
    Write a grid as header + payload

    Args:
        voxels: 3D array in (d, h, w) order
        path: Base path; ``.json`` and ``.raw`` are appended
        kind: image, mask or sdm
        volume_id: Identifier stored in the header

    Returns:
        Path: Header path
    """
    if kind not in KIND_DTYPES:
        raise VolumeFormatError(path, 'unknown-kind', kind)
    array = np.asarray(voxels)
    if array.ndim != 3 or min(array.shape) < 1:
        raise VolumeFormatError(path, 'invalid-shape', str(array.shape))

    dtype_name = KIND_DTYPES[kind]
    header_path, payload_path = volume_files(path)
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        'format_version': FORMAT_VERSION,
        'id': volume_id or header_path.stem,
        'shape': [int(s) for s in array.shape],
        'dtype': dtype_name,
        'order': 'dhw',
        'kind': kind,
    }

    payload = np.ascontiguousarray(array.astype(DTYPES[dtype_name])).tobytes()
    _atomic_write_bytes(payload_path, payload)
    _atomic_write_bytes(header_path, json.dumps(header, indent=2).encode('utf-8'))
    return header_path


def read_header(path: Union[str, Path]) -> dict:
    """Parse and check a volume header"""
    header_path, _ = volume_files(path)
    try:
        with open(header_path, 'r', encoding='utf-8') as f:
            header = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise VolumeFormatError(header_path, 'malformed-header', str(e)) from e

    if not isinstance(header, dict):
        raise VolumeFormatError(header_path, 'malformed-header', 'header is not an object')
    for key in ('shape', 'dtype', 'order', 'kind'):
        if key not in header:
            raise VolumeFormatError(header_path, 'malformed-header', f"missing field {key!r}")

    shape = header['shape']
    if (not isinstance(shape, list) or len(shape) != 3
            or not all(isinstance(s, int) and not isinstance(s, bool) for s in shape)):
        raise VolumeFormatError(header_path, 'malformed-header', f"shape must be three integers, got {shape!r}")
    if min(shape) < 1:
        raise VolumeFormatError(header_path, 'invalid-shape', str(shape))
    if header['dtype'] not in DTYPES:
        raise VolumeFormatError(header_path, 'unknown-element-type', str(header['dtype']))
    if header['order'] != 'dhw':
        raise VolumeFormatError(header_path, 'unsupported-order', str(header['order']))
    if header['kind'] not in KIND_DTYPES:
        raise VolumeFormatError(header_path, 'unknown-kind', str(header['kind']))
    return header


def load_volume(path: Union[str, Path]) -> VolumeRecord:
    """
    Read a grid written by ``save_volume``

    Raises:
        VolumeFormatError: malformed header, invalid shape, unknown element
            type or payload size mismatch
        FileNotFoundError: header or payload missing
    """
    header_path, payload_path = volume_files(path)
    header = read_header(header_path)
    dtype = DTYPES[header['dtype']]
    shape = tuple(header['shape'])

    payload = payload_path.read_bytes()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise VolumeFormatError(payload_path, 'size-mismatch', f"expected {expected} bytes, found {len(payload)}")

    voxels = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return VolumeRecord(id=header.get('id', header_path.stem), kind=header['kind'], voxels=voxels)
