"""
Utility functions for sdmseg
"""
import logging
import platform
from datetime import datetime
from pathlib import Path

import numpy as np
from PIL import Image

from core.data_manager import write_json

logger = logging.getLogger(__name__)


def slugify(text: str) -> str:
    """
    Create a file-system friendly name from text

    Args:
        text: Input text

    Returns:
        str: Slugified text
    """
    text = text.lower()
    text = ''.join(c if c.isalnum() or c in '-_' else '-' for c in text)

    # Remove consecutive hyphens
    while '--' in text:
        text = text.replace('--', '-')

    return text.strip('-')


def to_uint8_slice(grid: np.ndarray, kind: str, axis: int = 0, index=None) -> np.ndarray:
    """
    Middle slice of a grid scaled to 0..255

    Images are min-max scaled, masks map {0,1} to {0,255}, SDMs map [-1,1]
    linearly to [0,255].
    """
    array = np.asarray(grid, dtype=np.float64)
    if index is None:
        index = array.shape[axis] // 2
    plane = np.take(array, index, axis=axis)

    if kind == 'mask':
        scaled = (plane > 0).astype(np.float64)
    elif kind == 'sdm':
        scaled = (np.clip(plane, -1.0, 1.0) + 1.0) / 2.0
    else:
        low, high = plane.min(), plane.max()
        scaled = (plane - low) / (high - low) if high > low else np.zeros_like(plane)
    return np.round(scaled * 255.0).astype(np.uint8)


def save_slice_preview(grid: np.ndarray, preview_path, kind: str = 'image', size: int = 256) -> bool:
    """
    Save a PNG preview of the middle depth slice

    Args:
        grid: 3D array in (d, h, w) order
        preview_path: Path to save the preview
        kind: image, mask or sdm
        size: Longest preview side in pixels

    Returns:
        bool: True if successful
    """
    try:
        Path(preview_path).parent.mkdir(parents=True, exist_ok=True)
        img = Image.fromarray(to_uint8_slice(grid, kind))

        # Nearest keeps voxel edges visible
        scale = max(1, size // max(img.size))
        img = img.resize((img.width * scale, img.height * scale), Image.Resampling.NEAREST)
        img.save(preview_path, 'PNG', optimize=True)
        return True
    except OSError as e:
        logger.warning("Error creating preview %s: %s", preview_path, e)
        return False


def write_run_echo(out_path, command: str, params: dict) -> Path:
    """
    Write the configuration echo of a command next to its outputs

    Args:
        out_path: Output directory, or an output file whose stem names the echo
        command: Command name
        params: Resolved parameters

    Returns:
        Path: Echo file path
    """
    target = Path(out_path)
    if target.suffix:
        echo = target.with_name(target.name.split('.')[0] + '.run.json')
    else:
        echo = target / f"{command}.run.json"
    write_json(echo, {
        'command': command,
        'params': params,
        'python': platform.python_version(),
        'created_at': datetime.now().isoformat(),
    })
    return echo
