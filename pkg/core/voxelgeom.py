"""
Volumetric geometry for sdmseg
Exact Euclidean distance transforms, signed distance maps, boundary
extraction and connected components on dense 3D grids
"""
import math
from typing import Tuple

import numpy as np
from scipy import ndimage

from core.errors import NoForegroundError, ValidationError
from core.models import SignedDistanceMap

# scipy structuring-element rank for each neighbourhood size
CONNECTIVITY_RANK = {6: 1, 18: 2, 26: 3}

NMS_CONNECTIVITY = 26


def _as_mask(mask) -> np.ndarray:
    array = np.asarray(mask)
    if array.ndim != 3:
        raise ValidationError(f"expected a 3D mask, got {array.ndim} dimensions")
    return array.astype(bool, copy=False)


def _lower_envelope(f: np.ndarray) -> np.ndarray:
    """
    One-dimensional squared distance transform of a sampled function

    Computes d(q) = min_p ((q - p)^2 + f(p)) by building the lower envelope of
    the parabolas rooted at every finite sample.

    Args:
        f: Squared distances along one line; ``inf`` where no site exists

    Returns:
        np.ndarray: Transformed line (all ``inf`` when the line has no site)
    """
    n = f.shape[0]
    sites = np.flatnonzero(np.isfinite(f))
    if sites.size == 0:
        return f.copy()

    v = np.zeros(sites.size, dtype=np.int64)
    z = np.empty(sites.size + 1, dtype=np.float64)
    k = 0
    v[0] = sites[0]
    z[0] = -math.inf
    z[1] = math.inf
    for q in sites[1:]:
        fq = f[q] + q * q
        while True:
            p = v[k]
            s = (fq - (f[p] + p * p)) / (2.0 * (q - p))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = math.inf

    out = np.empty(n, dtype=np.float64)
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        out[q] = (q - p) * (q - p) + f[p]
    return out


def squared_edt(mask) -> np.ndarray:
    """Squared distance from each voxel to the nearest foreground voxel"""
    grid = _as_mask(mask)
    dist = np.where(grid, 0.0, np.inf)
    for axis in range(3):
        moved = np.moveaxis(dist, axis, -1)
        lines = moved.reshape(-1, moved.shape[-1])
        result = np.empty_like(lines)
        for i, line in enumerate(lines):
            result[i] = _lower_envelope(line)
        dist = np.moveaxis(result.reshape(moved.shape), -1, axis)
    return np.ascontiguousarray(dist)


def exact_edt(mask) -> np.ndarray:
    """
    Exact Euclidean distance transform

    Args:
        mask: 3D binary grid; the query set is its foreground

    Returns:
        np.ndarray: float64 distances in voxels, 0 on the foreground

    Raises:
        NoForegroundError: mask has no foreground voxel
    """
    grid = _as_mask(mask)
    if not grid.any():
        raise NoForegroundError("exact_edt needs at least one foreground voxel")
    return np.sqrt(squared_edt(grid))


def boundary_mask(mask) -> np.ndarray:
    """Foreground voxels with at least one background 6-neighbour"""
    grid = _as_mask(mask)
    structure = ndimage.generate_binary_structure(3, 1)
    # outside the volume counts as foreground: cropped objects get no boundary on cut planes
    eroded = ndimage.binary_erosion(grid, structure=structure, border_value=1)
    return grid & ~eroded


def boundary_voxels(mask) -> np.ndarray:
    """
    Surface voxel coordinates

    Returns:
        np.ndarray: (K, 3) integer (d, h, w) triples in raster order
    """
    return np.argwhere(boundary_mask(mask))


def signed_distance_map(mask) -> SignedDistanceMap:
    """
    Raw signed distance map

    Distance of every voxel to the boundary voxel set, negative for interior
    foreground, positive for background and zero on the boundary. Empty masks
    give a constant +1 map and full masks a constant -1 map, both flagged
    degenerate.
    """
    grid = _as_mask(mask)
    boundary = boundary_mask(grid)
    if not boundary.any():
        value = -1.0 if grid.any() else 1.0
        return SignedDistanceMap(np.full(grid.shape, value), normalized=False, degenerate=True)

    dist = exact_edt(boundary)
    raw = np.where(grid, -dist, dist)
    raw[boundary] = 0.0
    return SignedDistanceMap(raw, normalized=False)


def normalize_sdm(raw: SignedDistanceMap) -> SignedDistanceMap:
    """
    Scale each sign of a signed distance map independently into [-1, 1]

    Positive values are divided by the largest positive value and negative
    values by the magnitude of the most negative one; a sign with no values is
    left as is.
    """
    values = np.asarray(raw.voxels, dtype=np.float64)
    out = values.copy()
    positive = values > 0
    negative = values < 0
    if positive.any():
        out[positive] = values[positive] / values[positive].max()
    if negative.any():
        out[negative] = values[negative] / -values[negative].min()
    return SignedDistanceMap(out, normalized=True, degenerate=raw.degenerate)


def sdm_target(mask) -> np.ndarray:
    """Normalized SDM grid for a label mask"""
    return normalize_sdm(signed_distance_map(mask)).voxels


def connected_components(mask, connectivity: int = NMS_CONNECTIVITY) -> Tuple[np.ndarray, np.ndarray]:
    """
    Label connected foreground components

    Component ids start at 1 and follow the raster order of each component's
    first voxel; background is 0.

    Args:
        mask: 3D binary grid
        connectivity: 6, 18 or 26

    Returns:
        Tuple[np.ndarray, np.ndarray]: label grid and sizes (sizes[i] is the
        voxel count of component i + 1)
    """
    if connectivity not in CONNECTIVITY_RANK:
        raise ValidationError(f"connectivity must be one of 6, 18, 26, got {connectivity}")
    grid = _as_mask(mask)
    structure = ndimage.generate_binary_structure(3, CONNECTIVITY_RANK[connectivity])
    labels, count = ndimage.label(grid, structure=structure)
    if count == 0:
        return labels.astype(np.int32), np.zeros(0, dtype=np.int64)

    # relabel by first occurrence in raster order
    flat = labels.ravel()
    ids, first = np.unique(flat, return_index=True)
    order = ids[1:][np.argsort(first[1:], kind='stable')]
    lookup = np.zeros(count + 1, dtype=np.int32)
    lookup[order] = np.arange(1, count + 1, dtype=np.int32)
    relabeled = lookup[labels]
    sizes = np.bincount(relabeled.ravel(), minlength=count + 1)[1:]
    return relabeled, sizes


def largest_component(mask) -> np.ndarray:
    """Keep only the largest 26-connected component (lowest id on ties)"""
    grid = _as_mask(mask)
    labels, sizes = connected_components(grid, NMS_CONNECTIVITY)
    if sizes.size == 0:
        return np.zeros(grid.shape, dtype=np.uint8)
    keep = int(np.argmax(sizes)) + 1
    return (labels == keep).astype(np.uint8)
