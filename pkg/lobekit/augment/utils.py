"""
Array helpers for geometric augmentation.
"""

from typing import Sequence

import numpy as np
from scipy import ndimage

# coordinates this close to a grid point are snapped onto it
_SNAP = 1e-9


def shift_array(array: np.ndarray, offsets: Sequence[int], fill=0) -> np.ndarray:
    """
    Integer translation: out[p + offsets] = array[p]; vacated voxels get `fill`.
    """
    out = np.full_like(array, fill)
    src, dst = [], []
    for n, s in zip(array.shape, offsets):
        s = int(s)
        if abs(s) >= n:
            return out
        src.append(slice(max(0, -s), n - max(0, s)))
        dst.append(slice(max(0, s), n - max(0, -s)))
    out[tuple(dst)] = array[tuple(src)]
    return out


def rotation_grid(shape: Sequence[int], angle_deg: float) -> np.ndarray:
    """
    Source coordinates (2, Y, X) for rotating a slice about its center.

    With (dy, dx) the output offset from the center, the sample is taken at
    (cy + cos*dy - sin*dx, cx + sin*dy + cos*dx). At 90 degrees this is
    out[y, x] = in[n - 1 - x, y] on an n x n slice, i.e. numpy.rot90(k=-1).
    """
    ny, nx = shape
    cy, cx = (ny - 1) / 2.0, (nx - 1) / 2.0
    theta = np.radians(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    yy, xx = np.mgrid[0:ny, 0:nx].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    coords = np.stack([cy + cos_t * dy - sin_t * dx, cx + sin_t * dy + cos_t * dx])
    nearest = np.rint(coords)
    return np.where(np.abs(coords - nearest) < _SNAP, nearest, coords)


def rotate_slices(array: np.ndarray, angle_deg: float, order: int) -> np.ndarray:
    """
    Rotate every z slice of a (Z, Y, X) array about its center.

    order 1 is bilinear (intensities), order 0 nearest neighbour (labels);
    samples falling outside the slice read 0.
    """
    coords = rotation_grid(array.shape[1:], angle_deg)
    out = np.empty_like(array)
    for z in range(array.shape[0]):
        out[z] = ndimage.map_coordinates(array[z], coords, order=order, mode='constant', cval=0)
    return out
