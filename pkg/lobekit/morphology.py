"""
Binary morphology, hole filling, connected components and convex hulls.

All "_2d" operations act on each z slice independently; 3D masks are accepted
and processed slice by slice.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage
from shapely.geometry import MultiPoint
from shapely.geometry.polygon import orient

from .constants import MIN_COMPONENT_FRACTION
from .errors import InvalidConfig, NoLungCandidate

logger = logging.getLogger(__name__)

# 26-connectivity in 3D
FULL_CONNECTIVITY_3D = np.ones((3, 3, 3), dtype=bool)

# 4-connectivity in the slice plane, nothing across slices
_PLANAR_CROSS = np.zeros((1, 3, 3), dtype=bool)
_PLANAR_CROSS[0, 1, :] = True
_PLANAR_CROSS[0, :, 1] = True


@dataclass(frozen=True, eq=False)
class StructuringElement:
    """
    2D boolean stencil anchored at its geometric center.

    Attributes:
        shape: 2D boolean array with odd side lengths
    """
    shape: np.ndarray

    def __post_init__(self):
        stencil = np.asarray(self.shape, dtype=bool)
        if stencil.ndim != 2 or any(n % 2 == 0 for n in stencil.shape):
            raise InvalidConfig(f"structuring element must be 2D with odd sides, got {stencil.shape}")
        object.__setattr__(self, 'shape', stencil)

    @classmethod
    def square(cls, size: int) -> 'StructuringElement':
        return cls(np.ones((size, size), dtype=bool))

    @property
    def anchor(self):
        return tuple(n // 2 for n in self.shape.shape)

    def as_planar(self) -> np.ndarray:
        """The stencil lifted to a (1, h, w) 3D structure."""
        return self.shape[np.newaxis]


def _as_stack(mask: np.ndarray):
    """View a 2D slice as a one-slice stack; returns (stack, was_2d)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 2:
        return mask[np.newaxis], True
    if mask.ndim != 3:
        raise ValueError(f"expected a 2D slice or 3D stack, got shape {mask.shape}")
    return mask, False


def _restore(stack: np.ndarray, was_2d: bool) -> np.ndarray:
    return stack[0] if was_2d else stack


def dilate_2d(mask: np.ndarray, kernel: StructuringElement) -> np.ndarray:
    """
    Per-slice Minkowski dilation; pixels outside the image count as 0.
    """
    stack, was_2d = _as_stack(mask)
    out = ndimage.binary_dilation(stack, structure=kernel.as_planar(), border_value=0)
    return _restore(out, was_2d)


def erode_2d(mask: np.ndarray, kernel: StructuringElement) -> np.ndarray:
    """
    Per-slice erosion; pixels outside the image count as 0, so foreground
    touching the border shrinks.
    """
    stack, was_2d = _as_stack(mask)
    out = ndimage.binary_erosion(stack, structure=kernel.as_planar(), border_value=0)
    return _restore(out, was_2d)


def binary_close_2d(mask: np.ndarray, kernel: StructuringElement) -> np.ndarray:
    """Per-slice closing: dilation by `kernel`, then erosion by `kernel`."""
    return erode_2d(dilate_2d(mask, kernel), kernel)


def fill_holes_2d(mask: np.ndarray) -> np.ndarray:
    """
    Per slice, set every background 4-connected region that cannot reach the
    slice border to foreground.
    """
    stack, was_2d = _as_stack(mask)
    out = np.empty_like(stack)
    for z in range(stack.shape[0]):
        out[z] = ndimage.binary_fill_holes(stack[z], structure=_PLANAR_CROSS[0])
    return _restore(out, was_2d)


def convex_hull_slice(mask: np.ndarray) -> np.ndarray:
    """
    Filled convex hull of the foreground pixels of one slice.

    Pixel (y, x) is filled when its center lies in the hull polygon of the
    foreground pixel centers (closed half-plane test, exact integer arithmetic).

    Args:
        mask: 2D boolean slice

    Returns:
        2D boolean slice, empty when the input is empty
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2D slice, got shape {mask.shape}")
    out = np.zeros_like(mask)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return out

    hull = MultiPoint(np.column_stack([xs, ys]).astype(float)).convex_hull
    y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
    gy, gx = np.mgrid[y0:y1, x0:x1]
    gy = gy.astype(np.int64)
    gx = gx.astype(np.int64)

    if hull.geom_type == 'Point':
        out[ys[0], xs[0]] = True
        return out

    if hull.geom_type == 'LineString':
        (ax, ay), (bx, by) = [tuple(int(round(c)) for c in p) for p in (hull.coords[0], hull.coords[-1])]
        on_line = (bx - ax) * (gy - ay) - (by - ay) * (gx - ax) == 0
        out[y0:y1, x0:x1] = on_line
        return out

    ring = np.rint(np.asarray(orient(hull, sign=1.0).exterior.coords)).astype(np.int64)
    inside = np.ones(gy.shape, dtype=bool)
    for (ax, ay), (bx, by) in zip(ring[:-1], ring[1:]):
        inside &= (bx - ax) * (gy - ay) - (by - ay) * (gx - ax) >= 0
    out[y0:y1, x0:x1] = inside
    return out


def convex_hull_2d(mask: np.ndarray) -> np.ndarray:
    """Apply convex_hull_slice to every z slice of a stack."""
    stack, was_2d = _as_stack(mask)
    out = np.zeros_like(stack)
    for z in range(stack.shape[0]):
        if stack[z].any():
            out[z] = convex_hull_slice(stack[z])
    return _restore(out, was_2d)


def _border_labels(labels: np.ndarray, count: int) -> np.ndarray:
    """Flags per label: True where the component reaches an x/y face. Label 0 is flagged."""
    border = np.zeros(count + 1, dtype=bool)
    for face in (labels[:, 0, :], labels[:, -1, :], labels[:, :, 0], labels[:, :, -1]):
        border[np.unique(face)] = True
    border[0] = True
    return border


def drop_border_components(mask: np.ndarray) -> np.ndarray:
    """
    Remove every 26-connected component that touches the x/y border.

    Must run before closing, which pulls exterior air off the border.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ValueError(f"expected a 3D mask, got shape {mask.shape}")
    labels, count = ndimage.label(mask, structure=FULL_CONNECTIVITY_3D)
    border = _border_labels(labels, count)
    return mask & ~border[labels]


def select_lung_components(
    mask: np.ndarray,
    min_component_voxels: Optional[int] = None,
    max_components: int = 2,
) -> np.ndarray:
    """
    Keep the lung candidates of a binarized volume.

    A 26-connected component survives when it does not touch the x/y border of
    the volume and holds at least `min_component_voxels` voxels; of those, the
    `max_components` largest are kept (ties go to the lower component label).

    Args:
        mask: 3D boolean volume
        min_component_voxels: Size floor; defaults to 0.1% of the voxel count
        max_components: How many of the largest survivors to keep

    Raises:
        NoLungCandidate: when nothing survives the filters
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ValueError(f"expected a 3D mask, got shape {mask.shape}")
    if min_component_voxels is None:
        min_component_voxels = max(1, int(round(mask.size * MIN_COMPONENT_FRACTION)))
    if not mask.any():
        raise NoLungCandidate("binarized volume is empty")

    labels, count = ndimage.label(mask, structure=FULL_CONNECTIVITY_3D)
    sizes = np.bincount(labels.ravel(), minlength=count + 1)

    border = _border_labels(labels, count)

    candidates = [
        lab for lab in range(1, count + 1)
        if not border[lab] and sizes[lab] >= min_component_voxels
    ]
    if not candidates:
        raise NoLungCandidate(
            f"no interior component of at least {min_component_voxels} voxels "
            f"among {count} components"
        )
    candidates.sort(key=lambda lab: (-sizes[lab], lab))
    keep = candidates[:max_components]
    logger.debug(
        "selected lung components",
        extra={'components': count, 'kept_sizes': [int(sizes[k]) for k in keep]},
    )
    return np.isin(labels, keep)
