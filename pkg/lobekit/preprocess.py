"""
Lung convex-hull cropping of CT volumes.

Pipeline: HU truncation -> OTSU -> binarize -> drop border air -> close ->
hole fill -> lung component selection -> per-slice convex hull -> dilation ->
crop to the bounding box of the dilated hull.
"""

import logging
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, NamedTuple, Optional

import numpy as np

from .constants import (
    CLOSE_KERNEL_SIZE,
    DILATE_KERNEL_SIZE,
    HU_MAX,
    HU_MIN,
    MAX_LUNG_COMPONENTS,
    OTSU_BINS,
)
from .errors import DegenerateHistogram, InvalidConfig, NoLungCandidate
from .morphology import (
    StructuringElement,
    binary_close_2d,
    convex_hull_2d,
    dilate_2d,
    drop_border_components,
    fill_holes_2d,
    select_lung_components,
)
from .volume_io import BinaryMask, CropRegion, Volume, crop, hu_normalize

logger = logging.getLogger(__name__)


@dataclass
class PreprocessConfig:
    """
    Parameters of the lung cropping pipeline.

    Attributes:
        hu_lo: Lower end of the HU window
        hu_hi: Upper end of the HU window
        close_kernel_size: Side of the square closing kernel (odd)
        dilate_kernel_size: Side of the square hull dilation kernel (odd)
        min_component_voxels: Lung component size floor; None = 0.1% of voxels
        max_components: Number of largest components kept
        otsu_bins: Histogram bins for OTSU
    """
    hu_lo: float = HU_MIN
    hu_hi: float = HU_MAX
    close_kernel_size: int = CLOSE_KERNEL_SIZE
    dilate_kernel_size: int = DILATE_KERNEL_SIZE
    min_component_voxels: Optional[int] = None
    max_components: int = MAX_LUNG_COMPONENTS
    otsu_bins: int = OTSU_BINS

    def validate(self) -> None:
        if not self.hu_lo < self.hu_hi:
            raise InvalidConfig(f"hu_lo ({self.hu_lo}) must be below hu_hi ({self.hu_hi})")
        for name in ('close_kernel_size', 'dilate_kernel_size'):
            size = getattr(self, name)
            if size < 1 or size % 2 == 0:
                raise InvalidConfig(f"{name} must be a positive odd integer, got {size}")
        if self.min_component_voxels is not None and self.min_component_voxels < 1:
            raise InvalidConfig("min_component_voxels must be positive")
        if self.max_components < 1:
            raise InvalidConfig("max_components must be at least 1")
        if self.otsu_bins < 2:
            raise InvalidConfig("otsu_bins must be at least 2")

    @property
    def close_kernel(self) -> StructuringElement:
        return StructuringElement.square(self.close_kernel_size)

    @property
    def dilate_kernel(self) -> StructuringElement:
        return StructuringElement.square(self.dilate_kernel_size)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'PreprocessConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidConfig(f"unknown preprocess keys: {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg


class LungCrop(NamedTuple):
    """Result of lung_crop_pipeline."""
    volume: Volume  # normalized, cropped
    region: CropRegion
    hull: BinaryMask  # dilated hull mask at full size


def otsu_threshold(volume: Volume, bins: int = OTSU_BINS) -> float:
    """
    OTSU threshold of a normalized volume.

    Candidate thresholds are the interior bin edges of a `bins`-bin histogram
    over [0, 1]; class means use bin centers. Returns the edge maximizing the
    between-class variance w0 * w1 * (mu0 - mu1)^2, the lowest one on ties.

    Raises:
        DegenerateHistogram: fewer than two non-empty bins
    """
    values = np.asarray(volume.data, dtype=np.float64).ravel()
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    if np.count_nonzero(counts) < 2:
        raise DegenerateHistogram("all voxels fall into a single histogram bin")

    counts = counts.astype(np.float64)
    centers = (edges[:-1] + edges[1:]) / 2.0
    total = counts.sum()

    # class 0 = bins [0, t), class 1 = bins [t, bins) for t = 1..bins-1
    n0 = np.cumsum(counts)[:-1]
    s0 = np.cumsum(counts * centers)[:-1]
    n1 = total - n0
    s1 = (counts * centers).sum() - s0
    valid = (n0 > 0) & (n1 > 0)
    mu0 = np.divide(s0, n0, out=np.zeros_like(s0), where=valid)
    mu1 = np.divide(s1, n1, out=np.zeros_like(s1), where=valid)
    between = np.where(valid, (n0 / total) * (n1 / total) * (mu0 - mu1) ** 2, -1.0)

    t = int(np.argmax(between)) + 1
    return float(edges[t])


def binarize(volume: Volume, threshold: float) -> BinaryMask:
    """Foreground = voxels darker than the threshold (air and lungs)."""
    return BinaryMask(np.asarray(volume.data) < threshold, volume.spacing, volume.origin)


def bounding_region(mask: np.ndarray) -> CropRegion:
    """Tight bounding box of the nonzero voxels of a 3D mask."""
    nz = np.nonzero(mask)
    if nz[0].size == 0:
        raise NoLungCandidate("cannot bound an empty mask")
    return CropRegion(tuple(int(a.min()) for a in nz), tuple(int(a.max()) + 1 for a in nz))


def lung_mask(volume_hu: Volume, cfg: Optional[PreprocessConfig] = None) -> np.ndarray:
    """Selected lung components of a raw CT volume (before the hull)."""
    cfg = cfg or PreprocessConfig()
    return _select_lungs(hu_normalize(volume_hu, cfg.hu_lo, cfg.hu_hi), cfg)


def _select_lungs(normalized: Volume, cfg: PreprocessConfig) -> np.ndarray:
    threshold = otsu_threshold(normalized, cfg.otsu_bins)
    mask = drop_border_components(binarize(normalized, threshold).data)
    mask = binary_close_2d(mask, cfg.close_kernel)
    mask = fill_holes_2d(mask)
    mask = select_lung_components(mask, cfg.min_component_voxels, cfg.max_components)
    logger.debug("lung mask", extra={'threshold': threshold, 'voxels': int(mask.sum())})
    return mask


def lung_crop_pipeline(volume_hu: Volume, cfg: Optional[PreprocessConfig] = None) -> LungCrop:
    """
    Crop a raw CT volume to the dilated convex hull of its lungs.

    Voxels inside the box but outside the hull keep their normalized values.

    Args:
        volume_hu: Raw CT volume in HU
        cfg: Pipeline parameters

    Returns:
        LungCrop(volume, region, hull)

    Raises:
        DegenerateHistogram: the volume has a single intensity
        NoLungCandidate: no interior air component survives
    """
    cfg = cfg or PreprocessConfig()
    cfg.validate()
    normalized = hu_normalize(volume_hu, cfg.hu_lo, cfg.hu_hi)

    lungs = _select_lungs(normalized, cfg)
    hull = dilate_2d(convex_hull_2d(lungs), cfg.dilate_kernel)
    region = bounding_region(hull)

    logger.info(
        "lung crop",
        extra={'event': 'crop', 'lo': list(region.lo), 'hi': list(region.hi),
               'kept_fraction': float(np.prod(region.shape) / np.prod(volume_hu.dims))},
    )
    return LungCrop(
        crop(normalized, region),
        region,
        BinaryMask(hull, volume_hu.spacing, volume_hu.origin),
    )
