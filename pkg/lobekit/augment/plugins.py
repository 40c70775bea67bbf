"""
Built-in augmentation plugins: random shift, z flip and in-plane rotation.

The module-level functions are the deterministic transforms; the plugin
classes draw their parameters from the caller's RNG and delegate to them.
"""

from typing import Sequence, Tuple

import numpy as np

from ..volume_io import LabelMask, Volume
from .base import AugmentConfig, AugmentPlugin
from .utils import rotate_slices, shift_array


def shift_pair(volume: Volume, mask: LabelMask, offsets: Sequence[int]) -> Tuple[Volume, LabelMask]:
    """Translate both grids by integer (z, y, x) offsets; vacated voxels become 0 / background."""
    offsets = tuple(int(o) for o in offsets)
    if offsets == (0, 0, 0):
        return volume, mask
    return (
        volume.with_data(shift_array(volume.data, offsets, 0)),
        mask.with_data(shift_array(mask.data, offsets, 0)),
    )


def random_shift(
    volume: Volume, mask: LabelMask, cfg: AugmentConfig, rng: np.random.Generator
) -> Tuple[Volume, LabelMask]:
    """Shift by offsets drawn uniformly from [-shift_max, shift_max] per axis."""
    offsets = rng.integers(-cfg.shift_max, cfg.shift_max + 1, size=3)
    return shift_pair(volume, mask, offsets)


def flip_z(volume: Volume, mask: LabelMask) -> Tuple[Volume, LabelMask]:
    """Reverse the slice order. Labels keep their values."""
    return volume.with_data(volume.data[::-1]), mask.with_data(mask.data[::-1])


def rotate_xy(volume: Volume, mask: LabelMask, angle_deg: float) -> Tuple[Volume, LabelMask]:
    """
    Rotate every slice about its center by `angle_deg`.

    Intensities are resampled bilinearly, labels by nearest neighbour; samples
    from outside the field read 0 / background.
    """
    if angle_deg == 0:
        return volume, mask
    return (
        volume.with_data(rotate_slices(np.asarray(volume.data), angle_deg, order=1)),
        mask.with_data(rotate_slices(np.asarray(mask.data), angle_deg, order=0)),
    )


class ShiftPlugin(AugmentPlugin):
    def __init__(self):
        super().__init__()
        self._name = "Random Shift"
        self._description = "Integer translation of up to shift_max voxels per axis"

    def apply(self, volume, mask, cfg, rng):
        return random_shift(volume, mask, cfg, rng)


class FlipZPlugin(AugmentPlugin):
    def __init__(self):
        super().__init__()
        self._name = "Z Flip"
        self._description = "Reverses slice order with probability flip_z_prob"

    def apply(self, volume, mask, cfg, rng):
        if rng.random() < cfg.flip_z_prob:
            return flip_z(volume, mask)
        return volume, mask


class RotateXYPlugin(AugmentPlugin):
    def __init__(self):
        super().__init__()
        self._name = "XY Rotation"
        self._description = "In-plane rotation by an angle in [-rotate_max_deg, rotate_max_deg]"

    def apply(self, volume, mask, cfg, rng):
        angle = float(rng.uniform(-cfg.rotate_max_deg, cfg.rotate_max_deg))
        return rotate_xy(volume, mask, angle)
