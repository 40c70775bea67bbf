"""
Augmentation plugin system for training samples.

Each strategy transforms a volume and its label mask with the same geometry.

Usage:
    from lobekit.augment import AugmentConfig, augment_pair

    rng = np.random.default_rng(cfg.seed)
    volume, mask = augment_pair(volume, mask, cfg, rng)
"""

from typing import Iterable, Optional, Tuple

import numpy as np

from ..volume_io import LabelMask, Volume
from .base import AugmentConfig, AugmentPlugin, AugmentStrategy
from .plugins import (
    FlipZPlugin,
    RotateXYPlugin,
    ShiftPlugin,
    flip_z,
    random_shift,
    rotate_xy,
    shift_pair,
)
from .registry import AugmentRegistry, registry

# Auto-register built-in plugins
registry.register(AugmentStrategy.SHIFT, ShiftPlugin)
registry.register(AugmentStrategy.FLIP_Z, FlipZPlugin)
registry.register(AugmentStrategy.ROTATE_XY, RotateXYPlugin)


def augment_pair(
    volume: Volume,
    mask: LabelMask,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    strategies: Optional[Iterable[AugmentStrategy]] = None,
) -> Tuple[Volume, LabelMask]:
    """Apply the registered strategies (shift, z flip, rotation by default) in order."""
    for strategy in strategies or registry.list_strategies():
        plugin = registry.get_plugin(strategy)
        if plugin is None:
            raise KeyError(f"no augmentation plugin registered for {strategy}")
        volume, mask = plugin.apply(volume, mask, cfg, rng)
    return volume, mask


__all__ = [
    'AugmentConfig',
    'AugmentPlugin',
    'AugmentStrategy',
    'AugmentRegistry',
    'registry',
    'augment_pair',
    'random_shift',
    'shift_pair',
    'flip_z',
    'rotate_xy',
    'ShiftPlugin',
    'FlipZPlugin',
    'RotateXYPlugin',
]
