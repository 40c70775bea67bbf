"""
Base classes and interfaces for the augmentation plugin system.
"""

from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Any, Dict, Tuple

import numpy as np

from ..constants import FLIP_Z_PROB, ROTATE_MAX_DEG, SHIFT_MAX
from ..errors import InvalidConfig
from ..volume_io import LabelMask, Volume


class AugmentStrategy(Enum):
    """Available geometric augmentations, in application order."""
    SHIFT = "shift"
    FLIP_Z = "flip_z"
    ROTATE_XY = "rotate_xy"


@dataclass
class AugmentConfig:
    """
    Parameters for training-time augmentation.

    Attributes:
        shift_max: Maximum integer translation per axis in voxels
        flip_z_prob: Probability of reversing the slice order
        rotate_max_deg: Maximum absolute in-plane rotation in degrees
        seed: Seed of the augmentation RNG stream
    """
    shift_max: int = SHIFT_MAX  # voxels
    flip_z_prob: float = FLIP_Z_PROB  # 0-1
    rotate_max_deg: float = ROTATE_MAX_DEG  # degrees
    seed: int = 0

    def validate(self) -> None:
        if self.shift_max < 0:
            raise InvalidConfig(f"shift_max must be >= 0, got {self.shift_max}")
        if not 0.0 <= self.flip_z_prob <= 1.0:
            raise InvalidConfig(f"flip_z_prob must lie in [0, 1], got {self.flip_z_prob}")
        if self.rotate_max_deg < 0:
            raise InvalidConfig(f"rotate_max_deg must be >= 0, got {self.rotate_max_deg}")

    @property
    def enabled(self) -> bool:
        return self.shift_max > 0 or self.flip_z_prob > 0 or self.rotate_max_deg > 0

    @classmethod
    def disabled(cls, seed: int = 0) -> 'AugmentConfig':
        return cls(shift_max=0, flip_z_prob=0.0, rotate_max_deg=0.0, seed=seed)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'AugmentConfig':
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidConfig(f"unknown augment keys: {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg


class AugmentPlugin(ABC):
    """
    Abstract base class for augmentation plugins.

    A plugin draws its random parameters from the supplied generator (always
    the same number of draws, whatever the outcome) and applies one geometric
    transform identically to a volume and its label mask.
    """

    def __init__(self):
        self._name = self.__class__.__name__
        self._description = ""

    @property
    def name(self) -> str:
        return self._name

    @property
    def description(self) -> str:
        return self._description

    @abstractmethod
    def apply(
        self,
        volume: Volume,
        mask: LabelMask,
        cfg: AugmentConfig,
        rng: np.random.Generator,
    ) -> Tuple[Volume, LabelMask]:
        """
        Transform a (volume, mask) pair.

        Args:
            volume: Normalized intensities
            mask: Labels on the same grid
            cfg: Augmentation parameters
            rng: Random stream owned by the caller

        Returns:
            The transformed pair
        """

    def validate_parameters(self, cfg: AugmentConfig) -> bool:
        try:
            cfg.validate()
        except InvalidConfig:
            return False
        return True
