"""
Run configuration: every hyperparameter group plus the ablation mode.

Run configs are JSON or YAML documents:

    mode: DL+FL+CH            # optional; DL, DL+FL or DL+FL+CH
    hull_crop: true
    train_fraction: 0.8
    preprocess: {...}         # PreprocessConfig fields
    model: {...}              # LobeNetSpec fields
    train:                    # TrainConfig fields
      loss: {...}             # LossConfig fields ('lambda' for the focal weight)
      augment: {...}          # AugmentConfig fields
"""

import copy
import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from .constants import TRAIN_FRACTION
from .errors import InvalidConfig
from .model import LobeNetSpec
from .preprocess import PreprocessConfig
from .trainer import TrainConfig

logger = logging.getLogger(__name__)


class _ConfigLoader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot (1e-7, 2E5)."""


_ConfigLoader.add_implicit_resolver(
    'tag:yaml.org,2002:float',
    re.compile(r'''^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$'''),
    list('-+0123456789'),
)


class AblationMode(Enum):
    """Loss / cropping combinations compared by the ablation harness."""
    DL = "DL"
    DL_FL = "DL+FL"
    DL_FL_CH = "DL+FL+CH"

    @property
    def focal_weight(self) -> float:
        return 0.0 if self is AblationMode.DL else 1.0

    @property
    def hull_crop(self) -> bool:
        return self is AblationMode.DL_FL_CH

    @classmethod
    def parse(cls, value: Union[str, 'AblationMode']) -> 'AblationMode':
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper().replace(' ', ''))
        except ValueError:
            raise InvalidConfig(f"unknown ablation mode {value!r}; expected one of "
                                f"{[m.value for m in cls]}") from None


_TOP_LEVEL_KEYS = {'mode', 'hull_crop', 'train_fraction', 'preprocess', 'model', 'train'}


@dataclass
class RunConfig:
    """
    Complete configuration of a training / evaluation run.

    Attributes:
        preprocess: Lung cropping parameters
        model: Network spec
        train: Optimization, loss and augmentation settings
        mode: Ablation mode the config was derived for, if any
        hull_crop: Crop samples to the lung hull before training and inference
        train_fraction: Share of cases used for training in a seeded split
    """
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: LobeNetSpec = field(default_factory=LobeNetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    mode: Optional[AblationMode] = None
    hull_crop: bool = True
    train_fraction: float = TRAIN_FRACTION

    def validate(self) -> None:
        self.preprocess.validate()
        self.model.validate()
        self.train.validate()
        if not 0.0 < self.train_fraction <= 1.0:
            raise InvalidConfig(f"train_fraction must lie in (0, 1], got {self.train_fraction}")
        if self.mode is not None:
            if self.train.loss.lam != self.mode.focal_weight or self.hull_crop != self.mode.hull_crop:
                raise InvalidConfig(f"config is inconsistent with mode {self.mode.value}")

    def for_mode(self, mode: Union[str, AblationMode]) -> 'RunConfig':
        """
        Copy configured for an ablation arm: DL uses dice only without
        cropping, DL+FL adds the focal term, DL+FL+CH also crops to the hull.
        """
        mode = AblationMode.parse(mode)
        cfg = copy.deepcopy(self)
        cfg.mode = mode
        cfg.train.loss.lam = mode.focal_weight
        cfg.hull_crop = mode.hull_crop
        return cfg

    def with_seed(self, seed: int) -> 'RunConfig':
        """Copy with one seed for initialization, sample order and augmentation."""
        cfg = copy.deepcopy(self)
        cfg.model.seed = seed
        cfg.train.seed = seed
        cfg.train.augment.seed = seed
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return {
            'mode': self.mode.value if self.mode else None,
            'hull_crop': self.hull_crop,
            'train_fraction': self.train_fraction,
            'preprocess': self.preprocess.to_dict(),
            'model': self.model.to_dict(),
            'train': self.train.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: Optional[Dict[str, Any]]) -> 'RunConfig':
        doc = doc or {}
        if not isinstance(doc, dict):
            raise InvalidConfig("run config must be a mapping")
        unknown = set(doc) - _TOP_LEVEL_KEYS
        if unknown:
            raise InvalidConfig(f"unknown run config keys: {sorted(unknown)}")
        try:
            cfg = cls(
                preprocess=PreprocessConfig.from_dict(doc.get('preprocess') or {}),
                model=LobeNetSpec.from_dict(doc.get('model') or {}),
                train=TrainConfig.from_dict(doc.get('train') or {}),
                hull_crop=bool(doc.get('hull_crop', True)),
                train_fraction=float(doc.get('train_fraction', TRAIN_FRACTION)),
            )
        except TypeError as e:
            raise InvalidConfig(f"malformed run config: {e}") from e
        if doc.get('mode'):
            cfg = cfg.for_mode(doc['mode'])
        cfg.validate()
        return cfg


def load_run_config(path: Union[str, Path, None]) -> RunConfig:
    """
    Read a JSON (.json) or YAML run config; None gives the defaults.

    Raises:
        InvalidConfig: unreadable file, bad syntax, unknown keys or invalid values
    """
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise InvalidConfig(f"cannot read run config {path}: {e}") from e
    try:
        if Path(path).suffix.lower() == '.json':
            doc = json.loads(text)
        else:
            doc = yaml.load(text, Loader=_ConfigLoader)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise InvalidConfig(f"cannot parse run config {path}: {e}") from e
    cfg = RunConfig.from_dict(doc)
    logger.debug("run config loaded", extra={'path': str(path), 'mode': cfg.mode.value if cfg.mode else None})
    return cfg
