"""
Hybrid segmentation objective: soft dice loss plus lambda times focal loss.

Probabilities and one-hot labels are (N, C, Z, Y, X) tensors; every sum runs
over batch and space per class.
"""

from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .constants import DICE_SMOOTH, LOSS_ALPHA, LOSS_GAMMA, LOSS_LAMBDA, NUM_CLASSES, PROB_FLOOR
from .errors import InvalidConfig, InvalidLabel, ShapeMismatch

_REDUCE_AXES = (0, 2, 3, 4)


@dataclass
class LossConfig:
    """
    Loss hyperparameters.

    Attributes:
        lam: Weight of the focal term ('lambda' in run configs)
        alpha: Per-class focal weight, a single value or one per class
        gamma: Focusing exponent
        prob_floor: Lower clamp of probabilities inside the log
        dice_smooth: Smoothing added to dice numerator and denominator
    """
    lam: float = LOSS_LAMBDA
    alpha: Union[float, Sequence[float]] = LOSS_ALPHA
    gamma: float = LOSS_GAMMA
    prob_floor: float = PROB_FLOOR
    dice_smooth: float = DICE_SMOOTH

    def validate(self) -> None:
        if self.lam < 0:
            raise InvalidConfig(f"lambda must be >= 0, got {self.lam}")
        if self.gamma < 0:
            raise InvalidConfig(f"gamma must be >= 0, got {self.gamma}")
        if np.any(np.asarray(self.alpha, dtype=float) <= 0):
            raise InvalidConfig(f"alpha must be positive, got {self.alpha}")
        if self.prob_floor <= 0 or self.dice_smooth <= 0:
            raise InvalidConfig("prob_floor and dice_smooth must be positive")

    def alpha_vector(self, num_classes: int) -> np.ndarray:
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if alpha.ndim == 0:
            return np.full(num_classes, float(alpha))
        if alpha.shape != (num_classes,):
            raise InvalidConfig(f"alpha needs {num_classes} entries, got {alpha.size}")
        return alpha

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc['lambda'] = doc.pop('lam')
        if not np.isscalar(doc['alpha']):
            doc['alpha'] = [float(a) for a in doc['alpha']]
        return doc

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'LossConfig':
        doc = dict(doc)
        if 'lambda' in doc:
            doc['lam'] = doc.pop('lambda')
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidConfig(f"unknown loss keys: {sorted(unknown)}")
        if isinstance(doc.get('alpha'), list):
            doc['alpha'] = tuple(doc['alpha'])
        cfg = cls(**doc)
        cfg.validate()
        return cfg


def one_hot(labels: np.ndarray, num_classes: int = NUM_CLASSES, dtype=np.float32) -> Tensor:
    """
    (Z, Y, X) or (N, Z, Y, X) class ids -> (N, C, Z, Y, X) indicator tensor.

    Raises:
        InvalidLabel: a label falls outside 0..num_classes-1
    """
    labels = np.asarray(labels)
    if labels.ndim == 3:
        labels = labels[np.newaxis]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidLabel(f"labels must lie in 0..{num_classes - 1}")
    classes = np.arange(num_classes).reshape(1, num_classes, 1, 1, 1)
    return Tensor((labels[:, np.newaxis] == classes).astype(dtype))


def _check_pair(p: Tensor, g: Tensor) -> Tensor:
    g = ad.as_tensor(g, p)
    if p.shape != g.shape or p.ndim != 5:
        raise ShapeMismatch(f"probabilities {p.shape} and labels {g.shape} must be equal 5D shapes")
    return g


def dice_loss(p: Tensor, g: Tensor, cfg: LossConfig = None) -> Tensor:
    """
    Sum over classes of 1 - s_c with

        s_c = (sum p*g + eps) / (sum [p*g + (1-p)*g + p*(1-g)] + eps)

    An empty class predicted empty gives s_c = 1.
    """
    cfg = cfg or LossConfig()
    g = _check_pair(p, g)
    pg = p * g
    overlap = ad.tsum(pg, axis=_REDUCE_AXES)
    union = ad.tsum(pg + (1.0 - p) * g + p * (1.0 - g), axis=_REDUCE_AXES)
    similarity = (overlap + cfg.dice_smooth) / (union + cfg.dice_smooth)
    return ad.tsum(1.0 - similarity)


def focal_loss(p: Tensor, g: Tensor, cfg: LossConfig = None) -> Tensor:
    """
    -(1/N) * sum_c sum_i alpha_c * g_ic * (1 - p_ic)^gamma * log(max(p_ic, floor)),
    N = voxel count. gamma = 0 reduces to mean cross-entropy.
    """
    cfg = cfg or LossConfig()
    g = _check_pair(p, g)
    num_classes = p.shape[1]
    voxels = p.size // num_classes
    alpha = ad.as_tensor(cfg.alpha_vector(num_classes).astype(p.dtype).reshape(1, num_classes, 1, 1, 1))

    log_p = ad.log(ad.clamp_min(p, cfg.prob_floor))
    weighted = g * alpha
    if cfg.gamma != 0:
        weighted = weighted * ad.power(1.0 - p, cfg.gamma)
    return ad.tsum(weighted * log_p) * (-1.0 / voxels)


def hybrid_loss(p: Tensor, g: Tensor, cfg: LossConfig = None) -> Tensor:
    """dice_loss + lambda * focal_loss; with lambda = 0 the dice loss itself."""
    cfg = cfg or LossConfig()
    dice = dice_loss(p, g, cfg)
    if cfg.lam == 0:
        return dice
    return dice + cfg.lam * focal_loss(p, g, cfg)
