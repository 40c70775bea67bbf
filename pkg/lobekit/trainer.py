"""
Adam training loop, whole-volume inference and full-extent segmentation.

Batch size is fixed at one: every step is augment -> forward -> hybrid loss ->
backward -> Adam update on a single sample. The final parameters are those of
the last epoch.
"""

import csv
import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .augment import AugmentConfig, augment_pair
from .autodiff import Tensor, no_grad
from .constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, EPOCHS, LEARNING_RATE
from .dataset import Sample
from .errors import EmptyDataset, InvalidConfig, IoFailure, MissingGradient, NonFiniteLoss
from .loss import LossConfig, hybrid_loss, one_hot
from .model import LobeNet, LobeNetSpec
from .preprocess import PreprocessConfig, lung_crop_pipeline
from .volume_io import LabelMask, Volume, crop, hu_normalize, uncrop

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, int, str], None]


@dataclass
class TrainConfig:
    """
    Optimization settings.

    Attributes:
        epochs: Passes over the training set
        batch_size: Always 1
        learning_rate: Adam step size
        adam_beta1, adam_beta2, adam_eps: Adam moment decay rates and denominator floor
        seed: Seed of the sample order (and patch positions)
        loss: Hybrid loss settings
        augment: Augmentation settings (own seed)
        patch: Optional (z, y, x) random training crop; inference is whole-volume
    """
    epochs: int = EPOCHS
    batch_size: int = 1
    learning_rate: float = LEARNING_RATE
    adam_beta1: float = ADAM_BETA1
    adam_beta2: float = ADAM_BETA2
    adam_eps: float = ADAM_EPS
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    patch: Optional[Tuple[int, int, int]] = None

    def validate(self) -> None:
        if self.epochs < 1:
            raise InvalidConfig(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size != 1:
            raise InvalidConfig(f"batch_size is fixed at 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise InvalidConfig(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise InvalidConfig("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise InvalidConfig("adam_eps must be positive")
        if self.patch is not None:
            if len(self.patch) != 3 or any(int(p) != p or p < 2 or p % 2 for p in self.patch):
                raise InvalidConfig(f"patch must be three even sizes >= 2, got {self.patch}")
        self.loss.validate()
        self.augment.validate()

    def to_dict(self) -> Dict[str, Any]:
        doc = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ('loss', 'augment')}
        doc['patch'] = list(self.patch) if self.patch is not None else None
        doc['loss'] = self.loss.to_dict()
        doc['augment'] = self.augment.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'TrainConfig':
        doc = dict(doc)
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidConfig(f"unknown train keys: {sorted(unknown)}")
        if 'loss' in doc:
            doc['loss'] = LossConfig.from_dict(doc['loss'])
        if 'augment' in doc:
            doc['augment'] = AugmentConfig.from_dict(doc['augment'])
        if doc.get('patch') is not None:
            doc['patch'] = tuple(doc['patch'])
        cfg = cls(**doc)
        cfg.validate()
        return cfg


@dataclass
class OptimizerState:
    """
    Adam moments per parameter name and the step counter.
    """
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor]) -> 'OptimizerState':
        return cls(
            {name: np.zeros_like(p.data) for name, p in params.items()},
            {name: np.zeros_like(p.data) for name, p in params.items()},
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Optional[Mapping[str, np.ndarray]],
    state: OptimizerState,
    cfg: TrainConfig,
) -> None:
    """
    One bias-corrected Adam update in place, then clear the gradients.

    Args:
        params: Parameter tensors by name
        grads: Gradients by name; None takes each parameter's `.grad`
        state: Moments and step counter, updated in place
        cfg: Learning rate and Adam constants

    Raises:
        MissingGradient: a parameter has no gradient
    """
    if grads is None:
        grads = {name: p.grad for name, p in params.items()}
    missing = [name for name in params if grads.get(name) is None]
    if missing:
        raise MissingGradient(f"no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")

    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        p.data = (p.data - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)).astype(p.dtype)
        p.grad = None


def pad_to_even(array: np.ndarray, fill=0) -> np.ndarray:
    """Append one slice of `fill` along every odd axis."""
    pad = [(0, n % 2) for n in array.shape]
    if not any(after for _, after in pad):
        return array
    return np.pad(array, pad, mode='constant', constant_values=fill)


def _random_patch(x: np.ndarray, g: np.ndarray, patch, rng: np.random.Generator):
    size = [min(p, n) - (min(p, n) % 2) for p, n in zip(patch, x.shape)]
    start = [int(rng.integers(0, n - s + 1)) for n, s in zip(x.shape, size)]
    window = tuple(slice(a, a + s) for a, s in zip(start, size))
    return x[window], g[window]


class EpochRecord(NamedTuple):
    epoch: int
    mean_loss: float
    wall_seconds: float


@dataclass
class TrainResult:
    """Trained network, per-epoch history and the sample order of every epoch."""
    net: LobeNet
    history: List[EpochRecord]
    orderings: List[List[str]]


def train(
    samples: Sequence[Sample],
    cfg: Optional[TrainConfig] = None,
    spec: Optional[LobeNetSpec] = None,
    progress_callback: Optional[ProgressCallback] = None,
    net: Optional[LobeNet] = None,
) -> TrainResult:
    """
    Train a LobeNet on preprocessed samples.

    Args:
        samples: Normalized (and optionally cropped) volumes with labels
        cfg: Optimization settings
        spec: Network spec for a fresh network (ignored when `net` is given)
        progress_callback: Called as (epoch, epochs, message) after every epoch
        net: Network to continue training

    Returns:
        TrainResult with the last epoch's parameters

    Raises:
        EmptyDataset: no samples
        NonFiniteLoss: a step produced a NaN or infinite loss
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    if not samples:
        raise EmptyDataset("cannot train on an empty dataset")
    net = net or LobeNet(spec)
    net.train()

    optimizer = OptimizerState.for_params(net.parameters())
    order_rng = np.random.default_rng(cfg.seed)
    patch_rng = np.random.default_rng((cfg.seed, 1))
    augment_rng = np.random.default_rng(cfg.augment.seed)
    history: List[EpochRecord] = []
    orderings: List[List[str]] = []

    logger.info("training started", extra={
        'event': 'train-start', 'samples': len(samples), 'epochs': cfg.epochs,
        'lambda': cfg.loss.lam, 'base_width': net.spec.base_width,
    })
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        losses = []
        order = order_rng.permutation(len(samples))
        orderings.append([samples[i].id for i in order])

        for i in order:
            sample = samples[i]
            volume, labels = sample.volume, sample.labels
            if cfg.augment.enabled:
                volume, labels = augment_pair(volume, labels, cfg.augment, augment_rng)
            x = pad_to_even(np.asarray(volume.data, dtype=net.dtype))
            g = pad_to_even(np.asarray(labels.data))
            if cfg.patch is not None:
                x, g = _random_patch(x, g, cfg.patch, patch_rng)

            probs = net(Tensor(x[np.newaxis, np.newaxis]))
            loss = hybrid_loss(probs, one_hot(g, net.spec.num_classes, dtype=net.dtype), cfg.loss)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLoss(
                    f"loss is {value} on sample {sample.id} (epoch {epoch})",
                    sample_id=sample.id, epoch=epoch,
                )
            loss.backward()
            adam_step(net.parameters(), None, optimizer, cfg)
            losses.append(value)
            logger.debug("step", extra={'event': 'step', 'epoch': epoch, 'sample': sample.id,
                                        'sha256': sample.sha256, 'loss': value})

        record = EpochRecord(epoch, float(np.mean(losses)), time.perf_counter() - started)
        history.append(record)
        logger.info("epoch", extra={'event': 'epoch', 'epoch': epoch, 'loss': record.mean_loss,
                                    'wall_seconds': round(record.wall_seconds, 3)})
        if progress_callback:
            progress_callback(epoch, cfg.epochs, f"loss {record.mean_loss:.4f}")

    return TrainResult(net, history, orderings)


def write_history(history: Sequence[EpochRecord], path: Union[str, Path]) -> None:
    """CSV with columns epoch, mean_loss, wall_seconds."""
    try:
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(EpochRecord._fields)
            for record in history:
                writer.writerow([record.epoch, repr(record.mean_loss), f"{record.wall_seconds:.3f}"])
    except OSError as e:
        raise IoFailure(f"cannot write history {path}: {e}") from e


def infer(net: LobeNet, volume: Volume) -> LabelMask:
    """
    Label every voxel of a preprocessed volume with its most probable class.

    Odd dims are padded with zero intensity for the forward pass and the
    padding is removed again, so the mask has the volume's dims.
    """
    was_training = net.training
    net.eval()
    try:
        x = pad_to_even(np.asarray(volume.data, dtype=net.dtype))
        with no_grad():
            probs = net(Tensor(x[np.newaxis, np.newaxis]))
    finally:
        net.training = was_training
    nz, ny, nx = volume.dims
    labels = np.argmax(probs.data[0], axis=0)[:nz, :ny, :nx].astype(np.uint8)
    return LabelMask(labels, volume.spacing, volume.origin)


def prepare_sample(sample: Sample, hull_crop: bool, cfg: Optional[PreprocessConfig] = None) -> Sample:
    """
    Turn a raw HU sample into a training/inference sample: normalized, and
    cropped to the lung hull region when `hull_crop` is set. Id and hash are kept.
    """
    cfg = cfg or PreprocessConfig()
    if hull_crop:
        result = lung_crop_pipeline(sample.volume, cfg)
        return sample._replace(volume=result.volume, labels=crop(sample.labels, result.region))
    return sample._replace(volume=hu_normalize(sample.volume, cfg.hu_lo, cfg.hu_hi))


def segment(
    net: LobeNet,
    volume_hu: Volume,
    hull_crop: bool = True,
    cfg: Optional[PreprocessConfig] = None,
) -> LabelMask:
    """
    Full-extent prediction for a raw CT volume.

    With `hull_crop` the network sees only the lung hull region and the
    labels are pasted back into a background mask of the input dims.
    """
    cfg = cfg or PreprocessConfig()
    if not hull_crop:
        return infer(net, hu_normalize(volume_hu, cfg.hu_lo, cfg.hu_hi))
    result = lung_crop_pipeline(volume_hu, cfg)
    return uncrop(infer(net, result.volume), result.region, volume_hu.dims)
