"""
One-downsampling residual encoder/decoder for lobe segmentation.

Layout (C = base width):

    stem   conv3 1->C, ReLU, BN          full resolution
    enc    residual block C
    down   conv2 s2 C->2C, ReLU, BN      half resolution
    mid    residual block 2C
    up     convT2 s2 2C->C, ReLU, BN     full resolution
    fuse   concat(enc, up) -> conv1 2C->C, ReLU, BN
    dec    residual block C
    head   conv1 C->num_classes, softmax

A residual block is two (conv3 pad 1 -> ReLU -> BN) layers plus the identity.
"""

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Iterator, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .constants import BASE_WIDTH, NUM_CLASSES
from .errors import InvalidConfig, OddSpatialDim, ShapeMismatch

logger = logging.getLogger(__name__)


@dataclass
class LobeNetSpec:
    """
    Network hyperparameters.

    Attributes:
        in_channels: Input channels (one CT intensity channel)
        num_classes: Output classes including background
        base_width: Channels at full resolution; doubled at half resolution
        seed: Parameter initialization seed
    """
    in_channels: int = 1
    num_classes: int = NUM_CLASSES
    base_width: int = BASE_WIDTH
    seed: int = 0

    def validate(self) -> None:
        for name in ('in_channels', 'num_classes', 'base_width'):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive, got {getattr(self, name)}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'LobeNetSpec':
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidConfig(f"unknown model keys: {sorted(unknown)}")
        spec = cls(**doc)
        spec.validate()
        return spec


@dataclass(frozen=True)
class ResidualBlockSpec:
    """Two conv3 -> ReLU -> BN layers of `channels` channels plus identity skip."""
    channels: int
    layers: int = 2


class LobeNet:
    """
    The segmentation network: parameters, batchnorm running statistics and mode.

    Parameters are leaf tensors with requires_grad=True, keyed by dotted names
    (e.g. 'enc.conv1.weight'). The forward pass records a fresh graph each call.
    """

    def __init__(self, spec: LobeNetSpec = None, dtype=np.float32):
        self.spec = spec or LobeNetSpec()
        self.spec.validate()
        self.dtype = np.dtype(dtype)
        self.training = True
        self.params: 'OrderedDict[str, Tensor]' = OrderedDict()
        self.bn_states: 'OrderedDict[str, BatchNormState]' = OrderedDict()
        self._transposed = set()

        c = self.spec.base_width
        self._conv('stem.conv', self.spec.in_channels, c, 3)
        self._bn('stem.bn', c)
        self._block('enc', ResidualBlockSpec(c))
        self._conv('down.conv', c, 2 * c, 2)
        self._bn('down.bn', 2 * c)
        self._block('mid', ResidualBlockSpec(2 * c))
        self._conv('up.conv', 2 * c, c, 2, transposed=True)
        self._bn('up.bn', c)
        self._conv('fuse.conv', 2 * c, c, 1)
        self._bn('fuse.bn', c)
        self._block('dec', ResidualBlockSpec(c))
        self._conv('head.conv', c, self.spec.num_classes, 1)

        self.init_parameters(self.spec.seed)

    # construction ---------------------------------------------------------
    def _add_param(self, name: str, shape: Tuple[int, ...], fill: float) -> None:
        self.params[name] = Tensor(np.full(shape, fill, dtype=self.dtype), requires_grad=True, name=name)

    def _conv(self, prefix: str, cin: int, cout: int, k: int, transposed: bool = False) -> None:
        shape = (cin, cout, k, k, k) if transposed else (cout, cin, k, k, k)
        self._add_param(f'{prefix}.weight', shape, 0.0)
        self._add_param(f'{prefix}.bias', (cout,), 0.0)
        if transposed:
            self._transposed.add(f'{prefix}.weight')

    def _bn(self, prefix: str, channels: int) -> None:
        self._add_param(f'{prefix}.gamma', (channels,), 1.0)
        self._add_param(f'{prefix}.beta', (channels,), 0.0)
        self.bn_states[prefix] = BatchNormState(channels, dtype=self.dtype)

    def _block(self, prefix: str, block: ResidualBlockSpec) -> None:
        for i in range(1, block.layers + 1):
            self._conv(f'{prefix}.conv{i}', block.channels, block.channels, 3)
            self._bn(f'{prefix}.bn{i}', block.channels)

    def fan_in(self, name: str) -> int:
        """Inputs feeding one output unit of a conv weight."""
        shape = self.params[name].shape
        if name in self._transposed:
            return shape[0] * int(np.prod(shape[2:]))
        return int(np.prod(shape[1:]))

    def init_parameters(self, seed: int = 0) -> None:
        """
        He-uniform conv weights in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero
        biases, batchnorm gamma 1 and beta 0, fresh running statistics.
        """
        rng = np.random.default_rng(seed)
        for name, p in self.params.items():
            if name.endswith('.weight'):
                bound = np.sqrt(6.0 / self.fan_in(name))
                p.data = rng.uniform(-bound, bound, size=p.shape).astype(self.dtype)
            elif name.endswith('.gamma'):
                p.data = np.ones(p.shape, dtype=self.dtype)
            else:
                p.data = np.zeros(p.shape, dtype=self.dtype)
            p.grad = None
        for prefix, state in self.bn_states.items():
            self.bn_states[prefix] = BatchNormState(len(state.running_mean), dtype=self.dtype)

    # mode / bookkeeping ---------------------------------------------------
    def train(self) -> 'LobeNet':
        self.training = True
        return self

    def eval(self) -> 'LobeNet':
        self.training = False
        return self

    def parameters(self) -> 'OrderedDict[str, Tensor]':
        return self.params

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for prefix, state in self.bn_states.items():
            yield f'{prefix}.running_mean', state.running_mean
            yield f'{prefix}.running_var', state.running_var

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> 'LobeNet':
        """Convert parameters and running statistics in place (64-bit for gradient checks)."""
        self.dtype = np.dtype(dtype)
        for p in self.params.values():
            p.data = p.data.astype(self.dtype)
            p.grad = None
        for state in self.bn_states.values():
            state.astype(self.dtype)
        return self

    def state_dict(self) -> 'OrderedDict[str, np.ndarray]':
        state = OrderedDict((name, p.data) for name, p in self.params.items())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = set(self.state_dict())
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ShapeMismatch(f"checkpoint tensors do not match the network (missing {missing}, extra {extra})")
        for name, p in self.params.items():
            if state[name].shape != p.shape:
                raise ShapeMismatch(f"{name}: expected shape {p.shape}, got {state[name].shape}")
            p.data = np.asarray(state[name], dtype=self.dtype).copy()
            p.grad = None
        for prefix, bn in self.bn_states.items():
            bn.running_mean = np.asarray(state[f'{prefix}.running_mean'], dtype=self.dtype).copy()
            bn.running_var = np.asarray(state[f'{prefix}.running_var'], dtype=self.dtype).copy()

    # forward --------------------------------------------------------------
    def _conv_relu_bn(self, x: Tensor, conv: str, bn: str, padding: int = 1) -> Tensor:
        y = ad.conv3d(x, self.params[f'{conv}.weight'], self.params[f'{conv}.bias'], padding=padding)
        return self._relu_bn(y, bn)

    def _relu_bn(self, y: Tensor, bn: str) -> Tensor:
        return ad.batchnorm3d(
            ad.relu(y), self.params[f'{bn}.gamma'], self.params[f'{bn}.beta'],
            self.bn_states[bn], training=self.training,
        )

    def _residual(self, x: Tensor, prefix: str) -> Tensor:
        y = self._conv_relu_bn(x, f'{prefix}.conv1', f'{prefix}.bn1')
        y = self._conv_relu_bn(y, f'{prefix}.conv2', f'{prefix}.bn2')
        return ad.residual_add(x, y)

    def logits(self, x: Tensor) -> Tensor:
        """Pre-softmax class scores, shape (N, num_classes, Z, Y, X)."""
        if x.ndim != 5 or x.shape[1] != self.spec.in_channels:
            raise ShapeMismatch(f"expected input (N, {self.spec.in_channels}, Z, Y, X), got {x.shape}")
        if any(d % 2 for d in x.shape[2:]):
            raise OddSpatialDim(f"spatial dims must be even, got {x.shape[2:]}")
        p = self.params

        enc = self._conv_relu_bn(x, 'stem.conv', 'stem.bn')
        enc = self._residual(enc, 'enc')

        mid = self._relu_bn(ad.downsample(enc, p['down.conv.weight'], p['down.conv.bias']), 'down.bn')
        mid = self._residual(mid, 'mid')

        up = self._relu_bn(ad.upsample(mid, p['up.conv.weight'], p['up.conv.bias']), 'up.bn')
        fused = self._conv_relu_bn(ad.concat([enc, up], axis=1), 'fuse.conv', 'fuse.bn', padding=0)
        dec = self._residual(fused, 'dec')

        return ad.conv3d(dec, p['head.conv.weight'], p['head.conv.bias'])

    def forward(self, x: Tensor) -> Tensor:
        """
        Per-voxel class probabilities.

        Args:
            x: (N, 1, Z, Y, X) normalized intensities, even spatial dims

        Returns:
            (N, num_classes, Z, Y, X) softmax probabilities

        Raises:
            OddSpatialDim: any spatial dim is odd
        """
        return ad.softmax_channels(self.logits(x))

    __call__ = forward

    def __repr__(self):
        count = sum(p.size for p in self.params.values())
        return f"LobeNet(base_width={self.spec.base_width}, classes={self.spec.num_classes}, params={count})"
