"""
Minimal reverse-mode differentiation over numpy arrays.

Every primitive records its inputs and a backward closure on the output
tensor; `backward` walks the recorded graph in reverse topological order and
accumulates gradients into leaf tensors that require them.

Activation layout is (N, C, Z, Y, X). Convolutions are cross-correlations with
zero padding.
"""

import contextlib
import itertools
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .constants import BN_EPS, BN_MOMENTUM, GRADCHECK_EPS
from .errors import DetachedGraph, NotScalar, OddSpatialDim, ShapeMismatch

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """
    An n-d array that can take part in reverse-mode differentiation.

    Attributes:
        data: numpy array
        grad: accumulated gradient (same shape as data) or None
        requires_grad: whether gradients flow to / through this tensor
        op: name of the primitive that produced this tensor ('' for leaves)
        name: optional label (parameters)
    """

    __array_priority__ = 100  # make numpy defer to our reflected operators

    def __init__(self, data, requires_grad: bool = False, name: str = '', dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        if self.data.dtype.kind != 'f':
            self.data = self.data.astype(np.float32)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = ''
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, op={self.op or 'leaf'})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        backward(self, grad)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return mean(self, axis, keepdims)


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    """Wrap constants; numbers take the dtype of `like` so float32 graphs stay float32."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _record(out_data: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(out_data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Graph traversal
# ---------------------------------------------------------------------------

class Graph:
    """
    Recorded operations reachable from an output, in topological order
    (inputs before the tensors computed from them).
    """

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: List[Tensor] = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def operations(self) -> List[str]:
        return [n.op for n in self.nodes if n.op]

    def count(self, op: str) -> int:
        return sum(1 for n in self.nodes if n.op == op)

    def leaves(self) -> List[Tensor]:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """
    Accumulate d loss / d t into `.grad` of every leaf tensor requiring it.

    Raises:
        NotScalar: loss holds more than one element
        DetachedGraph: loss is not connected to any tensor requiring grad
    """
    if loss.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise DetachedGraph("loss does not depend on any tensor that requires grad")

    graph = Graph(loss)
    grads: Dict[int, np.ndarray] = {
        id(loss): np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.dtype)
    }
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# Elementwise and reduction primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _record(
        a.data + b.data, 'add', (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _record(
        a.data - b.data, 'sub', (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _record(
        a.data * b.data, 'mul', (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return _record(
        out, 'div', (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def _pair(a, b) -> Tuple[Tensor, Tensor]:
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    return as_tensor(a, like), as_tensor(b, like)


def power(x: Tensor, exponent: float) -> Tensor:
    """x ** exponent for a constant exponent; exponent 0 has zero gradient everywhere."""
    exponent = float(exponent)

    def backward_fn(g):
        if exponent == 0.0:
            return (np.zeros_like(x.data),)
        return (g * exponent * np.power(x.data, exponent - 1.0),)

    return _record(np.power(x.data, exponent), 'pow', (x,), backward_fn)


def log(x: Tensor) -> Tensor:
    return _record(np.log(x.data), 'log', (x,), lambda g: (g / x.data,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _record(out, 'exp', (x,), lambda g: (g * out,))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient passes where x >= floor."""
    return _record(
        np.maximum(x.data, floor).astype(x.dtype), 'clamp_min', (x,),
        lambda g: (g * (x.data >= floor),),
    )


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(np.asarray(out), 'sum', (x,), backward_fn)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = range(x.ndim) if axis is None else np.atleast_1d(axis)
    count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis, keepdims), 1.0 / count)


def relu(x: Tensor) -> Tensor:
    return _record(np.maximum(x.data, 0).astype(x.dtype), 'relu', (x,), lambda g: (g * (x.data > 0),))


def residual_add(x: Tensor, y: Tensor) -> Tensor:
    """Identity skip: elementwise sum of two equally shaped tensors."""
    if x.shape != y.shape:
        raise ShapeMismatch(f"residual_add needs equal shapes, got {x.shape} and {y.shape}")
    return _record(x.data + y.data, 'residual_add', (x, y), lambda g: (g, g))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(f"cannot concatenate shapes {[t.shape for t in tensors]}") from e
    return _record(out, 'concat', tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 1 with max subtraction."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _record(p, 'softmax', (x,), backward_fn)


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------

def _window(offset: int, stride: int, count: int) -> slice:
    return slice(offset, offset + stride * (count - 1) + 1, stride)


def conv3d(
    x: Tensor,
    w: Tensor,
    b: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    op: str = 'conv3d',
) -> Tensor:
    """
    3D cross-correlation.

    Args:
        x: (N, Cin, Z, Y, X)
        w: (Cout, Cin, kz, ky, kx)
        b: (Cout,) or None
        stride: Same stride on every axis
        padding: Zero padding on every side

    Returns:
        (N, Cout, Zo, Yo, Xo) with Do = floor((D + 2p - k) / s) + 1

    Raises:
        ShapeMismatch: channel mismatch or kernel larger than the padded input
    """
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeMismatch(f"conv3d expects 5D input and kernel, got {x.shape} and {w.shape}")
    n, cin = x.shape[:2]
    cout, wcin = w.shape[:2]
    kernel = w.shape[2:]
    if cin != wcin:
        raise ShapeMismatch(f"input has {cin} channels, kernel expects {wcin}")
    if b is not None and b.shape != (cout,):
        raise ShapeMismatch(f"bias shape {b.shape} does not match {cout} output channels")
    if any(d + 2 * padding < k for d, k in zip(x.shape[2:], kernel)):
        raise ShapeMismatch(f"kernel {kernel} larger than padded input {x.shape[2:]} (pad {padding})")

    pad = ((0, 0), (0, 0)) + ((padding, padding),) * 3
    xp = np.pad(x.data, pad) if padding else x.data
    out_dims = tuple((d + 2 * padding - k) // stride + 1 for d, k in zip(x.shape[2:], kernel))
    offsets = list(itertools.product(*(range(k) for k in kernel)))

    def patch(i, j, l):
        return xp[:, :, _window(i, stride, out_dims[0]), _window(j, stride, out_dims[1]),
                  _window(l, stride, out_dims[2])]

    out_t = np.zeros((cout, n) + out_dims, dtype=np.result_type(x.dtype, w.dtype))
    for i, j, l in offsets:
        out_t += np.tensordot(w.data[:, :, i, j, l], patch(i, j, l), axes=([1], [1]))
    out = np.moveaxis(out_t, 0, 1)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1, 1)
    out = np.ascontiguousarray(out)

    def backward_fn(g):
        gt = np.moveaxis(g, 1, 0)
        gw = np.zeros_like(w.data)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for i, j, l in offsets:
            if w.requires_grad:
                gw[:, :, i, j, l] = np.tensordot(gt, patch(i, j, l), axes=([1, 2, 3, 4], [0, 2, 3, 4]))
            if gxp is not None:
                contrib = np.tensordot(w.data[:, :, i, j, l], gt, axes=([0], [0]))
                gxp[:, :, _window(i, stride, out_dims[0]), _window(j, stride, out_dims[1]),
                    _window(l, stride, out_dims[2])] += np.moveaxis(contrib, 0, 1)
        gx = None
        if gxp is not None:
            gx = gxp[(slice(None), slice(None)) + tuple(slice(padding, padding + d) for d in x.shape[2:])]
        gb = g.sum(axis=(0, 2, 3, 4)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _record(out, op, parents, backward_fn)


def conv_transpose3d(
    x: Tensor,
    w: Tensor,
    b: Optional[Tensor] = None,
    stride: int = 2,
    op: str = 'conv_transpose3d',
) -> Tensor:
    """
    Transposed 3D convolution (adjoint of an unpadded strided conv3d).

    Args:
        x: (N, Cin, Z, Y, X)
        w: (Cin, Cout, kz, ky, kx)
        b: (Cout,) or None

    Returns:
        (N, Cout, Zo, Yo, Xo) with Do = (D - 1) * s + k
    """
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeMismatch(f"conv_transpose3d expects 5D tensors, got {x.shape} and {w.shape}")
    n, cin = x.shape[:2]
    wcin, cout = w.shape[:2]
    kernel = w.shape[2:]
    if cin != wcin:
        raise ShapeMismatch(f"input has {cin} channels, kernel expects {wcin}")
    in_dims = x.shape[2:]
    out_dims = tuple((d - 1) * stride + k for d, k in zip(in_dims, kernel))
    offsets = list(itertools.product(*(range(k) for k in kernel)))
    xt = np.moveaxis(x.data, 1, 0)

    def window(i, j, l):
        return (slice(None), slice(None), _window(i, stride, in_dims[0]),
                _window(j, stride, in_dims[1]), _window(l, stride, in_dims[2]))

    out_t = np.zeros((cout, n) + out_dims, dtype=np.result_type(x.dtype, w.dtype))
    for i, j, l in offsets:
        out_t[window(i, j, l)] += np.tensordot(w.data[:, :, i, j, l], xt, axes=([0], [0]))
    out = np.moveaxis(out_t, 0, 1)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1, 1)
    out = np.ascontiguousarray(out)

    def backward_fn(g):
        gt = np.moveaxis(g, 1, 0)
        gw = np.zeros_like(w.data)
        gxt = np.zeros_like(xt) if x.requires_grad else None
        for i, j, l in offsets:
            gslice = gt[window(i, j, l)]
            if w.requires_grad:
                gw[:, :, i, j, l] = np.tensordot(xt, gslice, axes=([1, 2, 3, 4], [1, 2, 3, 4]))
            if gxt is not None:
                gxt += np.tensordot(w.data[:, :, i, j, l], gslice, axes=([1], [0]))
        gx = np.moveaxis(gxt, 0, 1) if gxt is not None else None
        gb = g.sum(axis=(0, 2, 3, 4)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _record(out, op, parents, backward_fn)


def downsample(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """
    Learned 2x downsampling: stride-2 2x2x2 convolution.

    Raises:
        OddSpatialDim: any spatial dim is odd
    """
    if any(d % 2 for d in x.shape[2:]):
        raise OddSpatialDim(f"downsample needs even spatial dims, got {x.shape[2:]}")
    if w.shape[2:] != (2, 2, 2):
        raise ShapeMismatch(f"downsample kernel must be 2x2x2, got {w.shape[2:]}")
    return conv3d(x, w, b, stride=2, padding=0, op='downsample')


def upsample(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Learned 2x upsampling: stride-2 2x2x2 transposed convolution."""
    if w.shape[2:] != (2, 2, 2):
        raise ShapeMismatch(f"upsample kernel must be 2x2x2, got {w.shape[2:]}")
    return conv_transpose3d(x, w, b, stride=2, op='upsample')


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

class BatchNormState:
    """Running statistics of one batchnorm layer."""

    def __init__(self, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def astype(self, dtype) -> None:
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)


def batchnorm3d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool = True,
) -> Tensor:
    """
    Per-channel normalization over (N, Z, Y, X).

    Training mode uses batch statistics (variance floor eps) and updates the
    running statistics with the state's momentum; eval mode uses the running
    statistics.

    Raises:
        ShapeMismatch: gamma/beta length differs from the channel count
    """
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeMismatch(f"batchnorm over {channels} channels got gamma {gamma.shape}, beta {beta.shape}")
    axes = (0, 2, 3, 4)
    shape = (1, channels, 1, 1, 1)
    gamma_b = gamma.data.reshape(shape)

    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        count = x.size // channels
        m = state.momentum
        unbiased = var.reshape(-1) * (count / (count - 1)) if count > 1 else var.reshape(-1)
        state.running_mean = ((1 - m) * state.running_mean + m * mu.reshape(-1)).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(state.running_var.dtype)
    else:
        mu = state.running_mean.reshape(shape).astype(x.dtype)
        var = state.running_var.reshape(shape).astype(x.dtype)
        count = None

    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu) * inv_std
    out = (gamma_b * xhat + beta.data.reshape(shape)).astype(x.dtype)

    def backward_fn(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma_b
        if training:
            dx = inv_std / count * (
                count * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            dx = dxhat * inv_std
        return dx.astype(x.dtype), dgamma, dbeta

    return _record(out, 'batchnorm', (x, gamma, beta), backward_fn)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def numeric_gradient(fn: Callable[[], Tensor], tensor: Tensor, index, eps: float = GRADCHECK_EPS) -> float:
    """Central finite difference of scalar fn() with respect to tensor.data[index]."""
    original = tensor.data[index]
    tensor.data[index] = original + eps
    with no_grad():
        plus = fn().item()
    tensor.data[index] = original - eps
    with no_grad():
        minus = fn().item()
    tensor.data[index] = original
    return (plus - minus) / (2.0 * eps)


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Iterable[Tensor],
    eps: float = GRADCHECK_EPS,
    samples: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """
    Compare analytic gradients of scalar fn() against central differences.

    Args:
        fn: Closure recomputing the scalar output from the current input data
        inputs: Tensors to check (should be float64 and require grad)
        eps: Finite-difference step
        samples: Check at most this many coordinates per tensor (random, seeded)
        seed: RNG seed for the coordinate sample
        floor: Lower bound of the relative error denominator

    Returns:
        Maximum relative error |analytic - numeric| / max(|analytic|, |numeric|, floor)
    """
    inputs = list(inputs)
    for t in inputs:
        t.zero_grad()
    backward(fn())
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = np.arange(t.size)
        if samples is not None and samples < t.size:
            flat = rng.choice(t.size, size=samples, replace=False)
        for k in flat:
            index = np.unravel_index(int(k), t.shape)
            numeric = numeric_gradient(fn, t, index, eps)
            a = float(analytic[index])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
