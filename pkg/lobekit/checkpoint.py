"""
Parameter checkpoint file.

Layout (all integers little-endian):

    magic          8 bytes   b'LOBECKPT'
    version        uint32
    meta_length    uint32
    metadata       meta_length bytes of UTF-8 JSON
    tensor_count   uint32
    per tensor:
        name_length  uint16
        name         UTF-8
        ndim         uint8
        dims         ndim x uint32
        data         prod(dims) x float32, C order

The metadata block holds the network spec plus whatever the caller adds
(ablation mode, preprocess config, training config).
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .errors import IoFailure, MalformedHeader
from .model import LobeNet, LobeNetSpec

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def save_checkpoint(net: LobeNet, path: PathLike, metadata: Optional[Dict[str, Any]] = None) -> None:
    """Write the network parameters and running statistics as float32."""
    meta = dict(metadata or {})
    meta['model'] = net.spec.to_dict()
    meta['format_version'] = CHECKPOINT_VERSION
    meta_bytes = json.dumps(meta, sort_keys=True).encode('utf-8')

    state = net.state_dict()
    chunks = [CHECKPOINT_MAGIC, struct.pack('<II', CHECKPOINT_VERSION, len(meta_bytes)), meta_bytes,
              struct.pack('<I', len(state))]
    for name, array in state.items():
        encoded = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(encoded)) + encoded)
        chunks.append(struct.pack('<B', array.ndim) + struct.pack(f'<{array.ndim}I', *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype='<f4').tobytes())

    try:
        Path(path).write_bytes(b''.join(chunks))
    except OSError as e:
        raise IoFailure(f"cannot write checkpoint {path}: {e}") from e
    logger.info("checkpoint saved", extra={'event': 'checkpoint', 'path': str(path), 'tensors': len(state)})


def read_checkpoint(path: PathLike) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Parse a checkpoint file.

    Returns:
        (metadata, {name: float32 array})

    Raises:
        IoFailure: file cannot be read
        MalformedHeader: wrong magic, unsupported version or truncated content
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read checkpoint {path}: {e}") from e

    if not blob.startswith(CHECKPOINT_MAGIC):
        raise MalformedHeader(f"{path} is not a lobekit checkpoint")
    try:
        pos = len(CHECKPOINT_MAGIC)
        version, meta_len = struct.unpack_from('<II', blob, pos)
        pos += 8
        if version != CHECKPOINT_VERSION:
            raise MalformedHeader(f"unsupported checkpoint version {version}")
        metadata = json.loads(blob[pos:pos + meta_len].decode('utf-8'))
        pos += meta_len
        (count,) = struct.unpack_from('<I', blob, pos)
        pos += 4

        tensors: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from('<H', blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode('utf-8')
            pos += name_len
            (ndim,) = struct.unpack_from('<B', blob, pos)
            pos += 1
            shape = struct.unpack_from(f'<{ndim}I', blob, pos)
            pos += 4 * ndim
            nbytes = 4 * int(np.prod(shape))
            if pos + nbytes > len(blob):
                raise MalformedHeader(f"checkpoint truncated inside tensor {name!r}")
            tensors[name] = np.frombuffer(blob, dtype='<f4', count=nbytes // 4, offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedHeader(f"corrupt checkpoint {path}: {e}") from e
    return metadata, tensors


def load_checkpoint(path: PathLike) -> Tuple[LobeNet, Dict[str, Any]]:
    """Rebuild the network stored in a checkpoint, in eval mode."""
    metadata, tensors = read_checkpoint(path)
    net = LobeNet(LobeNetSpec.from_dict(metadata['model']))
    net.load_state_dict(tensors)
    return net.eval(), metadata
