"""
Volumetric containers, HU normalization, cropping and MetaImage IO.

Arrays are indexed (z, y, x) with z the slice axis. MetaImage headers list
sizes and spacings in (x, y, z) order; the conversion happens here and nowhere
else.
"""

import json
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .constants import HU_MAX, HU_MIN, NUM_CLASSES
from .errors import (
    IoFailure,
    InvalidLabel,
    MalformedHeader,
    RegionOutOfBounds,
    ShapeMismatch,
    SizeMismatch,
    UnsupportedElementType,
)

logger = logging.getLogger(__name__)

Triple = Tuple[float, float, float]

# MetaImage element type <-> little-endian numpy dtype
ELEMENT_TYPES = {
    'MET_SHORT': np.dtype('<i2'),
    'MET_UCHAR': np.dtype('u1'),
    'MET_FLOAT': np.dtype('<f4'),
}
_DTYPE_TO_ELEMENT = {dt.newbyteorder('='): name for name, dt in ELEMENT_TYPES.items()}

REQUIRED_KEYS = ('NDims', 'DimSize', 'ElementType', 'ElementSpacing', 'ElementDataFile')


def _as_triple(values, name: str, positive: bool = False) -> Tuple[float, float, float]:
    triple = tuple(float(v) for v in values)
    if len(triple) != 3:
        raise ShapeMismatch(f"{name} must have 3 components, got {len(triple)}")
    if positive and any(v <= 0 for v in triple):
        raise ShapeMismatch(f"{name} components must be > 0, got {triple}")
    return triple


def _freeze(data: np.ndarray, dtype=None) -> np.ndarray:
    arr = np.array(data, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Volume:
    """
    A 3D scalar grid with physical metadata.

    Attributes:
        data: (z, y, x) intensities, HU before normalization, [0, 1] after
        spacing: voxel size in mm, (z, y, x)
        origin: position of voxel (0, 0, 0) in mm, (z, y, x)
    """
    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeMismatch(f"Volume data must be a non-empty 3D array, got shape {data.shape}")
        object.__setattr__(self, 'data', _freeze(data))
        object.__setattr__(self, 'spacing', _as_triple(self.spacing, 'spacing', positive=True))
        object.__setattr__(self, 'origin', _as_triple(self.origin, 'origin'))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    def with_data(self, data: np.ndarray, **changes) -> 'Volume':
        """Copy of this container holding new voxel data."""
        return replace(self, data=data, **changes)


@dataclass(frozen=True, eq=False)
class LabelMask(Volume):
    """
    A 3D class grid, 0 = background and 1..5 = RU, RM, RL, LU, LL.
    """

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.size and (data.min() < 0 or data.max() >= NUM_CLASSES):
            bad = sorted(set(np.unique(data[(data < 0) | (data >= NUM_CLASSES)]).tolist()))
            raise InvalidLabel(f"label values must lie in 0..{NUM_CLASSES - 1}, found {bad}")
        if data.dtype != np.uint8:
            if not np.all(np.equal(np.mod(data, 1), 0)):
                raise InvalidLabel("label values must be integers")
            data = data.astype(np.uint8)
        object.__setattr__(self, 'data', data)
        super().__post_init__()


@dataclass(frozen=True, eq=False)
class BinaryMask(Volume):
    """A 3D boolean grid (morphology and hull intermediates)."""

    def __post_init__(self):
        object.__setattr__(self, 'data', np.asarray(self.data).astype(bool))
        super().__post_init__()


@dataclass(frozen=True)
class CropRegion:
    """
    Axis-aligned voxel box: lo inclusive, hi exclusive, both (z, y, x).
    """
    lo: Tuple[int, int, int]
    hi: Tuple[int, int, int]

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise RegionOutOfBounds(f"region corners must have 3 components: {lo}, {hi}")
        if any(l < 0 or l >= h for l, h in zip(lo, hi)):
            raise RegionOutOfBounds(f"region must satisfy 0 <= lo < hi, got lo={lo} hi={hi}")
        object.__setattr__(self, 'lo', lo)
        object.__setattr__(self, 'hi', hi)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def slices(self) -> Tuple[slice, slice, slice]:
        return tuple(slice(l, h) for l, h in zip(self.lo, self.hi))

    @classmethod
    def full(cls, dims) -> 'CropRegion':
        return cls((0, 0, 0), tuple(dims))

    def check_within(self, dims) -> None:
        if any(h > d for h, d in zip(self.hi, dims)):
            raise RegionOutOfBounds(f"region hi={self.hi} exceeds dims {tuple(dims)}")

    def compose(self, inner: 'CropRegion') -> 'CropRegion':
        """Region equivalent to cropping by self, then by `inner`."""
        inner.check_within(self.shape)
        return CropRegion(
            tuple(a + b for a, b in zip(self.lo, inner.lo)),
            tuple(a + b for a, b in zip(self.lo, inner.hi)),
        )

    def contains_mask(self, mask: np.ndarray) -> bool:
        """True if every nonzero voxel of a full-size mask lies inside the box."""
        outside = np.asarray(mask, dtype=bool).copy()
        outside[self.slices] = False
        return not outside.any()

    def to_dict(self, spacing: Optional[Triple] = None) -> Dict[str, Any]:
        doc = {'lo': list(self.lo), 'hi': list(self.hi)}
        if spacing is not None:
            doc['spacing'] = list(spacing)
        return doc

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'CropRegion':
        return cls(tuple(doc['lo']), tuple(doc['hi']))


def hu_normalize(volume: Volume, hu_lo: float = HU_MIN, hu_hi: float = HU_MAX) -> Volume:
    """
    Truncate HU to [hu_lo, hu_hi] and map linearly to [0, 1].

    Args:
        volume: Volume holding raw HU values
        hu_lo: Lower end of the window, maps to 0.0
        hu_hi: Upper end of the window, maps to 1.0

    Returns:
        float32 Volume with the same geometry
    """
    hu = np.clip(np.asarray(volume.data, dtype=np.float64), hu_lo, hu_hi)
    normalized = ((hu - hu_lo) / (hu_hi - hu_lo)).astype(np.float32)
    return Volume(normalized, volume.spacing, volume.origin)


def hu_denormalize(volume: Volume, hu_lo: float = HU_MIN, hu_hi: float = HU_MAX) -> Volume:
    """Inverse affine map of hu_normalize on the truncation window."""
    values = np.asarray(volume.data, dtype=np.float64)
    hu = (values * (hu_hi - hu_lo) + hu_lo).astype(np.float32)
    return Volume(hu, volume.spacing, volume.origin)


def crop(volume: Volume, region: CropRegion) -> Volume:
    """
    Extract a box from a volume or label mask.

    The origin moves by lo * spacing so physical positions are preserved.

    Raises:
        RegionOutOfBounds: if the region exceeds the volume dims
    """
    region.check_within(volume.dims)
    origin = tuple(o + l * s for o, l, s in zip(volume.origin, region.lo, volume.spacing))
    return volume.with_data(volume.data[region.slices], origin=origin)


def uncrop(volume: Volume, region: CropRegion, dims, fill=0) -> Volume:
    """Place a cropped container back into a grid of the original dims."""
    region.check_within(dims)
    if tuple(volume.dims) != region.shape:
        raise ShapeMismatch(f"cropped dims {volume.dims} do not match region shape {region.shape}")
    full = np.full(tuple(dims), fill, dtype=volume.data.dtype)
    full[region.slices] = volume.data
    origin = tuple(o - l * s for o, l, s in zip(volume.origin, region.lo, volume.spacing))
    return volume.with_data(full, origin=origin)


# ---------------------------------------------------------------------------
# MetaImage
# ---------------------------------------------------------------------------

def _format_floats(values) -> str:
    # repr gives the shortest decimal that round-trips
    return ' '.join(repr(float(v)) for v in values)


def _parse_header(path: Path) -> Dict[str, str]:
    header = {}
    try:
        text = path.read_text(encoding='ascii')
    except (OSError, UnicodeDecodeError) as e:
        raise IoFailure(f"cannot read header {path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if '=' not in line:
            raise MalformedHeader(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split('=', 1)
        header[key.strip()] = value.strip()
    return header


def read_metaimage(path: Union[str, os.PathLike], kind: str = 'auto') -> Volume:
    """
    Read a MetaImage header + raw pair.

    Args:
        path: Path to the .mhd header
        kind: 'volume', 'labels', or 'auto' (uint8 files load as LabelMask)

    Returns:
        Volume or LabelMask with dims, spacing, origin and data as stored

    Raises:
        MalformedHeader: missing or unparsable required key
        UnsupportedElementType: element type outside MET_SHORT/MET_UCHAR/MET_FLOAT
        SizeMismatch: raw length differs from DimSize x element size
    """
    path = Path(path)
    header = _parse_header(path)

    for key in REQUIRED_KEYS:
        if key not in header:
            raise MalformedHeader(f"{path}: missing required key {key}")
    if header.get('CompressedData', 'False').lower() == 'true':
        raise MalformedHeader(f"{path}: compressed MetaImage data is not supported")
    if header.get('BinaryDataByteOrderMSB', 'False').lower() == 'true':
        raise MalformedHeader(f"{path}: big-endian data is not supported")

    try:
        ndims = int(header['NDims'])
        dim_size = [int(v) for v in header['DimSize'].split()]
        spacing_xyz = [float(v) for v in header['ElementSpacing'].split()]
        offset_key = next((k for k in ('Offset', 'Origin', 'Position') if k in header), None)
        offset_xyz = [float(v) for v in header[offset_key].split()] if offset_key else [0.0] * 3
    except ValueError as e:
        raise MalformedHeader(f"{path}: {e}") from e
    if ndims != 3 or len(dim_size) != 3 or len(spacing_xyz) != 3 or len(offset_xyz) != 3:
        raise MalformedHeader(f"{path}: only 3D images are supported (NDims={ndims})")
    if any(d < 1 for d in dim_size):
        raise MalformedHeader(f"{path}: DimSize must be positive, got {dim_size}")

    element_type = header['ElementType']
    if element_type not in ELEMENT_TYPES:
        raise UnsupportedElementType(f"{path}: unsupported ElementType {element_type}")
    dtype = ELEMENT_TYPES[element_type]

    data_file = header['ElementDataFile']
    if data_file.upper() == 'LOCAL':
        raise MalformedHeader(f"{path}: inline (LOCAL) data is not supported")
    raw_path = path.parent / data_file
    try:
        raw = raw_path.read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read raw data {raw_path}: {e}") from e

    x, y, z = dim_size
    expected = x * y * z * dtype.itemsize
    if len(raw) != expected:
        raise SizeMismatch(
            f"{raw_path}: {len(raw)} bytes, expected {expected} for DimSize {dim_size} {element_type}"
        )

    data = np.frombuffer(raw, dtype=dtype).reshape(z, y, x).astype(dtype.newbyteorder('='))
    spacing = tuple(reversed(spacing_xyz))
    origin = tuple(reversed(offset_xyz))

    if kind == 'auto':
        kind = 'labels' if element_type == 'MET_UCHAR' else 'volume'
    if kind == 'labels':
        return LabelMask(data, spacing, origin)
    if kind == 'volume':
        return Volume(data, spacing, origin)
    raise ValueError(f"kind must be 'auto', 'volume' or 'labels', got {kind!r}")


def write_metaimage(
    volume: Volume,
    path: Union[str, os.PathLike],
    provenance: Optional[Dict[str, Any]] = None,
) -> None:
    """
    Write a MetaImage header (.mhd) and raw file (.raw) side by side.

    Args:
        volume: Volume or LabelMask with int16, uint8 or float32 data
        path: Destination .mhd path; the raw file shares its stem
        provenance: Optional dict written to a .json sidecar

    Raises:
        InvalidLabel: a LabelMask holding values outside 0..5
        UnsupportedElementType: data dtype outside the supported set
        IoFailure: the files cannot be written
    """
    path = Path(path)
    data = np.asarray(volume.data)
    if isinstance(volume, LabelMask) and data.size and int(data.max()) >= NUM_CLASSES:
        raise InvalidLabel(f"label mask holds value {int(data.max())}")
    if data.dtype == bool:
        data = data.astype(np.uint8)
    element_type = _DTYPE_TO_ELEMENT.get(data.dtype.newbyteorder('='))
    if element_type is None:
        raise UnsupportedElementType(f"cannot write dtype {data.dtype} as MetaImage")

    raw_path = path.with_suffix('.raw')
    z, y, x = data.shape
    lines = [
        'ObjectType = Image',
        'NDims = 3',
        'BinaryData = True',
        'BinaryDataByteOrderMSB = False',
        'CompressedData = False',
        f'Offset = {_format_floats(reversed(volume.origin))}',
        f'ElementSpacing = {_format_floats(reversed(volume.spacing))}',
        f'DimSize = {x} {y} {z}',
        f'ElementType = {element_type}',
        f'ElementDataFile = {raw_path.name}',
    ]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        raw_path.write_bytes(np.ascontiguousarray(data, dtype=ELEMENT_TYPES[element_type]).tobytes())
        path.write_text('\n'.join(lines) + '\n', encoding='ascii')
        if provenance is not None:
            path.with_suffix('.json').write_text(json.dumps(provenance, indent=2, default=str))
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
    logger.debug("wrote metaimage", extra={'path': str(path), 'dims': [z, y, x], 'type': element_type})


def read_provenance(path: Union[str, os.PathLike]) -> Optional[Dict[str, Any]]:
    """Load the optional JSON sidecar of a MetaImage file; None if absent."""
    sidecar = Path(path).with_suffix('.json')
    if not sidecar.exists():
        return None
    try:
        return json.loads(sidecar.read_text())
    except (OSError, ValueError) as e:
        raise IoFailure(f"cannot read provenance {sidecar}: {e}") from e
