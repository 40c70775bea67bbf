"""
Synthetic five-lobe chest phantoms.

A phantom is a soft-tissue body (an elliptic cylinder along z that runs out of
the x borders) holding two lung ellipsoids on a background of air. The right
lung (small x) is cut by an oblique and a near-horizontal plane into RU, RM and
RL; the left lung by one oblique plane into LU and LL. Fissures are rendered as
thin brighter sheets; `incompleteness` hides part of each sheet and makes the
label boundary wavy there; pieces of a lobe cut off by the wave are handed to
the lobe they touch, so every lobe stays one connected region. Everything is
drawn from one seeded generator.
"""

import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from .constants import (
    EXTERNAL_BODY_OFFSET_HU,
    EXTERNAL_JITTER_FACTOR,
    EXTERNAL_LUNG_OFFSET_HU,
    EXTERNAL_NOISE_FACTOR,
    LOBE_CODES,
    PHANTOM_AIR_HU,
    PHANTOM_BODY_HU,
    PHANTOM_DEFAULT_DIMS,
    PHANTOM_DEFAULT_SPACING,
    PHANTOM_FISSURE_HU,
    PHANTOM_LUNG_HU,
    PHANTOM_NOISE_SIGMA,
)
from .dataset import content_hash
from .errors import InvalidConfig
from .volume_io import LabelMask, Volume, write_metaimage

logger = logging.getLogger(__name__)

DOMAINS = ('standard', 'external')

# body cross-section semi-axes as fractions of (Y, X); x > 0.5 so the body touches the x borders
_BODY_SEMI_AXES = (0.40, 0.55)
_FISSURE_HALF_WIDTH = 0.5  # voxels
_WAVE_AMPLITUDE = 0.15  # label boundary displacement where the fissure is hidden, lung units


@dataclass
class PhantomConfig:
    """
    Phantom generator parameters.

    Attributes:
        dims: (z, y, x) voxel counts, each even and >= 8
        spacing: Voxel size in mm
        seed: Generator seed
        domain: 'standard' or 'external' (noisier, shifted HU, more jitter)
        center_jitter: Lung center jitter as a fraction of each dim
        radius_z, radius_y, radius_x: Lung semi-axis ranges as fractions of each dim
        lung_gap: Half of the gap between the lungs as a fraction of X (at least 2 voxels)
        fissure_jitter_deg: Orientation jitter of the fissure planes
        lower_fraction: Range of the lower lobe's share of each lung
        middle_fraction: Range of RM's share of the right lung above the oblique fissure
        incompleteness: Hidden share of each fissure sheet, 0..1
        noise_sigma: Gaussian noise in HU
        body_hu, lung_hu, air_hu, fissure_hu: Tissue intensities in HU
    """
    dims: Tuple[int, int, int] = PHANTOM_DEFAULT_DIMS
    spacing: Tuple[float, float, float] = PHANTOM_DEFAULT_SPACING
    seed: int = 0
    domain: str = 'standard'
    center_jitter: float = 0.03
    radius_z: Tuple[float, float] = (0.30, 0.36)
    radius_y: Tuple[float, float] = (0.22, 0.28)
    radius_x: Tuple[float, float] = (0.14, 0.17)
    lung_gap: float = 0.06
    fissure_jitter_deg: float = 8.0
    lower_fraction: Tuple[float, float] = (0.40, 0.55)
    middle_fraction: Tuple[float, float] = (0.30, 0.45)
    incompleteness: float = 0.0
    noise_sigma: float = PHANTOM_NOISE_SIGMA
    body_hu: float = PHANTOM_BODY_HU
    lung_hu: float = PHANTOM_LUNG_HU
    air_hu: float = PHANTOM_AIR_HU
    fissure_hu: float = PHANTOM_FISSURE_HU

    def validate(self) -> None:
        if len(self.dims) != 3 or any(int(d) != d or d < 8 or d % 2 for d in self.dims):
            raise InvalidConfig(f"dims must be three even integers >= 8, got {self.dims}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise InvalidConfig(f"spacing must be three positive values, got {self.spacing}")
        if self.domain not in DOMAINS:
            raise InvalidConfig(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        if not 0.0 <= self.incompleteness <= 1.0:
            raise InvalidConfig(f"incompleteness must lie in [0, 1], got {self.incompleteness}")
        if self.noise_sigma < 0 or self.center_jitter < 0 or self.fissure_jitter_deg < 0:
            raise InvalidConfig("noise_sigma, center_jitter and fissure_jitter_deg must be >= 0")
        for name in ('radius_z', 'radius_y', 'radius_x', 'lower_fraction', 'middle_fraction'):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi < 1:
                raise InvalidConfig(f"{name} must satisfy 0 < lo <= hi < 1, got {(lo, hi)}")
        if self.lung_gap <= 0:
            raise InvalidConfig("lung_gap must be positive")

    def profile(self) -> 'PhantomConfig':
        """The parameters actually used for generation (domain shifts applied)."""
        if self.domain == 'standard':
            return self
        return replace(
            self,
            noise_sigma=self.noise_sigma * EXTERNAL_NOISE_FACTOR,
            body_hu=self.body_hu + EXTERNAL_BODY_OFFSET_HU,
            lung_hu=self.lung_hu + EXTERNAL_LUNG_OFFSET_HU,
            fissure_hu=self.fissure_hu + EXTERNAL_LUNG_OFFSET_HU,
            center_jitter=self.center_jitter * EXTERNAL_JITTER_FACTOR,
            fissure_jitter_deg=self.fissure_jitter_deg * EXTERNAL_JITTER_FACTOR,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'PhantomConfig':
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidConfig(f"unknown phantom keys: {sorted(unknown)}")
        cfg = cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})
        cfg.validate()
        return cfg


class PhantomCase(NamedTuple):
    """Generated phantom plus the generative masks used to build it."""
    volume: Volume  # int16 HU
    labels: LabelMask
    lung: np.ndarray  # bool, union of both lungs
    fissures: np.ndarray  # bool, rendered fissure voxels


def _split_threshold(scores: np.ndarray, fraction: float) -> float:
    """Quantile threshold keeping both sides of `scores < t` non-empty."""
    distinct = np.unique(scores)
    if distinct.size < 2:
        raise InvalidConfig("phantom dims too small to split a lung into lobes")
    t = float(np.quantile(scores, fraction))
    return float(np.clip(t, distinct[1], distinct[-1]))


class _Lung:
    """One lung ellipsoid, with voxel coordinates normalized to its semi-axes."""

    def __init__(self, grid, center, radii, body):
        zz, yy, xx = grid
        self.center = np.asarray(center)
        self.radii = np.asarray(radii)
        self.mask = (
            ((zz - center[0]) / radii[0]) ** 2
            + ((yy - center[1]) / radii[1]) ** 2
            + ((xx - center[2]) / radii[2]) ** 2
        ) <= 1.0
        self.mask &= body
        idx = np.nonzero(self.mask)
        self.index = idx
        # u toward the head, v toward the back, w toward +x
        self.u, self.v, self.w = ((np.asarray(i, dtype=np.float64) - c) / r for i, c, r in zip(idx, center, radii))

    def plane(self, normal_uvw) -> Tuple[np.ndarray, float]:
        """Signed plane score per lung voxel and its gradient norm in voxel units."""
        a, b, c = normal_uvw
        score = a * self.u + b * self.v + c * self.w
        grad = float(np.sqrt((a / self.radii[0]) ** 2 + (b / self.radii[1]) ** 2 + (c / self.radii[2]) ** 2))
        return score, grad


def _fissure(
    lung: _Lung,
    score: np.ndarray,
    grad: float,
    subset: np.ndarray,
    fraction: float,
    hidden: np.ndarray,
    phase: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split `subset` of a lung's voxels by a plane score.

    Returns:
        (below, sheet): voxels on the low side of the (possibly wavy)
        boundary, and visible fissure-sheet voxels
    """
    wave = _WAVE_AMPLITUDE * np.sin(3.0 * np.pi * lung.w + phase) * hidden
    labelled = score + wave
    t = _split_threshold(labelled[subset], fraction)
    below = subset & (labelled < t)
    sheet = subset & ~hidden & (np.abs(score - t) / grad < _FISSURE_HALF_WIDTH)
    return below, sheet


def _connect_lobes(labels: np.ndarray) -> np.ndarray:
    """
    Keep the largest face-connected piece of every lobe.

    Detached pieces, cut off by a wavy boundary, are regrown from the
    neighbouring lobes so every lobe is a single component and the union of
    lobes is unchanged.
    """
    out = labels.copy()
    lung = labels > 0
    for code in np.unique(labels[lung]):
        pieces, count = ndimage.label(labels == code)
        if count > 1:
            sizes = np.bincount(pieces.ravel())
            sizes[0] = 0
            out[(pieces > 0) & (pieces != sizes.argmax())] = 0
    orphan = lung & (out == 0)
    if not orphan.any():
        return out
    logger.debug("regrowing detached lobe pieces", extra={'voxels': int(orphan.sum())})

    cross = ndimage.generate_binary_structure(3, 1)
    while orphan.any():
        grown = ndimage.grey_dilation(out, footprint=cross)
        step = orphan & (grown > 0)
        if not step.any():
            break
        out[step] = grown[step]
        orphan &= ~step
    if orphan.any():
        # unreachable through the lung; nearest labelled voxel
        nearest = ndimage.distance_transform_edt(out == 0, return_distances=False, return_indices=True)
        out[orphan] = out[tuple(i[orphan] for i in nearest)]
    return out


def generate_case(cfg: Optional[PhantomConfig] = None) -> PhantomCase:
    """
    Build one phantom and its generative masks.

    Raises:
        InvalidConfig: invalid parameters, or dims too small to hold five lobes
    """
    cfg = cfg or PhantomConfig()
    cfg.validate()
    p = cfg.profile()
    rng = np.random.default_rng(cfg.seed)
    nz, ny, nx = (int(d) for d in cfg.dims)
    grid = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing='ij')
    _, yy, xx = grid
    cy, cx = (ny - 1) / 2.0, (nx - 1) / 2.0

    body = (((yy - cy) / (_BODY_SEMI_AXES[0] * ny)) ** 2 + ((xx - cx) / (_BODY_SEMI_AXES[1] * nx)) ** 2) <= 1.0
    hu = np.full(cfg.dims, p.air_hu, dtype=np.float64)
    hu[body] = p.body_hu

    labels = np.zeros(cfg.dims, dtype=np.uint8)
    fissures = np.zeros(cfg.dims, dtype=bool)
    lung_union = np.zeros(cfg.dims, dtype=bool)
    half_gap = max(2.0, p.lung_gap * nx)

    for side in ('right', 'left'):
        radii = (
            rng.uniform(*p.radius_z) * nz,
            rng.uniform(*p.radius_y) * ny,
            rng.uniform(*p.radius_x) * nx,
        )
        jitter = rng.uniform(-p.center_jitter, p.center_jitter, size=2)
        offset = half_gap + radii[2]
        center = (
            (nz - 1) / 2.0 + jitter[0] * nz,
            cy + jitter[1] * ny,
            cx - offset if side == 'right' else cx + offset,
        )
        lung = _Lung(grid, center, radii, body)
        if lung.index[0].size < 4:
            raise InvalidConfig(f"phantom dims {cfg.dims} too small for the {side} lung")

        everywhere = np.ones(lung.u.shape, dtype=bool)
        hidden = (lung.w + 1.0) / 2.0 < p.incompleteness

        # oblique fissure: lower lobe is inferior and posterior
        theta = np.radians(45.0 + rng.uniform(-p.fissure_jitter_deg, p.fissure_jitter_deg))
        tilt = rng.uniform(-0.1, 0.1)
        score, grad = lung.plane((np.cos(theta), -np.sin(theta), tilt))
        lower, sheet = _fissure(lung, score, grad, everywhere, rng.uniform(*p.lower_fraction),
                                hidden, rng.uniform(0, 2 * np.pi))
        lobe = np.empty(lung.u.shape, dtype=np.uint8)

        if side == 'left':
            lobe[:] = LOBE_CODES['LU']
            lobe[lower] = LOBE_CODES['LL']
        else:
            # horizontal fissure splits the part above the oblique one into RU / RM
            phi = np.radians(rng.uniform(-p.fissure_jitter_deg, p.fissure_jitter_deg))
            h_score, h_grad = lung.plane((np.cos(phi), np.sin(phi), 0.0))
            middle, h_sheet = _fissure(lung, h_score, h_grad, ~lower, rng.uniform(*p.middle_fraction),
                                       hidden, rng.uniform(0, 2 * np.pi))
            lobe[:] = LOBE_CODES['RU']
            lobe[middle] = LOBE_CODES['RM']
            lobe[lower] = LOBE_CODES['RL']
            sheet |= h_sheet

        labels[lung.index] = lobe
        hu[lung.index] = np.where(sheet, p.fissure_hu, p.lung_hu)
        fissures[lung.index] = sheet
        lung_union |= lung.mask

    labels = _connect_lobes(labels)

    if p.noise_sigma > 0:
        hu += rng.normal(0.0, p.noise_sigma, size=hu.shape)
    info = np.iinfo(np.int16)
    data = np.clip(np.rint(hu), info.min, info.max).astype(np.int16)

    return PhantomCase(
        Volume(data, cfg.spacing),
        LabelMask(labels, cfg.spacing),
        lung_union,
        fissures,
    )


def generate(cfg: Optional[PhantomConfig] = None) -> Tuple[Volume, LabelMask]:
    """(HU volume, label mask) pair for one seed."""
    case = generate_case(cfg)
    return case.volume, case.labels


def case_seeds(seed: int, n: int) -> List[int]:
    """Independent per-case seeds derived from one dataset seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def _write_case(out_dir: str, case_id: str, cfg: PhantomConfig) -> Dict[str, Any]:
    volume, labels = generate(cfg)
    out = Path(out_dir)
    provenance = {'generator': 'lobekit.phantom', 'case': case_id, 'config': cfg.to_dict()}
    write_metaimage(volume, out / f'{case_id}.mhd', provenance)
    write_metaimage(labels, out / f'{case_id}_labels.mhd', provenance)
    return {
        'id': case_id,
        'volume': f'{case_id}.mhd',
        'labels': f'{case_id}_labels.mhd',
        'seed': cfg.seed,
        'sha256': content_hash(volume),
    }


def write_dataset(
    out_dir: Union[str, Path],
    n: int,
    cfg: Optional[PhantomConfig] = None,
    threads: int = 1,
    progress_callback: Optional[Callable[[int, int, str], None]] = None,
) -> Dict[str, Any]:
    """
    Generate `n` phantoms into a directory with a manifest.json.

    Case i uses the i-th seed of case_seeds(cfg.seed, n), so the dataset does
    not depend on `threads`.

    Returns:
        The manifest document
    """
    from .workers import Job, run_workers

    cfg = cfg or PhantomConfig()
    cfg.validate()
    if n < 1:
        raise InvalidConfig(f"number of phantoms must be positive, got {n}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    jobs = [
        Job(_write_case, (str(out), f'case_{i:03d}', replace(cfg, seed=s)), name=f'case_{i:03d}')
        for i, s in enumerate(case_seeds(cfg.seed, n))
    ]
    cases = run_workers(jobs, threads=threads, progress_callback=progress_callback)
    manifest = {'generator': 'lobekit.phantom', 'config': cfg.to_dict(), 'cases': cases}
    (out / 'manifest.json').write_text(json.dumps(manifest, indent=2))
    logger.info("phantom dataset written", extra={'event': 'phantom-gen', 'cases': n, 'dir': str(out),
                                                   'domain': cfg.domain})
    return manifest
