"""
Paired (volume, labels) datasets on disk.

A dataset directory holds `<id>.mhd` volumes with `<id>_labels.mhd` masks,
optionally listed in a manifest.json (as written by phantom-gen).
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import List, NamedTuple, Tuple, Union

import numpy as np

from .constants import TRAIN_FRACTION
from .errors import EmptyDataset, InvalidConfig, IoFailure, MalformedHeader, ShapeMismatch
from .volume_io import LabelMask, Volume, read_metaimage

logger = logging.getLogger(__name__)

LABEL_SUFFIX = '_labels'


class Sample(NamedTuple):
    """One training or test case."""
    id: str
    volume: Volume
    labels: LabelMask
    sha256: str  # of the volume's voxel bytes as loaded


def content_hash(volume: Volume) -> str:
    return hashlib.sha256(np.ascontiguousarray(volume.data).tobytes()).hexdigest()


def make_sample(case_id: str, volume: Volume, labels: LabelMask) -> Sample:
    if volume.dims != labels.dims:
        raise ShapeMismatch(f"{case_id}: volume dims {volume.dims} differ from label dims {labels.dims}")
    return Sample(case_id, volume, labels, content_hash(volume))


def _pairs(directory: Path) -> List[Tuple[str, Path, Path]]:
    manifest = directory / 'manifest.json'
    if manifest.exists():
        try:
            doc = json.loads(manifest.read_text())
            return [(c['id'], directory / c['volume'], directory / c['labels']) for c in doc['cases']]
        except (ValueError, KeyError, TypeError) as e:
            raise MalformedHeader(f"{manifest}: {e}") from e
    pairs = []
    for header in sorted(directory.glob('*.mhd')):
        if header.stem.endswith(LABEL_SUFFIX):
            continue
        labels = header.with_name(header.stem + LABEL_SUFFIX + '.mhd')
        if labels.exists():
            pairs.append((header.stem, header, labels))
    return pairs


def load_dataset(directory: Union[str, Path]) -> List[Sample]:
    """
    Load every (volume, labels) pair of a directory, sorted by case id.

    Raises:
        IoFailure: the directory does not exist
        EmptyDataset: no pair was found
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise IoFailure(f"dataset directory {directory} does not exist")
    samples = []
    for case_id, volume_path, labels_path in _pairs(directory):
        volume = read_metaimage(volume_path, kind='volume')
        labels = read_metaimage(labels_path, kind='labels')
        samples.append(make_sample(case_id, volume, labels))
    if not samples:
        raise EmptyDataset(f"no volume/label pairs in {directory}")
    logger.info("dataset loaded", extra={'event': 'dataset', 'dir': str(directory), 'cases': len(samples)})
    return sorted(samples, key=lambda s: s.id)


def split_dataset(
    samples: List[Sample], train_fraction: float = TRAIN_FRACTION, seed: int = 0
) -> Tuple[List[Sample], List[Sample]]:
    """
    Seeded train/test split; both parts are non-empty when there are two or more samples.
    """
    if not 0.0 < train_fraction <= 1.0:
        raise InvalidConfig(f"train_fraction must lie in (0, 1], got {train_fraction}")
    if not samples:
        raise EmptyDataset("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_train = int(round(train_fraction * len(samples)))
    if len(samples) >= 2:
        n_train = min(max(n_train, 1), len(samples) - 1)
    train = [samples[i] for i in sorted(order[:n_train])]
    test = [samples[i] for i in sorted(order[n_train:])]
    return train, test
