"""
Tests for dataset loading and the seeded split.

Run with: python -m pytest lobekit/test_dataset.py
"""

import numpy as np
import pytest


def _fake_samples(n):
    from lobekit.dataset import make_sample
    from lobekit.volume_io import LabelMask, Volume

    return [make_sample(f'case_{i:03d}', Volume(np.full((2, 2, 2), i, np.int16)),
                        LabelMask(np.zeros((2, 2, 2), np.uint8))) for i in range(n)]


def test_split_is_seeded_and_disjoint():
    from lobekit.dataset import split_dataset

    samples = _fake_samples(10)
    train, test = split_dataset(samples, 0.8, seed=3)
    again = split_dataset(samples, 0.8, seed=3)
    assert [s.id for s in train] == [s.id for s in again[0]]
    assert len(train) == 8 and len(test) == 2
    assert not {s.id for s in train} & {s.id for s in test}


def test_small_splits_keep_both_parts():
    from lobekit.dataset import split_dataset

    for n in (2, 3):
        train, test = split_dataset(_fake_samples(n), 1.0, seed=0)
        assert train and test, f"{n} samples split into non-empty parts"
    train, test = split_dataset(_fake_samples(1), 0.8)
    assert len(train) == 1 and not test


def test_split_rejects_bad_input():
    from lobekit.dataset import split_dataset
    from lobekit.errors import EmptyDataset, InvalidConfig

    with pytest.raises(EmptyDataset):
        split_dataset([], 0.8)
    with pytest.raises(InvalidConfig):
        split_dataset(_fake_samples(3), 0.0)


def test_load_pairs_without_manifest(tmp_path):
    from lobekit.dataset import load_dataset
    from lobekit.volume_io import LabelMask, Volume, write_metaimage

    for name in ('b', 'a'):
        write_metaimage(Volume(np.zeros((2, 2, 2), np.int16)), tmp_path / f'{name}.mhd')
        write_metaimage(LabelMask(np.ones((2, 2, 2), np.uint8)), tmp_path / f'{name}_labels.mhd')
    write_metaimage(Volume(np.zeros((2, 2, 2), np.int16)), tmp_path / 'unpaired.mhd')
    samples = load_dataset(tmp_path)
    assert [s.id for s in samples] == ['a', 'b'], "sorted, unpaired volumes skipped"
    assert len(samples[0].sha256) == 64


def test_load_errors(tmp_path):
    from lobekit.dataset import load_dataset, make_sample
    from lobekit.errors import EmptyDataset, IoFailure, ShapeMismatch
    from lobekit.volume_io import LabelMask, Volume

    with pytest.raises(IoFailure):
        load_dataset(tmp_path / 'missing')
    with pytest.raises(EmptyDataset):
        load_dataset(tmp_path)
    with pytest.raises(ShapeMismatch):
        make_sample('x', Volume(np.zeros((2, 2, 2))), LabelMask(np.zeros((2, 2, 4), np.uint8)))


def test_phantom_directory_roundtrip(tmp_path):
    from lobekit.dataset import load_dataset
    from lobekit.phantom import PhantomConfig, write_dataset

    manifest = write_dataset(tmp_path, 3, PhantomConfig(dims=(8, 16, 16), seed=1))
    samples = load_dataset(tmp_path)
    assert [s.id for s in samples] == [c['id'] for c in manifest['cases']]
    assert [s.sha256 for s in samples] == [c['sha256'] for c in manifest['cases']], "hashes survive disk IO"
