"""
Tests for the synthetic five-lobe phantoms.

Run with: python -m pytest lobekit/test_phantom.py
"""

import json

import numpy as np
import pytest


def _mean_z(labels, c):
    return np.nonzero(labels == c)[0].mean()


def test_every_class_is_present():
    from lobekit.phantom import PhantomConfig, generate

    for seed in range(5):
        _, labels = generate(PhantomConfig(dims=(16, 32, 32), seed=seed))
        assert set(np.unique(labels.data)) == set(range(6)), f"seed {seed}"
    volume, labels = generate(PhantomConfig(dims=(8, 8, 8), seed=0))
    assert volume.dims == labels.dims == (8, 8, 8)
    assert set(np.unique(labels.data)) <= set(range(6))


def test_lobe_layout():
    from lobekit.phantom import PhantomConfig, generate_case

    case = generate_case(PhantomConfig(dims=(32, 64, 64), seed=2))
    labels = case.labels.data
    xs = {c: np.nonzero(labels == c)[2].mean() for c in range(1, 6)}
    assert all(xs[c] < 31.5 for c in (1, 2, 3)), "right lung at small x"
    assert all(xs[c] > 31.5 for c in (4, 5)), "left lung at large x"
    assert _mean_z(labels, 3) < _mean_z(labels, 1), "RL lies below RU"
    assert _mean_z(labels, 2) < _mean_z(labels, 1), "RM lies below RU"
    assert _mean_z(labels, 5) < _mean_z(labels, 4), "LL lies below LU"
    np.testing.assert_array_equal(labels > 0, case.lung)


def test_intensities_and_dtype():
    from lobekit.constants import PHANTOM_BODY_HU, PHANTOM_LUNG_HU
    from lobekit.phantom import PhantomConfig, generate_case

    case = generate_case(PhantomConfig(dims=(16, 32, 32), seed=0))
    hu = case.volume.data
    assert hu.dtype == np.int16
    assert case.volume.spacing == (2.5, 0.7, 0.7)
    parenchyma = case.lung & ~case.fissures
    assert abs(hu[parenchyma].mean() - PHANTOM_LUNG_HU) < 5
    body = (hu > -300) & ~case.lung
    assert abs(hu[body].mean() - PHANTOM_BODY_HU) < 5
    assert case.fissures.any(), "complete fissures are rendered"
    assert np.all(case.fissures <= case.lung)


def test_generation_is_seeded():
    from lobekit.phantom import PhantomConfig, generate

    a = generate(PhantomConfig(dims=(8, 16, 16), seed=11))
    b = generate(PhantomConfig(dims=(8, 16, 16), seed=11))
    c = generate(PhantomConfig(dims=(8, 16, 16), seed=12))
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)
    assert not np.array_equal(a[0].data, c[0].data)


def test_incomplete_fissures_are_hidden():
    from lobekit.phantom import PhantomConfig, generate_case

    full = generate_case(PhantomConfig(dims=(16, 32, 32), seed=5))
    none = generate_case(PhantomConfig(dims=(16, 32, 32), seed=5, incompleteness=1.0))
    half = generate_case(PhantomConfig(dims=(16, 32, 32), seed=5, incompleteness=0.5))
    assert not none.fissures.any(), "fully incomplete fissures are invisible"
    assert 0 < half.fissures.sum() < full.fissures.sum()
    assert set(np.unique(none.labels.data)) == set(range(6)), "lobes still exist without visible fissures"


def test_external_domain_is_shifted():
    from lobekit.phantom import PhantomConfig, generate_case

    std = generate_case(PhantomConfig(dims=(16, 32, 32), seed=1))
    ext = generate_case(PhantomConfig(dims=(16, 32, 32), seed=1, domain='external'))
    parenchyma = ext.lung & ~ext.fissures
    assert ext.volume.data[parenchyma].mean() > std.volume.data[std.lung & ~std.fissures].mean() + 30
    assert ext.volume.data[parenchyma].std() > std.volume.data[std.lung & ~std.fissures].std()


def test_invalid_configs():
    from lobekit.errors import InvalidConfig
    from lobekit.phantom import PhantomConfig, generate

    for cfg in (PhantomConfig(dims=(9, 16, 16)), PhantomConfig(dims=(6, 16, 16)),
                PhantomConfig(domain='hospital'), PhantomConfig(incompleteness=1.5)):
        with pytest.raises(InvalidConfig):
            generate(cfg)
    with pytest.raises(InvalidConfig):
        PhantomConfig.from_dict({'size': 3})
    cfg = PhantomConfig(dims=(8, 16, 16), seed=3)
    assert PhantomConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_write_dataset_does_not_depend_on_worker_count(tmp_path):
    from lobekit.phantom import PhantomConfig, case_seeds, write_dataset
    from lobekit.volume_io import read_provenance

    cfg = PhantomConfig(dims=(8, 16, 16), seed=7)
    serial = write_dataset(tmp_path / 'serial', 3, cfg, threads=1)
    pooled = write_dataset(tmp_path / 'pooled', 3, cfg, threads=2)
    assert [c['sha256'] for c in serial['cases']] == [c['sha256'] for c in pooled['cases']]
    assert [c['seed'] for c in serial['cases']] == case_seeds(7, 3)
    assert json.loads((tmp_path / 'serial' / 'manifest.json').read_text()) == serial
    assert read_provenance(tmp_path / 'serial' / 'case_000.mhd')['case'] == 'case_000'


@pytest.mark.parametrize('incompleteness', [0.0, 0.5, 1.0])
def test_every_lobe_is_one_connected_region(incompleteness):
    from scipy import ndimage

    from lobekit.phantom import PhantomConfig, generate_case

    for seed in range(20):
        case = generate_case(PhantomConfig(dims=(32, 64, 64), seed=seed, incompleteness=incompleteness))
        labels = case.labels.data
        for c in range(1, 6):
            _, count = ndimage.label(labels == c)
            assert count == 1, f"seed {seed}: lobe {c} has {count} pieces"
        np.testing.assert_array_equal(labels > 0, case.lung)


def test_detached_lobe_piece_joins_its_neighbour():
    from lobekit.phantom import _connect_lobes

    labels = np.zeros((1, 4, 8), dtype=np.uint8)
    labels[0, :, 0:4] = 1
    labels[0, :, 4:8] = 2
    labels[0, 1:3, 6] = 1  # island of lobe 1 inside lobe 2
    fixed = _connect_lobes(labels)
    assert (fixed[0, 1:3, 6] == 2).all()
    assert (fixed[0, :, :4] == 1).all()
    np.testing.assert_array_equal(fixed > 0, labels > 0)
