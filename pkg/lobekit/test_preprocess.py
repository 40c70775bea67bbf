"""
Tests for OTSU thresholding and the lung cropping pipeline.

Run with: python -m pytest lobekit/test_preprocess.py
"""

import numpy as np
import pytest


def _otsu_oracle(values, bins=256):
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    centers = [(edges[i] + edges[i + 1]) / 2.0 for i in range(bins)]
    total = float(sum(counts))
    best_t, best = None, -1.0
    for t in range(1, bins):
        n0 = float(sum(counts[:t]))
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        mu0 = sum(counts[i] * centers[i] for i in range(t)) / n0
        mu1 = sum(counts[i] * centers[i] for i in range(t, bins)) / n1
        between = (n0 / total) * (n1 / total) * (mu0 - mu1) ** 2
        if between > best * (1 + 1e-12):
            best_t, best = t, between
    return float(edges[best_t])


def _volume(values):
    from lobekit.volume_io import Volume

    values = np.asarray(values, dtype=np.float32)
    return Volume(values.reshape(1, 1, -1))


def test_otsu_two_populations():
    from lobekit.preprocess import otsu_threshold

    t = otsu_threshold(_volume([0.0] * 100 + [1.0] * 100))
    assert 0.0 < t <= 1.0 - 1.0 / 256, "threshold separates {0} from {1}"
    assert t == _otsu_oracle(np.array([0.0] * 100 + [1.0] * 100)), "lowest edge wins on the plateau"

    t = otsu_threshold(_volume([0.1] * 900 + [0.9] * 100))
    assert 0.1 < t < 0.9


def test_otsu_matches_exhaustive_scan():
    from lobekit.preprocess import otsu_threshold

    rng = np.random.default_rng(11)
    for trial in range(50):
        levels = rng.integers(0, 256, size=int(rng.integers(2, 6))) / 255.0
        weights = rng.integers(1, 200, size=levels.size)
        values = np.repeat(levels, weights) + rng.normal(0, 0.02, weights.sum())
        values = np.clip(values, 0.0, 1.0)
        if np.count_nonzero(np.histogram(values, bins=256, range=(0, 1))[0]) < 2:
            continue
        assert otsu_threshold(_volume(values)) == _otsu_oracle(values), f"trial {trial}"


def test_otsu_rejects_flat_volume():
    from lobekit.errors import DegenerateHistogram
    from lobekit.preprocess import otsu_threshold

    with pytest.raises(DegenerateHistogram):
        otsu_threshold(_volume([0.5] * 64))


def test_crop_keeps_every_lung_voxel():
    from lobekit.phantom import PhantomConfig, generate_case
    from lobekit.preprocess import lung_crop_pipeline

    for seed in range(20):
        case = generate_case(PhantomConfig(dims=(16, 64, 64), seed=seed))
        result = lung_crop_pipeline(case.volume)
        assert result.region.contains_mask(case.lung), f"seed {seed}: lung voxel outside the crop"
        assert np.all(result.hull.data[case.lung]), f"seed {seed}: lung voxel outside the hull"
        kept = np.prod(result.region.shape) / np.prod(case.volume.dims)
        assert kept <= 0.6, f"seed {seed}: crop keeps {kept:.2f} of the volume"
        assert result.volume.dims == result.region.shape
        assert result.volume.data.min() >= 0.0 and result.volume.data.max() <= 1.0


def test_pipeline_on_its_own_output_keeps_full_extent():
    from lobekit.phantom import PhantomConfig, generate
    from lobekit.preprocess import lung_crop_pipeline
    from lobekit.volume_io import CropRegion, hu_denormalize

    volume, _ = generate(PhantomConfig(dims=(16, 64, 64), seed=4))
    first = lung_crop_pipeline(volume)
    second = lung_crop_pipeline(hu_denormalize(first.volume))
    assert second.region == CropRegion.full(first.region.shape), "second pass keeps the whole crop"
    assert first.region.compose(second.region) == first.region


def test_all_tissue_has_no_lungs():
    from lobekit.errors import NoLungCandidate
    from lobekit.preprocess import lung_crop_pipeline
    from lobekit.volume_io import Volume

    hu = np.full((8, 16, 16), 40, dtype=np.int16)
    hu[:, :, 8:] = 300
    with pytest.raises(NoLungCandidate):
        lung_crop_pipeline(Volume(hu))


def test_config_validation():
    from lobekit.errors import InvalidConfig
    from lobekit.preprocess import PreprocessConfig

    with pytest.raises(InvalidConfig):
        PreprocessConfig(close_kernel_size=4).validate()
    with pytest.raises(InvalidConfig):
        PreprocessConfig(hu_lo=100, hu_hi=0).validate()
    with pytest.raises(InvalidConfig):
        PreprocessConfig.from_dict({'kernel': 3})
    cfg = PreprocessConfig.from_dict({'dilate_kernel_size': 7})
    assert cfg.dilate_kernel.shape.shape == (7, 7)
    assert PreprocessConfig.from_dict(cfg.to_dict()) == cfg


def test_binarize_and_bounding_region():
    from lobekit.errors import NoLungCandidate
    from lobekit.preprocess import binarize, bounding_region
    from lobekit.volume_io import Volume

    data = np.full((3, 5, 6), 0.8)
    data[1, 2:4, 1:5] = 0.1
    mask = binarize(Volume(data, spacing=(2.0, 1.0, 1.0)), 0.5)
    assert mask.data.dtype == bool and mask.data.sum() == 8
    assert mask.spacing == (2.0, 1.0, 1.0)
    region = bounding_region(mask.data)
    assert (region.lo, region.hi) == ((1, 2, 1), (2, 4, 5))
    assert not binarize(Volume(data), 0.1).data.any(), "the threshold itself is background"
    with pytest.raises(NoLungCandidate):
        bounding_region(np.zeros((2, 2, 2), dtype=bool))


def test_lung_mask_excludes_exterior_air():
    from lobekit.phantom import PhantomConfig, generate_case
    from lobekit.preprocess import lung_mask

    for seed in range(3):
        case = generate_case(PhantomConfig(dims=(32, 64, 64), seed=seed))
        mask = lung_mask(case.volume)
        exterior = (case.volume.data < -950) & ~case.lung
        assert not (mask & exterior).any(), f"seed {seed}: exterior air taken for lung"
        assert (mask & case.lung).sum() >= 0.95 * case.lung.sum(), f"seed {seed}: lung voxels missed"
