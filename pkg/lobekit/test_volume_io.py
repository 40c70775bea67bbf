"""
Tests for volume containers, HU windowing, cropping and MetaImage IO.

Run with: python -m pytest lobekit/test_volume_io.py
"""

import json

import numpy as np
import pytest


def _write_header(path, **overrides):
    keys = {
        'ObjectType': 'Image',
        'NDims': '3',
        'DimSize': '4 3 2',
        'ElementType': 'MET_SHORT',
        'ElementSpacing': '0.7 0.8 2.5',
        'Offset': '0 0 0',
        'ElementDataFile': path.with_suffix('.raw').name,
    }
    keys.update(overrides)
    path.write_text('\n'.join(f'{k} = {v}' for k, v in keys.items() if v is not None) + '\n')


def test_metaimage_roundtrip_keeps_geometry(tmp_path):
    from lobekit.volume_io import Volume, read_metaimage, read_provenance, write_metaimage

    rng = np.random.default_rng(3)
    data = rng.integers(-1024, 1500, size=(5, 6, 7)).astype(np.int16)
    volume = Volume(data, spacing=(2.5, 0.7, 0.75), origin=(-10.0, 3.5, 0.125))
    write_metaimage(volume, tmp_path / 'ct.mhd', {'source': 'test'})
    loaded = read_metaimage(tmp_path / 'ct.mhd')

    assert loaded.dims == (5, 6, 7), "dims should come back in (z, y, x)"
    assert loaded.spacing == volume.spacing, "spacing should round-trip exactly"
    assert loaded.origin == volume.origin, "origin should round-trip exactly"
    assert loaded.data.dtype == np.int16
    np.testing.assert_array_equal(loaded.data, data)
    assert read_provenance(tmp_path / 'ct.mhd') == {'source': 'test'}


def test_header_lists_sizes_in_xyz_order(tmp_path):
    from lobekit.volume_io import Volume, write_metaimage

    write_metaimage(Volume(np.zeros((2, 3, 4), np.float32), spacing=(3.0, 2.0, 1.0)), tmp_path / 'v.mhd')
    header = (tmp_path / 'v.mhd').read_text()
    assert 'DimSize = 4 3 2' in header, "DimSize is x y z"
    assert 'ElementSpacing = 1.0 2.0 3.0' in header, "ElementSpacing is x y z"
    assert 'ElementType = MET_FLOAT' in header
    assert (tmp_path / 'v.raw').stat().st_size == 2 * 3 * 4 * 4


def test_uint8_files_load_as_labels(tmp_path):
    from lobekit.volume_io import LabelMask, read_metaimage, write_metaimage

    labels = LabelMask(np.arange(24).reshape(2, 3, 4) % 6)
    write_metaimage(labels, tmp_path / 'lab.mhd')
    loaded = read_metaimage(tmp_path / 'lab.mhd')
    assert isinstance(loaded, LabelMask), "MET_UCHAR should load as LabelMask"
    np.testing.assert_array_equal(loaded.data, labels.data)


@pytest.mark.parametrize('dtype', [np.int16, np.uint8, np.float32])
def test_random_volumes_come_back_bit_exact(tmp_path, dtype):
    from lobekit.volume_io import Volume, read_metaimage, write_metaimage

    rng = np.random.default_rng(np.dtype(dtype).num)
    for i in range(50):
        dims = tuple(int(d) for d in rng.integers(1, 10, size=3))
        if dtype == np.float32:
            data = (rng.standard_normal(dims) * 10.0 ** rng.integers(-6, 6)).astype(np.float32)
        else:
            info = np.iinfo(dtype)
            data = rng.integers(info.min, info.max, size=dims, endpoint=True, dtype=dtype)
        spacing = tuple(float(s) for s in rng.uniform(0.1, 5.0, size=3))
        origin = tuple(float(o) for o in rng.uniform(-500.0, 500.0, size=3))
        path = tmp_path / f'v{i:02d}.mhd'
        write_metaimage(Volume(data, spacing, origin), path)
        loaded = read_metaimage(path, kind='volume')

        assert loaded.data.dtype == dtype, f"volume {i}"
        assert loaded.data.shape == dims, f"volume {i}"
        assert loaded.data.tobytes() == data.tobytes(), f"volume {i}: voxels differ"
        assert loaded.spacing == spacing and loaded.origin == origin, f"volume {i}: geometry differs"

def test_size_mismatch_is_reported(tmp_path):
    from lobekit.errors import SizeMismatch
    from lobekit.volume_io import read_metaimage

    _write_header(tmp_path / 'short.mhd')
    (tmp_path / 'short.raw').write_bytes(b'\x00' * (4 * 3 * 2 * 2 - 1))
    with pytest.raises(SizeMismatch):
        read_metaimage(tmp_path / 'short.mhd')


def test_missing_key_and_bad_type(tmp_path):
    from lobekit.errors import MalformedHeader, UnsupportedElementType
    from lobekit.volume_io import read_metaimage

    _write_header(tmp_path / 'a.mhd', ElementSpacing=None)
    (tmp_path / 'a.raw').write_bytes(b'\x00' * 48)
    with pytest.raises(MalformedHeader):
        read_metaimage(tmp_path / 'a.mhd')

    _write_header(tmp_path / 'b.mhd', ElementType='MET_DOUBLE')
    (tmp_path / 'b.raw').write_bytes(b'\x00' * 192)
    with pytest.raises(UnsupportedElementType):
        read_metaimage(tmp_path / 'b.mhd')


def test_missing_raw_is_io_failure(tmp_path):
    from lobekit.errors import IoFailure
    from lobekit.volume_io import read_metaimage

    _write_header(tmp_path / 'nodata.mhd')
    with pytest.raises(IoFailure):
        read_metaimage(tmp_path / 'nodata.mhd')
    with pytest.raises(IoFailure):
        read_metaimage(tmp_path / 'nothing.mhd')


def test_label_values_are_checked():
    from lobekit.errors import InvalidLabel
    from lobekit.volume_io import LabelMask

    with pytest.raises(InvalidLabel):
        LabelMask(np.full((2, 2, 2), 6))
    with pytest.raises(InvalidLabel):
        LabelMask(np.full((2, 2, 2), -1))


def test_hu_normalize_window():
    from lobekit.volume_io import Volume, hu_denormalize, hu_normalize

    hu = np.array([-2000, -1000, 200, 600, 3000], dtype=np.int16).reshape(1, 1, 5)
    out = hu_normalize(Volume(hu)).data
    np.testing.assert_allclose(out.ravel(), [0.0, 0.0, 0.75, 1.0, 1.0], atol=1e-7)
    assert out.dtype == np.float32

    inside = Volume(np.array([-900.0, -100.0, 450.0], dtype=np.float32).reshape(1, 1, 3))
    back = hu_denormalize(hu_normalize(inside)).data
    np.testing.assert_allclose(back, inside.data, atol=1e-3)


def test_crop_and_uncrop_move_the_origin():
    from lobekit.volume_io import CropRegion, Volume, crop, uncrop

    data = np.arange(4 * 5 * 6, dtype=np.float32).reshape(4, 5, 6)
    volume = Volume(data, spacing=(2.0, 1.0, 0.5), origin=(1.0, 1.0, 1.0))
    region = CropRegion((1, 2, 3), (3, 5, 6))
    cropped = crop(volume, region)
    assert cropped.dims == (2, 3, 3)
    assert cropped.origin == (3.0, 3.0, 2.5), "origin shifts by lo * spacing"
    np.testing.assert_array_equal(cropped.data, data[1:3, 2:5, 3:6])

    restored = uncrop(cropped, region, volume.dims)
    assert restored.origin == volume.origin
    np.testing.assert_array_equal(restored.data[region.slices], cropped.data)
    assert restored.data.sum() == cropped.data.sum(), "outside the box is fill"


def test_region_bounds_and_compose():
    from lobekit.errors import RegionOutOfBounds
    from lobekit.volume_io import CropRegion, Volume, crop

    with pytest.raises(RegionOutOfBounds):
        CropRegion((0, 2, 0), (1, 2, 1))
    with pytest.raises(RegionOutOfBounds):
        crop(Volume(np.zeros((2, 2, 2))), CropRegion((0, 0, 0), (3, 2, 2)))

    outer = CropRegion((2, 2, 2), (10, 10, 10))
    inner = CropRegion((1, 0, 3), (4, 8, 5))
    assert outer.compose(inner) == CropRegion((3, 2, 5), (6, 10, 7))
    assert CropRegion.from_dict(json.loads(json.dumps(outer.to_dict()))) == outer
