#!/usr/bin/env python3
"""
Tests for the augmentation plugin system.

Run with: python -m pytest lobekit/test_augment.py
Or: python -m lobekit.test_augment
"""

import sys

import numpy as np


def _pair(dims=(4, 8, 8), seed=0):
    from lobekit.volume_io import LabelMask, Volume

    rng = np.random.default_rng(seed)
    volume = Volume(rng.random(dims).astype(np.float32), spacing=(2.0, 0.5, 0.5))
    mask = LabelMask(rng.integers(0, 6, size=dims).astype(np.uint8), spacing=(2.0, 0.5, 0.5))
    return volume, mask


def test_registry_singleton():
    """The registry is a singleton."""
    from lobekit.augment.registry import AugmentRegistry

    assert AugmentRegistry() is AugmentRegistry(), "Registry should be a singleton"
    print("✓ Registry singleton test passed")


def test_builtin_plugins_registered_in_order():
    """Built-in plugins are auto-registered and listed in application order."""
    from lobekit.augment import AugmentStrategy, ShiftPlugin, registry

    assert registry.list_strategies() == [AugmentStrategy.SHIFT, AugmentStrategy.FLIP_Z,
                                          AugmentStrategy.ROTATE_XY]
    assert isinstance(registry.get_plugin(AugmentStrategy.SHIFT), ShiftPlugin)
    assert AugmentStrategy.ROTATE_XY in registry
    print("✓ Plugin registration test passed")


def test_register_rejects_non_plugins():
    """Only AugmentPlugin subclasses can be registered."""
    from lobekit.augment import AugmentStrategy, registry

    try:
        registry.register(AugmentStrategy.SHIFT, dict)
    except TypeError:
        pass
    else:
        raise AssertionError("Registering a non-plugin should raise TypeError")
    print("✓ Registration type check passed")


def test_shift_moves_content_and_fills_background():
    """An integer shift moves voxels and fills vacated ones with 0."""
    from lobekit.augment import shift_pair

    volume, mask = _pair()
    shifted_v, shifted_m = shift_pair(volume, mask, (1, -2, 3))
    np.testing.assert_array_equal(shifted_v.data[1:, :-2, 3:], volume.data[:-1, 2:, :-3])
    np.testing.assert_array_equal(shifted_m.data[1:, :-2, 3:], mask.data[:-1, 2:, :-3])
    assert not shifted_m.data[0].any() and not shifted_m.data[:, -2:].any(), "vacated voxels are background"
    assert shifted_v.spacing == volume.spacing

    gone_v, gone_m = shift_pair(volume, mask, (0, 8, 0))
    assert not gone_v.data.any() and not gone_m.data.any(), "a full-size shift empties the grid"
    print("✓ Shift test passed")


def test_random_shift_stays_in_range():
    """Random shifts are seeded and bounded by shift_max."""
    from lobekit.augment import AugmentConfig, random_shift, shift_pair

    volume, mask = _pair()
    cfg = AugmentConfig(shift_max=2)
    rng = np.random.default_rng(4)
    expected = np.random.default_rng(4).integers(-2, 3, size=3)
    sv, sm = random_shift(volume, mask, cfg, rng)
    ev, em = shift_pair(volume, mask, expected)
    np.testing.assert_array_equal(sv.data, ev.data)
    np.testing.assert_array_equal(sm.data, em.data)
    assert np.all(np.abs(expected) <= 2)
    print("✓ Random shift test passed")


def test_flip_is_an_involution():
    """Flipping twice restores the pair; labels keep their values."""
    from lobekit.augment import flip_z

    volume, mask = _pair()
    fv, fm = flip_z(volume, mask)
    np.testing.assert_array_equal(fm.data[0], mask.data[-1])
    assert set(np.unique(fm.data)) == set(np.unique(mask.data)), "no left/right label swap"
    bv, bm = flip_z(fv, fm)
    np.testing.assert_array_equal(bv.data, volume.data)
    np.testing.assert_array_equal(bm.data, mask.data)
    print("✓ Flip test passed")


def test_quarter_turn_is_an_index_permutation():
    """A 90 degree rotation equals numpy.rot90(k=-1) on square slices."""
    from lobekit.augment import rotate_xy

    volume, mask = _pair(dims=(3, 8, 8))
    rv, rm = rotate_xy(volume, mask, 90.0)
    np.testing.assert_allclose(rv.data, np.rot90(volume.data, k=-1, axes=(1, 2)), atol=1e-6)
    np.testing.assert_array_equal(rm.data, np.rot90(mask.data, k=-1, axes=(1, 2)))
    print("✓ Quarter turn test passed")


def test_rotation_never_invents_labels():
    """Nearest-neighbour label resampling only produces existing labels or background."""
    from lobekit.augment import rotate_xy

    volume, mask = _pair(dims=(2, 12, 12), seed=3)
    for angle in (-10.0, 7.5, 33.0):
        _, rm = rotate_xy(volume, mask, angle)
        assert set(np.unique(rm.data)) <= set(np.unique(mask.data)) | {0}, f"angle {angle}"
        assert rm.data.dtype == np.uint8
    print("✓ Label set test passed")


def test_augment_pair_is_seeded():
    """Equal seeds give equal results; disabled augmentation is the identity."""
    from lobekit.augment import AugmentConfig, augment_pair

    volume, mask = _pair()
    cfg = AugmentConfig(shift_max=2, flip_z_prob=0.5, rotate_max_deg=10.0)
    a = augment_pair(volume, mask, cfg, np.random.default_rng(5))
    b = augment_pair(volume, mask, cfg, np.random.default_rng(5))
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)

    off = AugmentConfig.disabled()
    assert not off.enabled
    same_v, same_m = augment_pair(volume, mask, off, np.random.default_rng(5))
    np.testing.assert_array_equal(same_v.data, volume.data)
    np.testing.assert_array_equal(same_m.data, mask.data)
    print("✓ Seeded augmentation test passed")


def test_draw_count_does_not_depend_on_outcome():
    """Each plugin consumes the same number of draws whether or not it fires."""
    from lobekit.augment import AugmentConfig, augment_pair

    volume, mask = _pair()
    always = AugmentConfig(shift_max=1, flip_z_prob=1.0, rotate_max_deg=5.0)
    never = AugmentConfig(shift_max=1, flip_z_prob=0.0, rotate_max_deg=5.0)
    rng_a, rng_b = np.random.default_rng(9), np.random.default_rng(9)
    augment_pair(volume, mask, always, rng_a)
    augment_pair(volume, mask, never, rng_b)
    assert rng_a.random() == rng_b.random(), "streams stay aligned"
    print("✓ Draw count test passed")


def test_parameter_validation():
    """Invalid parameters are rejected."""
    from lobekit.augment import AugmentConfig, AugmentStrategy, registry
    from lobekit.errors import InvalidConfig

    plugin = registry.get_plugin(AugmentStrategy.FLIP_Z)
    assert plugin.validate_parameters(AugmentConfig()), "defaults are valid"
    assert not plugin.validate_parameters(AugmentConfig(flip_z_prob=1.5)), "probability above 1"
    try:
        AugmentConfig.from_dict({'shift': 3})
    except InvalidConfig:
        pass
    else:
        raise AssertionError("unknown keys should be rejected")
    print("✓ Parameter validation test passed")


def test_custom_plugin():
    """A custom plugin can replace a built-in one and be restored."""
    from lobekit.augment import AugmentPlugin, AugmentStrategy, FlipZPlugin, augment_pair, registry
    from lobekit.augment import AugmentConfig

    class Identity(AugmentPlugin):
        def apply(self, volume, mask, cfg, rng):
            rng.random()
            return volume, mask

    registry.register(AugmentStrategy.FLIP_Z, Identity)
    try:
        volume, mask = _pair()
        out_v, _ = augment_pair(volume, mask, AugmentConfig(flip_z_prob=1.0), np.random.default_rng(0),
                                strategies=[AugmentStrategy.FLIP_Z])
        np.testing.assert_array_equal(out_v.data, volume.data)
    finally:
        registry.register(AugmentStrategy.FLIP_Z, FlipZPlugin)
    print("✓ Custom plugin test passed")


def run_all_tests():
    """Run all tests."""
    tests = [
        test_registry_singleton,
        test_builtin_plugins_registered_in_order,
        test_register_rejects_non_plugins,
        test_shift_moves_content_and_fills_background,
        test_random_shift_stays_in_range,
        test_flip_is_an_involution,
        test_quarter_turn_is_an_index_permutation,
        test_rotation_never_invents_labels,
        test_augment_pair_is_seeded,
        test_draw_count_does_not_depend_on_outcome,
        test_parameter_validation,
        test_custom_plugin,
    ]

    print("\n" + "=" * 60)
    print("Running Augmentation Plugin Tests")
    print("=" * 60 + "\n")

    failed = []
    for test in tests:
        try:
            test()
        except AssertionError as e:
            print(f"✗ {test.__name__} failed: {e}")
            failed.append(test.__name__)
        except Exception as e:
            print(f"✗ {test.__name__} error: {e}")
            failed.append(test.__name__)

    print("\n" + "=" * 60)
    if failed:
        print(f"FAILED: {len(failed)}/{len(tests)} tests failed")
        for name in failed:
            print(f"  - {name}")
        return 1
    print(f"SUCCESS: All {len(tests)} tests passed!")
    print("=" * 60 + "\n")
    return 0


if __name__ == '__main__':
    sys.exit(run_all_tests())
