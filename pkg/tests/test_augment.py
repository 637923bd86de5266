import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from tonguescreen.augment import (
    AugmentError,
    AugmentPolicy,
    augment,
    flip,
    is_augmentable,
    presentation_rng,
)
from tonguescreen.dataset import DatasetError, DatasetManifest, balanced_split, epoch_order
from tonguescreen.taxonomy import LesionClass, binary_task

from conftest import placeholder_records

rgb_arrays = hnp.arrays(
    dtype=np.uint8,
    shape=st.tuples(st.integers(2, 16), st.integers(2, 16), st.just(3)),
)


def test_policy_defaults():
    policy = AugmentPolicy()
    assert policy.flip_horizontal_p == 0.5
    assert policy.flip_vertical_p == 0.5
    assert policy.enabled_for == "train_only"


def test_policy_validation():
    with pytest.raises(AugmentError):
        AugmentPolicy(flip_horizontal_p=1.5)
    with pytest.raises(AugmentError):
        AugmentPolicy(enabled_for="everything")


def test_identity_policy_returns_identical_pixels():
    rng = np.random.default_rng(0)
    image = rng.integers(0, 255, size=(8, 6, 3), dtype=np.uint8)
    out = augment(image, AugmentPolicy(flip_horizontal_p=0, flip_vertical_p=0),
                  np.random.default_rng(1))
    assert np.array_equal(out, image)


def test_forced_horizontal_flip_twice_restores_original():
    rng = np.random.default_rng(0)
    image = rng.integers(0, 255, size=(8, 6, 3), dtype=np.uint8)
    policy = AugmentPolicy(flip_horizontal_p=1.0, flip_vertical_p=0.0)
    once = augment(image, policy, np.random.default_rng(0))
    twice = augment(once, policy, np.random.default_rng(0))
    assert np.array_equal(twice, image)
    assert not np.array_equal(once, image) or image.shape[1] == 1


@given(rgb_arrays, st.booleans(), st.booleans())
def test_flip_involution_byte_exact(image, horizontal, vertical):
    flipped = flip(flip(image, horizontal, vertical), horizontal, vertical)
    assert flipped.tobytes() == np.ascontiguousarray(image).tobytes()


@given(rgb_arrays, st.integers(0, 2**32 - 1))
def test_augment_preserves_shape(image, seed):
    out = augment(image, AugmentPolicy(), np.random.default_rng(seed))
    assert out.shape == image.shape


def test_flip_frequency_matches_probability():
    # 10,000 presentations at p=0.5; frequency within the 3-sigma band
    policy = AugmentPolicy()
    image = np.arange(4 * 4 * 3, dtype=np.uint8).reshape(4, 4, 3)
    h_flips = v_flips = 0
    n = 10_000
    for i in range(n):
        rng = presentation_rng(123, 0, f"item{i}")
        out = augment(image, policy, rng)
        rng2 = presentation_rng(123, 0, f"item{i}")
        expect_h = rng2.random() < policy.flip_horizontal_p
        expect_v = rng2.random() < policy.flip_vertical_p
        assert np.array_equal(out, flip(image, expect_h, expect_v))
        h_flips += expect_h
        v_flips += expect_v
    assert 0.47 <= h_flips / n <= 0.53
    assert 0.47 <= v_flips / n <= 0.53


@pytest.fixture
def small_split():
    records = placeholder_records({LesionClass.HT: 10, LesionClass.LP: 10})
    manifest = DatasetManifest.build(records, binary_task())
    return manifest, balanced_split(manifest, seed=0)


def test_is_augmentable_train_vs_validation(small_split):
    _, split = small_split
    assert is_augmentable(split.train_ids[0], split) is True
    assert is_augmentable(split.validation_ids[0], split) is False


def test_is_augmentable_foreign_id_errors(small_split):
    _, split = small_split
    with pytest.raises(DatasetError):
        is_augmentable("not-a-member", split)


def test_validation_ids_never_augmented_over_training_loop(small_split):
    # simulate a full 15-epoch loop: every presented id must be augmentable
    _, split = small_split
    augmented_ids = set()
    for epoch in range(15):
        for rid in epoch_order(split, epoch, seed=9):
            assert is_augmentable(rid, split)
            augmented_ids.add(rid)
    assert augmented_ids == set(split.train_ids)
    assert not augmented_ids & set(split.validation_ids)


def test_presentation_rng_deterministic_and_distinct():
    a = presentation_rng(7, 3, "item1").random(4)
    b = presentation_rng(7, 3, "item1").random(4)
    c = presentation_rng(7, 3, "item2").random(4)
    d = presentation_rng(7, 4, "item1").random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
