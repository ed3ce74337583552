import numpy as np
import pytest

from e1d3.errors import ShapeMismatch
from e1d3.phantom import PhantomSpec, make_phantom
from e1d3.sampling import SegmentPair, SegmentSampler, sample_segment, segment_box
from e1d3.volume import BoundingBox, LabeledVolume, brain_bbox, normalize_volume


def test_pair_shape_checks():
    with pytest.raises(ShapeMismatch):
        SegmentPair(np.zeros((1, 4, 8, 8, 8)), np.zeros((1, 1, 8, 8, 7)))
    with pytest.raises(ShapeMismatch):
        SegmentPair(np.zeros((4, 8, 8, 8)), np.zeros((1, 8, 8, 8)))


def test_box_placement_is_uniform():
    bbox = BoundingBox((3, 0, 10), (13, 4, 14))
    rng = np.random.default_rng(0)
    counts = np.zeros(6, int)
    for _ in range(6000):
        b = segment_box(bbox, (5, 4, 4), rng)
        assert all(lo >= l0 and hi <= h0 for lo, hi, l0, h0 in zip(b.lower, b.upper, bbox.lower, bbox.upper))
        counts[b.lower[0] - 3] += 1
    # six equally likely start positions along the first axis
    assert counts.min() > 850 and counts.max() < 1150


def test_box_centred_when_too_small():
    bbox = BoundingBox((10, 10, 10), (14, 20, 13))
    b = segment_box(bbox, (8, 10, 8), np.random.default_rng(0))
    assert b.lower == (8, 10, 7) and b.extent == (8, 10, 8)


def test_segment_matches_direct_crop(rng):
    img = rng.standard_normal((2, 12, 12, 12))
    lab = rng.choice(np.array([0, 1, 2, 4], np.uint8), size=(12, 12, 12))
    mask = np.zeros((12, 12, 12), bool)
    mask[1:11, 2:9, 0:12] = True
    v = LabeledVolume.from_arrays(img, lab, mask)
    for seed in range(5):
        pair = sample_segment(v, (6, 6, 6), np.random.default_rng(seed))
        box = segment_box(brain_bbox(mask), (6, 6, 6), np.random.default_rng(seed))
        sl = box.slices()
        np.testing.assert_array_equal(pair.image[0], img[(slice(None), *sl)])
        np.testing.assert_array_equal(pair.label[0, 0], lab[sl])
        assert pair.label.dtype == np.uint8


def test_padding_outside_volume(rng):
    img = rng.standard_normal((1, 4, 4, 4)) + 5
    v = LabeledVolume.from_arrays(img, np.ones((4, 4, 4), np.uint8))
    pair = sample_segment(v, 8, rng)
    assert pair.image.shape == (1, 1, 8, 8, 8)
    assert (pair.image != 0).sum() == 64 and pair.label.sum() == 64


def test_sampler_reproducible_and_batched():
    vols = [normalize_volume(make_phantom(PhantomSpec(shape=(24, 24, 24), wt_radii=(4, 6), tc_radii=(2.5, 3.5), en_radii=(1, 2)), i)) for i in range(2)]
    a = SegmentSampler(vols, 8, seed=3).batch(4)
    b = SegmentSampler(vols, 8, seed=3).batch(4)
    assert a[0].shape == (4, 4, 8, 8, 8) and a[1].shape == (4, 1, 8, 8, 8)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    c = SegmentSampler(vols, 8, seed=4).batch(4)
    assert not np.array_equal(a[0], c[0])
    with pytest.raises(ValueError):
        SegmentSampler([], 8)


def test_segments_stay_inside_large_box():
    bbox = BoundingBox((16, 16, 16), (112, 112, 112))
    rng = np.random.default_rng(1)
    for _ in range(1000):
        b = segment_box(bbox, (96, 96, 96), rng)
        assert b.lower == (16, 16, 16)
    wide = BoundingBox((0, 0, 0), (128, 128, 128))
    for _ in range(1000):
        b = segment_box(wide, (96, 96, 96), rng)
        assert min(b.lower) >= 0 and max(b.upper) <= 128
