"""Random training segments drawn from inside the brain bounding box."""
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .volume import BoundingBox, brain_bbox, check_labels, crop_pad


@dataclass(frozen=True)
class SegmentPair:
    image: np.ndarray  # (1, C, D, H, W) float64
    label: np.ndarray  # (1, 1, D, H, W) integer

    def __post_init__(self):
        if self.image.ndim != 5 or self.label.ndim != 5 or self.label.shape[1] != 1:
            raise ShapeMismatch(f"bad segment shapes {self.image.shape}, {self.label.shape}")
        if self.image.shape[2:] != self.label.shape[2:]:
            raise ShapeMismatch("image and label segments are not congruent")

    def validate(self):
        check_labels(self.label)
        if not np.all(np.isfinite(self.image)):
            raise ValueError("segment image contains non-finite values")
        return self


def _size3(size):
    s = (size,) * 3 if np.isscalar(size) else tuple(size)
    if len(s) != 3 or min(s) < 1:
        raise ValueError(f"segment size must be positive, got {size}")
    return tuple(int(v) for v in s)


def segment_box(bbox, size, rng):
    """Window of ``size`` placed uniformly inside ``bbox``, or centred on it when it does not fit."""
    lower = []
    for lo, ext, s in zip(bbox.lower, bbox.extent, size):
        if ext >= s:
            lower.append(lo + int(rng.integers(0, ext - s + 1)))
        else:
            lower.append(lo + (ext - s) // 2)
    return BoundingBox(tuple(lower), tuple(a + s for a, s in zip(lower, size)))


def sample_segment(v, size, rng):
    """Crop a congruent image/label segment from a normalised LabeledVolume."""
    if v.labels is None:
        raise ValueError("sample_segment needs a labelled volume")
    size = _size3(size)
    box = segment_box(brain_bbox(v.brain_mask), size, rng)
    image = crop_pad(v.image(), box, 0.0)
    label = crop_pad(np.asarray(v.labels.data, dtype=np.uint8), box, 0)
    return SegmentPair(image[None], label[None, None])


class SegmentSampler:
    """Endless stream of (optionally augmented) segments over a set of subjects.

    One generator drives subject choice, placement and augmentation, so the
    stream is reproducible from ``seed``.
    """

    def __init__(self, volumes, size, augment_cfg=None, seed=0):
        if not volumes:
            raise ValueError("no training volumes")
        self.volumes = list(volumes)
        self.size = _size3(size)
        self.augment_cfg = augment_cfg
        self.rng = np.random.default_rng(seed)

    def __iter__(self):
        return self

    def __next__(self):
        from .augment import augment

        v = self.volumes[int(self.rng.integers(len(self.volumes)))]
        pair = sample_segment(v, self.size, self.rng)
        if self.augment_cfg is not None:
            pair = augment(pair, self.rng, self.augment_cfg)
        return pair

    def batch(self, n):
        pairs = [next(self) for _ in range(n)]
        return (
            np.concatenate([p.image for p in pairs]),
            np.concatenate([p.label for p in pairs]),
        )
