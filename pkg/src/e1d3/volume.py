"""Volume containers, intensity normalisation and bounding-box geometry."""
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateChannel, EmptyMask, InvalidLabel, ShapeMismatch

VALID_LABELS = (0, 1, 2, 4)
MODALITIES = ("t1", "t1ce", "t2", "flair")


@dataclass(frozen=True)
class Volume3:
    """A single 3D field (one MRI sequence, probability map or label map)."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeMismatch(f"Volume3 needs 3 axes, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box; ``lower`` inclusive, ``upper`` exclusive."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lower)
        hi = tuple(int(v) for v in self.upper)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("bounding box needs 3-tuples")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"empty bounding box {lo} -> {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def extent(self):
        return tuple(b - a for a, b in zip(self.lower, self.upper))

    def slices(self):
        return tuple(slice(a, b) for a, b in zip(self.lower, self.upper))


@dataclass(frozen=True)
class LabeledVolume:
    """Co-registered channel stack with optional labels and a brain mask.

    When ``brain_mask`` is omitted it defaults to the voxels where any
    channel is nonzero.
    """

    channels: tuple
    labels: Volume3 | None = None
    brain_mask: Volume3 | None = None
    subject_id: str = field(default="", compare=False)

    def __post_init__(self):
        chans = tuple(self.channels)
        if not chans:
            raise ShapeMismatch("LabeledVolume needs at least one channel")
        shape, spacing = chans[0].shape, chans[0].spacing
        for c in chans[1:]:
            if c.shape != shape:
                raise ShapeMismatch(f"channel shapes differ: {c.shape} vs {shape}")
        extra = [v for v in (self.labels, self.brain_mask) if v is not None]
        for v in extra:
            if v.shape != shape:
                raise ShapeMismatch(f"labels/mask shape {v.shape} != channel shape {shape}")
        if self.labels is not None:
            check_labels(self.labels.data)
        mask = self.brain_mask
        if mask is None:
            nz = np.zeros(shape, dtype=bool)
            for c in chans:
                nz |= c.data != 0
            mask = Volume3(nz.astype(np.uint8), spacing)
        else:
            mask = Volume3((np.asarray(mask.data) != 0).astype(np.uint8), mask.spacing)
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "brain_mask", mask)

    @property
    def shape(self):
        return self.channels[0].shape

    @property
    def spacing(self):
        return self.channels[0].spacing

    def image(self):
        """Channels stacked as a (C, D, H, W) float64 array."""
        return np.stack([np.asarray(c.data, dtype=np.float64) for c in self.channels])

    @classmethod
    def from_arrays(cls, image, labels=None, mask=None, spacing=(1.0, 1.0, 1.0), subject_id=""):
        chans = tuple(Volume3(np.asarray(c, dtype=np.float64), spacing) for c in image)
        lab = None if labels is None else Volume3(np.asarray(labels), spacing)
        msk = None if mask is None else Volume3(np.asarray(mask), spacing)
        return cls(chans, lab, msk, subject_id)


def check_labels(labels):
    bad = np.setdiff1d(np.unique(labels), VALID_LABELS)
    if bad.size:
        raise InvalidLabel(f"label values {bad.tolist()} outside {{0, 1, 2, 4}}")


def normalize_volume(v, min_std=1e-8):
    """Per-channel zero mean / unit variance inside the brain mask.

    Voxels outside the mask are set to zero; labels and mask pass through.
    """
    mask = v.brain_mask.data.astype(bool)
    if not mask.any():
        raise EmptyMask("brain mask is empty")
    out = []
    for i, c in enumerate(v.channels):
        data = np.asarray(c.data, dtype=np.float64)
        vals = data[mask]
        mu = vals.mean()
        sd = vals.std()
        if sd < min_std:
            raise DegenerateChannel(f"channel {i} is constant inside the brain mask (std={sd:.3g})")
        norm = np.zeros_like(data)
        norm[mask] = (vals - mu) / sd
        out.append(Volume3(norm, c.spacing))
    return replace(v, channels=tuple(out))


def brain_bbox(mask):
    """Minimal box around the nonzero voxels of ``mask`` (Volume3 or array)."""
    data = np.asarray(getattr(mask, "data", mask))
    nz = np.nonzero(data)
    if nz[0].size == 0:
        raise EmptyMask("cannot take the bounding box of an empty mask")
    return BoundingBox(tuple(int(a.min()) for a in nz), tuple(int(a.max()) + 1 for a in nz))


def crop_pad(t, box, pad_value=0.0):
    """Extract ``box`` from the last three axes of ``t``, padding out-of-range voxels.

    Works on Volume3 (returns Volume3) and on any array with >= 3 axes.
    """
    if isinstance(t, Volume3):
        return Volume3(crop_pad(t.data, box, pad_value), t.spacing)
    arr = np.asarray(t)
    spatial = arr.shape[-3:]
    lead = arr.shape[:-3]
    out = np.full(lead + box.extent, pad_value, dtype=arr.dtype)
    src, dst = [], []
    for lo, hi, n in zip(box.lower, box.upper, spatial):
        s0, s1 = max(lo, 0), min(hi, n)
        if s0 >= s1:
            return out
        src.append(slice(s0, s1))
        dst.append(slice(s0 - lo, s1 - lo))
    out[(Ellipsis, *dst)] = arr[(Ellipsis, *src)]
    return out


def place(patch, box, shape, fill=0.0):
    """Inverse of :func:`crop_pad`: write ``patch`` at ``box`` inside a new array of ``shape``."""
    patch = np.asarray(patch)
    out = np.full(patch.shape[:-3] + tuple(shape), fill, dtype=patch.dtype)
    src, dst = [], []
    for lo, hi, n in zip(box.lower, box.upper, shape):
        s0, s1 = max(lo, 0), min(hi, n)
        if s0 >= s1:
            return out
        dst.append(slice(s0, s1))
        src.append(slice(s0 - lo, s1 - lo))
    out[(Ellipsis, *dst)] = patch[(Ellipsis, *src)]
    return out
