"""Sliding-window whole-volume prediction and flip test-time augmentation.

A *model* here is any callable mapping a (1, C, w, w, w) window to region
probabilities of shape (3, w, w, w) ordered (WT, TC, EN).
:class:`NetworkPredictor` adapts a trained network to that interface.
"""
import itertools
from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeMismatch, WindowTooLarge
from .network import forward
from .volume import BoundingBox, Volume3, brain_bbox, crop_pad, place

FLIP_AXES = tuple(c for n in range(4) for c in itertools.combinations((0, 1, 2), n))


@dataclass(frozen=True)
class RegionProbMaps:
    wt: np.ndarray
    tc: np.ndarray
    en: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    @property
    def shape(self):
        return self.wt.shape

    def stack(self):
        return np.stack([self.wt, self.tc, self.en])

    @classmethod
    def from_stack(cls, arr, spacing=(1.0, 1.0, 1.0)):
        return cls(arr[0], arr[1], arr[2], tuple(spacing))

    def volumes(self):
        return tuple(Volume3(a, self.spacing) for a in (self.wt, self.tc, self.en))


@dataclass(frozen=True)
class TilePlan:
    window: tuple
    stride: tuple
    origins: tuple  # absolute voxel origins, lexicographic order
    box: BoundingBox


def axis_origins(extent, window, stride):
    """Origins along one axis: multiples of ``stride`` plus one clamped to the far edge."""
    if window > extent:
        raise WindowTooLarge(f"window {window} exceeds extent {extent}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    out = list(range(0, extent - window + 1, stride))
    if out[-1] != extent - window:
        out.append(extent - window)
    return out


def _triple(v):
    return (int(v),) * 3 if np.isscalar(v) else tuple(int(a) for a in v)


def plan_tiles(bbox, window=96, stride=None):
    window = _triple(window)
    stride = tuple(w // 2 for w in window) if stride is None else _triple(stride)
    per_axis = [
        [bbox.lower[a] + o for o in axis_origins(bbox.extent[a], window[a], stride[a])]
        for a in range(3)
    ]
    return TilePlan(window, stride, tuple(itertools.product(*per_axis)), bbox)


def padded_box(bbox, window):
    """Grow ``bbox`` symmetrically along any axis shorter than the window."""
    lower, upper = [], []
    for lo, hi, w in zip(bbox.lower, bbox.upper, _triple(window)):
        short = w - (hi - lo)
        if short > 0:
            lo -= short // 2
            hi = lo + w
        lower.append(lo)
        upper.append(hi)
    return BoundingBox(tuple(lower), tuple(upper))


def default_plan(v, window=96, stride=None):
    return plan_tiles(padded_box(brain_bbox(v.brain_mask), window), window, stride)


def predict_volume(model, v, plan=None, window=96, stride=None):
    """Overlap-averaged region probabilities over the whole volume.

    Windows are accumulated in plan order and each voxel is divided by its
    hit count, so the result is a plain mean of the covering windows.
    """
    plan = plan or default_plan(v, window, stride)
    image = v.image()
    box = plan.box
    local = crop_pad(image, box, 0.0)
    sums = np.zeros((3,) + box.extent)
    hits = np.zeros(box.extent)
    for origin in plan.origins:
        rel = tuple(o - lo for o, lo in zip(origin, box.lower))
        sl = tuple(slice(r, r + w) for r, w in zip(rel, plan.window))
        out = np.asarray(model(local[(slice(None),) + sl][None]), dtype=np.float64)
        if out.shape != (3,) + plan.window:
            raise ShapeMismatch(f"model returned {out.shape}, expected {(3,) + plan.window}")
        sums[(slice(None),) + sl] += out
        hits[sl] += 1.0
    probs = np.divide(sums, hits, out=np.zeros_like(sums), where=hits > 0)
    full = place(probs, box, v.shape, 0.0)
    return RegionProbMaps.from_stack(full, v.spacing)


def flip_volume(v, axes):
    if not axes:
        return v
    flip = lambda vol: Volume3(np.flip(vol.data, axes).copy(), vol.spacing)  # noqa: E731
    return replace(
        v,
        channels=tuple(flip(c) for c in v.channels),
        labels=None if v.labels is None else flip(v.labels),
        brain_mask=flip(v.brain_mask),
    )


def predict_with_tta(model, v, plan=None, window=96, stride=None):
    """Mean of :func:`predict_volume` over the 8 axis-flip combinations, each un-flipped.

    Every flipped pass uses the mirror image of the unflipped tiling, so
    each voxel is covered by the same windows in all eight passes.
    """
    plan = plan or default_plan(v, window, stride)
    total = None
    for axes in FLIP_AXES:
        fv = flip_volume(v, axes)
        maps = predict_volume(model, fv, mirror_plan(plan, axes, v.shape)).stack()
        maps = np.flip(maps, tuple(a + 1 for a in axes)) if axes else maps
        total = maps.copy() if total is None else total + maps
    return RegionProbMaps.from_stack(total / len(FLIP_AXES), v.spacing)


def mirror_plan(plan, axes, shape):
    """The same windows as ``plan``, expressed in a volume flipped along ``axes``."""
    def mirror(lo, hi, a):
        return (shape[a] - hi, shape[a] - lo) if a in axes else (lo, hi)

    lo_hi = [mirror(plan.box.lower[a], plan.box.upper[a], a) for a in range(3)]
    box = BoundingBox(tuple(p[0] for p in lo_hi), tuple(p[1] for p in lo_hi))
    origins = sorted(
        tuple(shape[a] - o[a] - plan.window[a] if a in axes else o[a] for a in range(3))
        for o in plan.origins
    )
    return TilePlan(plan.window, plan.stride, tuple(origins), box)


def class_to_region(p):
    """(4, ...) class probabilities -> stacked (WT, TC, EN) = (p1+p2+p4, p1+p4, p4)."""
    wt = p[1] + p[2] + p[3]
    tc = p[1] + p[3]
    return np.clip(np.stack([wt, tc, p[3]]), 0.0, 1.0)


class NetworkPredictor:
    """Wrap a network state as a window -> region-probability model."""

    def __init__(self, state, spec):
        self.state, self.spec = state, spec

    def __call__(self, x):
        heads = forward(self.state, self.spec, x).head_outputs
        if self.spec.variant == "E1D3":
            return np.stack([h[0, 1] for h in heads])
        mean = heads[0][0].copy()
        for h in heads[1:]:
            mean += h[0]
        return class_to_region(mean / len(heads))
