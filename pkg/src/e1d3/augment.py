"""Stochastic distortions: flip, affine, elastic and gamma.

Images are resampled trilinearly and labels by nearest neighbour, so label
values never get mixed. Samples falling outside the segment read as zero.
"""
import logging
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import ndimage as ndi

from .errors import ConfigError
from .sampling import SegmentPair

logger = logging.getLogger(__name__)

OPS = ("flip", "affine", "elastic", "gamma")


@dataclass(frozen=True)
class AugmentConfig:
    distort_prob: float = 0.5
    per_op_prob: float = 0.5
    rotation_deg: float = 10.0
    scale_range: tuple = (0.9, 1.1)
    elastic_grid: int = 7
    max_displacement: float = 7.5
    log_gamma_range: tuple = (-0.3, 0.3)

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(float(v) for v in self.scale_range))
        object.__setattr__(self, "log_gamma_range", tuple(float(v) for v in self.log_gamma_range))
        for name in ("distort_prob", "per_op_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ConfigError(f"bad scale range {self.scale_range}")
        lo, hi = self.log_gamma_range
        if lo > hi:
            raise ConfigError(f"bad log-gamma range {self.log_gamma_range}")
        if self.rotation_deg < 0 or self.max_displacement < 0 or self.elastic_grid < 2:
            raise ConfigError("rotation, displacement must be >= 0 and elastic_grid >= 2")

    def to_dict(self):
        return asdict(self)


def _resample(pair, fn):
    """Apply a coordinate-mapping resampler ``fn(arr, order)`` to every channel and the labels."""
    img = pair.image[0]
    out = np.stack([fn(img[c], 1) for c in range(img.shape[0])])
    lab = fn(pair.label[0, 0], 0).astype(pair.label.dtype)
    return SegmentPair(out[None], lab[None, None])


def random_flip(pair, rng, p):
    axes = [ax for ax in (2, 3, 4) if rng.random() < p]
    if not axes:
        return pair
    return SegmentPair(np.flip(pair.image, axes).copy(), np.flip(pair.label, axes).copy())


def rotation_matrix(angles_deg):
    """Rotation composed as R_0 @ R_1 @ R_2, each about one array axis."""
    m = np.eye(3)
    for axis, deg in enumerate(angles_deg):
        t = np.deg2rad(deg)
        c, s = np.cos(t), np.sin(t)
        i, j = [a for a in range(3) if a != axis]
        r = np.eye(3)
        r[i, i], r[i, j], r[j, i], r[j, j] = c, -s, s, c
        m = m @ r
    return m


def apply_affine(pair, matrix):
    """Resample with output voxel ``p`` reading input ``matrix @ (p - c) + c``, ``c`` the centre."""
    matrix = np.asarray(matrix, dtype=np.float64)
    c = (np.array(pair.image.shape[2:]) - 1) / 2.0
    offset = c - matrix @ c

    def fn(a, order):
        return ndi.affine_transform(a, matrix, offset=offset, order=order, mode="grid-constant", cval=0)

    return _resample(pair, fn)


def random_affine(pair, rng, cfg):
    angles = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg, size=3)
    scales = rng.uniform(*cfg.scale_range, size=3)
    # input coordinates come from the inverse map of the sampled transform
    forward = rotation_matrix(angles) @ np.diag(scales)
    return apply_affine(pair, np.linalg.inv(forward))


def control_grid_field(offsets, shape):
    """Trilinearly upsample control-point offsets (3, G, G, G) to a dense (3, *shape) field."""
    g = np.array(offsets.shape[1:])
    axes = [np.linspace(0.0, gi - 1.0, n) for gi, n in zip(g, shape)]
    coords = np.stack(np.meshgrid(*axes, indexing="ij"))
    return np.stack([ndi.map_coordinates(o, coords, order=1, mode="nearest") for o in offsets])


def apply_displacement(pair, field):
    """Resample so that output voxel ``p`` reads input ``p + field[:, p]``."""
    shape = pair.image.shape[2:]
    if field.shape != (3,) + tuple(shape):
        raise ValueError(f"displacement field {field.shape} does not match segment {shape}")
    coords = np.indices(shape, dtype=np.float64) + field

    def fn(a, order):
        return ndi.map_coordinates(a, coords, order=order, mode="grid-constant", cval=0)

    return _resample(pair, fn)


def random_elastic(pair, rng, cfg):
    g = cfg.elastic_grid
    offsets = rng.uniform(-cfg.max_displacement, cfg.max_displacement, size=(3, g, g, g))
    return apply_displacement(pair, control_grid_field(offsets, pair.image.shape[2:]))


def gamma_transform(x, gamma, lo=None, hi=None):
    lo = x.min() if lo is None else lo
    hi = x.max() if hi is None else hi
    unit = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    return lo + (hi - lo) * unit**gamma


def random_gamma(pair, rng, cfg, min_range=1e-8):
    img = pair.image.copy()
    gammas = np.exp(rng.uniform(*cfg.log_gamma_range, size=img.shape[1]))
    for c, gamma in enumerate(gammas):
        ch = img[0, c]
        lo, hi = ch.min(), ch.max()
        if hi - lo < min_range:
            logger.debug("gamma: channel %d is constant, skipped", c)
            continue
        img[0, c] = gamma_transform(ch, gamma, lo, hi)
    return replace(pair, image=img)


def augment_gates(rng, cfg):
    """Draw the outer gate then one gate per op; returns a bool per op in :data:`OPS` order."""
    outer = rng.random() < cfg.distort_prob
    inner = rng.random(len(OPS)) < cfg.per_op_prob
    return tuple(bool(outer and g) for g in inner)


def augment(pair, rng, cfg):
    gates = augment_gates(rng, cfg)
    if gates[0]:
        pair = random_flip(pair, rng, cfg.per_op_prob)
    if gates[1]:
        pair = random_affine(pair, rng, cfg)
    if gates[2]:
        pair = random_elastic(pair, rng, cfg)
    if gates[3]:
        pair = random_gamma(pair, rng, cfg)
    return pair
