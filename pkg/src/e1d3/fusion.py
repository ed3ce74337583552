"""Turn three binary region maps into one label map with EN ⊆ TC ⊆ WT."""
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage as ndi

from .errors import ConfigError, ShapeMismatch
from .volume import Volume3, check_labels


@dataclass(frozen=True)
class FusionConfig:
    threshold: float = 0.5
    min_cluster_frac: float = 0.1
    connectivity: int = 26
    hole_fill: bool = True

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")
        if not 0.0 <= self.min_cluster_frac < 1.0:
            raise ConfigError("min_cluster_frac must lie in [0, 1)")
        if self.connectivity not in (6, 18, 26):
            raise ConfigError("connectivity must be 6, 18 or 26")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SegmentationMap:
    labels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 3:
            raise ShapeMismatch(f"label map must be 3D, got {lab.shape}")
        check_labels(lab)
        object.__setattr__(self, "labels", lab.astype(np.uint8))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self):
        return self.labels.shape

    def regions(self):
        return labels_to_regions(self.labels)

    def volume(self):
        return Volume3(self.labels, self.spacing)


def labels_to_regions(labels):
    """(WT, TC, EN) boolean maps from a {0,1,2,4} label array."""
    labels = np.asarray(labels)
    return labels > 0, (labels == 1) | (labels == 4), labels == 4


def _structure(connectivity):
    rank = {6: 1, 18: 2, 26: 3}[connectivity]
    return ndi.generate_binary_structure(3, rank)


def _mask(m):
    return np.asarray(getattr(m, "data", m)) != 0


def binarize(maps, threshold=0.5):
    """Voxels ``>= threshold`` become foreground; returns (wt, tc, en) boolean arrays."""
    arrays = maps.stack() if hasattr(maps, "stack") else np.asarray(maps)
    return tuple(np.asarray(a) >= threshold for a in arrays)


def connected_components(mask, connectivity=26):
    """Label foreground components; returns ``(labels, sizes)`` with ``sizes[i]`` for label ``i + 1``."""
    lab, n = ndi.label(_mask(mask), structure=_structure(connectivity))
    sizes = np.bincount(lab.ravel(), minlength=n + 1)[1:]
    return lab, sizes


def remove_small_clusters(mask, min_cluster_frac=0.1, connectivity=26):
    """Drop components smaller than ``min_cluster_frac`` times the largest one."""
    m = _mask(mask)
    lab, sizes = connected_components(m, connectivity)
    if sizes.size == 0:
        return m.copy()
    keep = np.concatenate([[False], sizes >= min_cluster_frac * sizes.max()])
    return keep[lab]


def fill_holes(mask):
    """Fill background pockets that cannot reach the border through 6-connected background."""
    m = _mask(mask)
    bg, n = ndi.label(~m, structure=_structure(6))
    if n == 0:
        return m.copy()
    border = np.zeros(n + 1, dtype=bool)
    for axis in range(3):
        for idx in (0, -1):
            border[np.unique(np.take(bg, idx, axis=axis))] = True
    border[0] = True  # label 0 is the foreground itself
    return m | ~border[bg]


def _check_congruent(*masks):
    shapes = {np.shape(getattr(m, "data", m)) for m in masks}
    if len(shapes) != 1:
        raise ShapeMismatch(f"region maps have different shapes: {sorted(shapes)}")


def assemble_labels(wt, tc, en):
    labels = np.zeros(wt.shape, dtype=np.uint8)
    labels[wt] = 2
    labels[tc] = 1
    labels[en] = 4
    return labels


def fuse_naive(wt, tc, en, spacing=(1.0, 1.0, 1.0)):
    """Only impose the hierarchy: TC &= WT, EN &= TC."""
    _check_congruent(wt, tc, en)
    wt = _mask(wt)
    tc = _mask(tc) & wt
    en = _mask(en) & tc
    return SegmentationMap(assemble_labels(wt, tc, en), spacing)


def fuse_full(wt, tc, en, cfg=None, spacing=(1.0, 1.0, 1.0)):
    """Morphological fusion.

    1. WT: fill holes, drop clusters below ``min_cluster_frac`` of the largest.
    2. TC components overlapping WT are clipped to WT. Components lying
       entirely outside WT are dropped unless they reach the same cluster
       threshold, in which case they are added to WT instead.
    3. TC: fill holes (filled voxels join WT too); EN &= TC.
    """
    cfg = cfg or FusionConfig()
    _check_congruent(wt, tc, en)
    wt, tc, en = _mask(wt), _mask(tc), _mask(en)

    if cfg.hole_fill:
        wt = fill_holes(wt)
    wt = remove_small_clusters(wt, cfg.min_cluster_frac, cfg.connectivity)
    _, wt_sizes = connected_components(wt, cfg.connectivity)
    min_size = cfg.min_cluster_frac * (wt_sizes.max() if wt_sizes.size else 0)

    lab, sizes = connected_components(tc, cfg.connectivity)
    if sizes.size:
        overlap = np.bincount(lab[wt], minlength=sizes.size + 1)[1:]
        restore = np.concatenate([[False], (overlap == 0) & (sizes >= min_size)])[lab]
        tc = (tc & wt) | restore
        wt = wt | restore

    if cfg.hole_fill:
        tc = fill_holes(tc)
        wt = wt | tc
    en = en & tc
    return SegmentationMap(assemble_labels(wt, tc, en), spacing)
