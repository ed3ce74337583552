"""Dice and 95th-percentile Hausdorff distance per tumour region."""
import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi
from scipy.spatial import cKDTree

from .errors import ShapeMismatch
from .fusion import SegmentationMap
from .network import REGIONS

CSV_FIELDS = ("subject_id",) + tuple(f"dice_{r}" for r in REGIONS) + tuple(f"hd95_{r}" for r in REGIONS)

_SIX = ndi.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class MetricReport:
    dice: dict
    hd95: dict

    def row(self, subject_id):
        return [subject_id] + [self.dice[r] for r in REGIONS] + [self.hd95[r] for r in REGIONS]


def _mask(m):
    return np.asarray(getattr(m, "data", m)) != 0


def dice(a, b):
    """``2|a & b| / (|a| + |b|)``; two empty masks score 1."""
    a, b = _mask(a), _mask(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def surface(mask):
    """Foreground voxels with at least one 6-neighbour in the background (outside counts as background)."""
    m = _mask(mask)
    return m & ~ndi.binary_erosion(m, structure=_SIX, border_value=0)


def percentile_linear(values, q):
    """Percentile with linear interpolation between order statistics (rank ``(n - 1) q / 100``)."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    if x.size == 0:
        raise ValueError("percentile of an empty set")
    h = (x.size - 1) * q / 100.0
    lo = int(math.floor(h))
    hi = min(lo + 1, x.size - 1)
    return float(x[lo] + (h - lo) * (x[hi] - x[lo]))


def directed_distances(src, dst, spacing):
    """Distance from every ``src`` surface voxel to the nearest ``dst`` surface voxel, in mm."""
    sp = np.asarray(spacing, dtype=np.float64)
    p = np.argwhere(src) * sp
    q = np.argwhere(dst) * sp
    d, _ = cKDTree(q).query(p, k=1)
    return d


def hd95(a, b, spacing=(1.0, 1.0, 1.0)):
    """Pooled 95th percentile of both directed surface-distance sets.

    Both masks empty gives 0; exactly one empty gives the volume diagonal.
    """
    a, b = _mask(a), _mask(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    ea, eb = not a.any(), not b.any()
    if ea and eb:
        return 0.0
    if ea or eb:
        return float(np.linalg.norm(np.asarray(a.shape) * np.asarray(spacing, dtype=np.float64)))
    sa, sb = surface(a), surface(b)
    pooled = np.concatenate([directed_distances(sa, sb, spacing), directed_distances(sb, sa, spacing)])
    return percentile_linear(pooled, 95.0)


def _as_map(m, spacing):
    if isinstance(m, SegmentationMap):
        return m
    return SegmentationMap(np.asarray(getattr(m, "data", m)), getattr(m, "spacing", spacing))


def evaluate(pred, ref, spacing=(1.0, 1.0, 1.0)):
    """Dice and HD95 for WT, TC and EN derived from two label maps."""
    pred, ref = _as_map(pred, spacing), _as_map(ref, spacing)
    if pred.shape != ref.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs reference {ref.shape}")
    sp = ref.spacing
    d, h = {}, {}
    for name, p, r in zip(REGIONS, pred.regions(), ref.regions()):
        d[name] = dice(p, r)
        h[name] = hd95(p, r, sp)
    return MetricReport(d, h)


def write_metrics_csv(path, rows):
    """``rows`` is an iterable of ``(subject_id, MetricReport)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for sid, report in rows:
            w.writerow(report.row(sid))
    return path

