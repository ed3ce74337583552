"""Synthetic subjects: a brain ellipsoid holding three nested tumour ellipsoids."""
import os
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidSpec
from .volume import MODALITIES, LabeledVolume, Volume3

# per channel: (healthy brain, PTE, NEC, ENC)
DEFAULT_INTENSITIES = (
    (1.0, 0.8, 0.5, 0.9),  # t1
    (1.0, 1.0, 0.6, 2.0),  # t1ce
    (1.0, 1.8, 1.5, 1.2),  # t2
    (1.0, 2.0, 1.4, 1.3),  # flair
)


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple = (64, 64, 64)
    n_subjects: int = 4
    brain_radius_frac: tuple = (0.38, 0.45)
    wt_radii: tuple = (9.0, 13.0)
    tc_radii: tuple = (5.5, 8.0)
    en_radii: tuple = (2.5, 4.5)
    intensities: tuple = DEFAULT_INTENSITIES
    noise: float = 0.0
    seed: int = 0
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for name in ("shape", "brain_radius_frac", "wt_radii", "tc_radii", "en_radii", "spacing"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "intensities", tuple(tuple(map(float, r)) for r in self.intensities))
        if len(self.shape) != 3 or min(self.shape) < 8:
            raise InvalidSpec(f"phantom shape must be three extents >= 8, got {self.shape}")
        if self.n_subjects < 1 or self.noise < 0:
            raise InvalidSpec("n_subjects must be >= 1 and noise >= 0")
        ranges = [self.en_radii, self.tc_radii, self.wt_radii]
        for lo, hi in ranges:
            if not 0 < lo <= hi:
                raise InvalidSpec(f"bad radius range ({lo}, {hi})")
        # any draw must give EN < TC < WT on every axis
        for inner, outer in zip(ranges, ranges[1:]):
            if inner[1] >= outer[0]:
                raise InvalidSpec(f"radius ranges must nest strictly: {inner} vs {outer}")
        lo, hi = self.brain_radius_frac
        if not 0 < lo <= hi < 0.5:
            raise InvalidSpec("brain_radius_frac must lie in (0, 0.5)")
        if min(self.shape) * lo <= self.wt_radii[1] + 1:
            raise InvalidSpec("tumour does not fit inside the brain for this shape")
        if len(self.intensities) < 1 or any(len(r) != 4 for r in self.intensities):
            raise InvalidSpec("intensities need (brain, PTE, NEC, ENC) per channel")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PhantomGeometry:
    brain_center: tuple
    brain_radii: tuple
    tumor_center: tuple
    wt_radii: tuple
    tc_radii: tuple
    en_radii: tuple


def _inside(grid, center, radii):
    return sum(((g - c) / r) ** 2 for g, c, r in zip(grid, center, radii)) <= 1.0


def phantom_geometry(spec, index):
    rng = np.random.default_rng([spec.seed, index])
    shape = np.array(spec.shape, dtype=float)
    brain_c = (shape - 1) / 2.0
    brain_r = shape * rng.uniform(*spec.brain_radius_frac, size=3)
    wt = rng.uniform(*spec.wt_radii, size=3)
    tc = rng.uniform(*spec.tc_radii, size=3)
    en = rng.uniform(*spec.en_radii, size=3)
    slack = np.maximum(brain_r - wt - 2.0, 0.0)
    tumor_c = brain_c + rng.uniform(-0.35, 0.35, size=3) * slack
    as_t = lambda a: tuple(float(v) for v in a)  # noqa: E731
    return PhantomGeometry(as_t(brain_c), as_t(brain_r), as_t(tumor_c), as_t(wt), as_t(tc), as_t(en))


def phantom_labels(spec, geom):
    grid = np.indices(spec.shape, dtype=np.float64)
    labels = np.zeros(spec.shape, dtype=np.uint8)
    labels[_inside(grid, geom.tumor_center, geom.wt_radii)] = 2
    labels[_inside(grid, geom.tumor_center, geom.tc_radii)] = 1
    labels[_inside(grid, geom.tumor_center, geom.en_radii)] = 4
    brain = _inside(grid, geom.brain_center, geom.brain_radii) | (labels > 0)
    return labels, brain


def make_phantom(spec, index=0):
    """Build subject ``index`` in memory as a LabeledVolume."""
    geom = phantom_geometry(spec, index)
    labels, brain = phantom_labels(spec, geom)
    noise_rng = np.random.default_rng([spec.seed, index, 1])
    region = np.select([labels == 2, labels == 1, labels == 4], [1, 2, 3], 0)
    chans = []
    for profile in spec.intensities:
        img = np.asarray(profile)[region] * brain
        if spec.noise > 0:
            img = img + spec.noise * noise_rng.standard_normal(spec.shape) * brain
            # keep the brain strictly nonzero so the default mask is the brain
            img[brain & (img == 0)] = 1e-6
        chans.append(Volume3(img, spec.spacing))
    return LabeledVolume(
        tuple(chans),
        Volume3(labels, spec.spacing),
        Volume3(brain.astype(np.uint8), spec.spacing),
        subject_id=f"phantom_{index:03d}",
    )


def make_phantoms(spec, out_dir):
    """Write ``spec.n_subjects`` subject directories of NIfTI files; returns their paths."""
    from .nifti import write_nifti

    if len(spec.intensities) != len(MODALITIES):
        raise InvalidSpec(f"on-disk phantoms need {len(MODALITIES)} channels")
    dirs = []
    for i in range(spec.n_subjects):
        v = make_phantom(spec, i)
        sub = os.path.join(out_dir, v.subject_id)
        os.makedirs(sub, exist_ok=True)
        for mod, ch in zip(MODALITIES, v.channels):
            write_nifti(ch, os.path.join(sub, f"{v.subject_id}_{mod}.nii.gz"), "float64")
        write_nifti(v.labels, os.path.join(sub, f"{v.subject_id}_seg.nii.gz"), "uint8")
        dirs.append(sub)
    return dirs
