"""Subject directories on disk and deterministic fold splits."""
import os

import numpy as np

from .errors import MissingModality, ShapeMismatch, TooFewSubjects
from .nifti import read_nifti
from .volume import MODALITIES, LabeledVolume, Volume3, check_labels

DEFAULT_SUFFIXES = {m: f"_{m}" for m in MODALITIES} | {"seg": "_seg"}
EXTENSIONS = (".nii.gz", ".nii")


def find_file(directory, suffix):
    """The single ``*<suffix>.nii[.gz]`` file in ``directory``, or None."""
    hits = sorted(
        f for f in os.listdir(directory) if any(f.endswith(suffix + ext) for ext in EXTENSIONS)
    )
    if len(hits) > 1:
        raise ShapeMismatch(f"ambiguous files for {suffix!r} in {directory}: {hits}")
    return os.path.join(directory, hits[0]) if hits else None


def load_subject(directory, suffixes=None):
    """Read T1, T1ce, T2, FLAIR (in that order) and the optional segmentation."""
    suffixes = {**DEFAULT_SUFFIXES, **(suffixes or {})}
    directory = os.fspath(directory)
    chans = []
    for mod in MODALITIES:
        path = find_file(directory, suffixes[mod])
        if path is None:
            raise MissingModality(f"{directory}: no {suffixes[mod]} volume")
        vol, _ = read_nifti(path)
        chans.append(vol)
    labels = None
    seg = find_file(directory, suffixes["seg"])
    if seg is not None:
        vol, _ = read_nifti(seg)
        check_labels(vol.data)
        labels = Volume3(vol.data.astype(np.uint8), vol.spacing)
    sid = os.path.basename(os.path.normpath(directory))
    return LabeledVolume(tuple(chans), labels, None, sid)


def list_subjects(root):
    """Sorted subject directories (immediate subdirectories) under ``root``."""
    return sorted(
        os.path.join(root, d) for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )


def kfold_split(subject_ids, k, seed=0):
    """Shuffle with ``seed`` and cut into ``k`` folds whose sizes differ by at most one."""
    ids = list(subject_ids)
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(set(ids)) != len(ids):
        raise ValueError("subject ids must be unique")
    if len(ids) < k:
        raise TooFewSubjects(f"{len(ids)} subjects cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    return [[ids[i] for i in part] for part in np.array_split(order, k)]
