"""End-to-end steps shared by the command line and the tests."""
import logging
import os

from .checkpoint import load_checkpoint
from .dataset import find_file, list_subjects, load_subject
from .errors import ConfigError, IoFailure
from .fusion import binarize, fuse_full, fuse_naive
from .inference import NetworkPredictor, predict_volume, predict_with_tta
from .metrics import evaluate, write_metrics_csv
from .network import build_network
from .nifti import read_nifti, write_nifti
from .sampling import SegmentSampler
from .train import train
from .volume import normalize_volume

logger = logging.getLogger(__name__)

PRED_SUFFIX = "_pred"
PROB_SUFFIX = "_prob_{}"


def subject_dirs(cfg):
    dirs = list_subjects(cfg.dataset)
    if cfg.subjects is not None:
        by_id = {os.path.basename(d): d for d in dirs}
        missing = [s for s in cfg.subjects if s not in by_id]
        if missing:
            raise ConfigError(f"subjects not found under {cfg.dataset}: {missing}")
        dirs = [by_id[s] for s in cfg.subjects]
    if not dirs:
        raise ConfigError(f"no subject directories under {cfg.dataset}")
    return dirs


def run_training(cfg):
    """Train on every configured subject; checkpoints and the step log go under ``cfg.output``."""
    cfg.validate()
    volumes = [normalize_volume(load_subject(d)) for d in subject_dirs(cfg)]
    sampler = SegmentSampler(volumes, cfg.segment_size, cfg.augment, seed=cfg.seed)
    state = build_network(cfg.network, seed=cfg.seed)
    ckpt_dir = os.path.join(cfg.output, "checkpoints")
    os.makedirs(cfg.output, exist_ok=True)
    log_path = os.path.join(cfg.output, "train.log")
    logger.info("training %s on %d subjects", cfg.network.variant, len(volumes))
    return train(state, cfg.network, sampler, cfg.train, ckpt_dir, log_path)


def predict_subject(ckpt, volume, cfg, tta=None, mode=None):
    """Return ``(SegmentationMap, RegionProbMaps)`` for one loaded subject."""
    tta = cfg.inference.tta if tta is None else tta
    mode = mode or cfg.fusion_mode
    model = NetworkPredictor(ckpt.state, ckpt.spec)
    run = predict_with_tta if tta else predict_volume
    maps = run(model, normalize_volume(volume), window=cfg.inference.window, stride=cfg.inference.stride)
    seg = fuse_regions(binarize(maps, cfg.fusion.threshold), mode, cfg.fusion, maps.spacing)
    return seg, maps


def fuse_regions(masks, mode, fusion_cfg=None, spacing=(1.0, 1.0, 1.0)):
    wt, tc, en = masks
    if mode == "naive":
        return fuse_naive(wt, tc, en, spacing)
    if mode == "full":
        return fuse_full(wt, tc, en, fusion_cfg, spacing)
    raise ConfigError(f"unknown fusion mode {mode!r}")


def run_inference(cfg, checkpoint, subject_dir, out_dir=None, tta=None, mode=None, save_probs=False):
    ckpt = load_checkpoint(checkpoint)
    volume = load_subject(subject_dir)
    seg, maps = predict_subject(ckpt, volume, cfg, tta, mode)
    out_dir = out_dir or os.path.join(cfg.output, "predictions")
    os.makedirs(out_dir, exist_ok=True)
    sid = volume.subject_id
    written = [write_nifti(seg, os.path.join(out_dir, f"{sid}{PRED_SUFFIX}.nii.gz"), "uint8")]
    if save_probs:
        for name, vol in zip(("wt", "tc", "en"), maps.volumes()):
            path = os.path.join(out_dir, f"{sid}{PROB_SUFFIX.format(name)}.nii.gz")
            written.append(write_nifti(vol, path, "float64"))
    return written


def prediction_files(pred_dir):
    """Map subject id -> prediction path for every ``<id>_pred.nii[.gz]`` in ``pred_dir``."""
    out = {}
    for f in sorted(os.listdir(pred_dir)):
        for ext in (".nii.gz", ".nii"):
            tail = PRED_SUFFIX + ext
            if f.endswith(tail):
                out[f[: -len(tail)]] = os.path.join(pred_dir, f)
                break
    return out


def reference_file(ref_dir, sid):
    sub = os.path.join(ref_dir, sid)
    if os.path.isdir(sub):
        path = find_file(sub, "_seg")
        if path:
            return path
    for name in (f"{sid}_seg", sid):
        for ext in (".nii.gz", ".nii"):
            path = os.path.join(ref_dir, name + ext)
            if os.path.isfile(path):
                return path
    raise IoFailure(f"no reference segmentation for {sid} under {ref_dir}")


def run_evaluation(pred_dir, ref_dir, csv_path):
    preds = prediction_files(pred_dir)
    if not preds:
        raise IoFailure(f"no *{PRED_SUFFIX}.nii[.gz] files in {pred_dir}")
    rows = []
    for sid, path in preds.items():
        pred, _ = read_nifti(path)
        ref, _ = read_nifti(reference_file(ref_dir, sid))
        rows.append((sid, evaluate(pred, ref, ref.spacing)))
    write_metrics_csv(csv_path, rows)
    return rows
