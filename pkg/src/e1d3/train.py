"""Training loop: multi-head loss, Nesterov SGD, per-epoch checkpoints."""
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .errors import NonFiniteGradient
from .losses import combined_loss
from .network import backward, forward
from .optim import OptimizerState, lr_at, sgd_nesterov_step

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    state: object
    optimizer: OptimizerState
    reports: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def checkpoint_name(epoch):
    return f"epoch_{epoch:04d}.ckpt"


def format_log_line(report, epoch, lr):
    cols = [str(report.step), str(epoch), repr(float(lr)), repr(report.total)]
    for dice, ce in report.per_head:
        cols += [repr(dice), repr(ce)]
    return "\t".join(cols)


def _next_batch(source, n):
    if hasattr(source, "batch"):
        return source.batch(n)
    pairs = [next(source) for _ in range(n)]
    images = [p.image if hasattr(p, "image") else p[0] for p in pairs]
    labels = [p.label if hasattr(p, "label") else p[1] for p in pairs]
    images = [i if i.ndim == 5 else i[None] for i in images]
    labels = [lab.reshape((1, 1) + lab.shape[-3:]) for lab in labels]
    return np.concatenate(images), np.concatenate(labels)


def train_steps(state, spec, source, cfg, checkpoint_dir=None, log_path=None, result=None):
    """Generator form of :func:`train`; yields one LossReport per step."""
    result = result if result is not None else TrainResult(state, OptimizerState.for_params(state.params))
    opt = result.optimizer
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)

    def snapshot(epoch):
        if checkpoint_dir is None:
            return
        path = os.path.join(checkpoint_dir, checkpoint_name(epoch))
        save_checkpoint(path, spec, state, opt, {"epoch": epoch, "train": cfg.to_dict()})
        result.checkpoints.append(path)

    snapshot(opt.epoch)
    if cfg.steps_per_epoch == 0:
        return
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(opt.epoch, cfg.t_max):
            lr = lr_at(epoch, cfg)
            for _ in range(cfg.steps_per_epoch):
                x, y = _next_batch(source, cfg.batch_size)
                state.zero_grad()
                trace = forward(state, spec, x)
                report, head_grads = combined_loss(trace, y, spec.variant, cfg.dice_epsilon)
                report.step = opt.step
                if not np.isfinite(report.total):
                    raise NonFiniteGradient(f"loss became {report.total}", step=opt.step)
                backward(trace, state, spec, head_grads)
                try:
                    sgd_nesterov_step(state, opt, lr, cfg)
                except NonFiniteGradient as exc:
                    exc.step = report.step
                    raise
                if log is not None:
                    log.write(format_log_line(report, epoch, lr) + "\n")
                result.reports.append(report)
                yield report
            opt.epoch = epoch + 1
            logger.info("epoch %d done, last loss %.4f", opt.epoch, result.reports[-1].total)
            snapshot(opt.epoch)
    finally:
        if log is not None:
            log.close()


def train(state, spec, source, cfg, checkpoint_dir=None, log_path=None):
    """Train ``state`` in place for ``cfg.t_max`` epochs of ``cfg.steps_per_epoch`` steps.

    ``source`` is either a :class:`~e1d3.sampling.SegmentSampler` or any
    iterator of (image, label) pairs. The learning rate changes only at
    epoch boundaries. Returns a :class:`TrainResult`.
    """
    result = TrainResult(state, OptimizerState.for_params(state.params))
    for _ in train_steps(state, spec, source, cfg, checkpoint_dir, log_path, result):
        pass
    return result
