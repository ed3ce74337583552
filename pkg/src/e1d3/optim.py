"""SGD with Nesterov momentum and polynomial learning-rate decay."""
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteGradient


@dataclass(frozen=True)
class TrainConfig:
    eta0: float = 1e-2
    t_max: int = 500
    momentum: float = 0.99
    weight_decay: float = 1e-6
    batch_size: int = 2
    steps_per_epoch: int = 250
    seed: int = 0
    dice_epsilon: float = 1e-5
    lr_exponent: float = 0.9

    def __post_init__(self):
        if self.eta0 <= 0 or self.t_max < 1 or self.batch_size < 1:
            raise ConfigError("eta0, t_max and batch_size must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0 or self.dice_epsilon <= 0 or self.steps_per_epoch < 0:
            raise ConfigError("weight_decay, steps_per_epoch must be >= 0 and dice_epsilon > 0")
        if self.lr_exponent <= 0:
            raise ConfigError("lr_exponent must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)
    epoch: int = 0
    step: int = 0

    @classmethod
    def for_params(cls, params):
        return cls({k: np.zeros_like(v) for k, v in params.items()})


def lr_at(t, cfg):
    """``eta0 * (1 - t / t_max) ** exponent``."""
    if not 0 <= t <= cfg.t_max:
        raise ValueError(f"epoch {t} outside [0, {cfg.t_max}]")
    return cfg.eta0 * (1.0 - t / cfg.t_max) ** cfg.lr_exponent


def decays(name):
    # kernels only; biases are left unregularised
    return name.endswith(".w")


def sgd_nesterov_step(state, opt, lr, cfg):
    """One Nesterov update in place. Checks every gradient before touching anything."""
    for name, g in state.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name}", step=opt.step)
    m, wd = cfg.momentum, cfg.weight_decay
    for name, p in state.params.items():
        g = state.grads[name]
        if wd and decays(name):
            g = g + wd * p
        v = opt.velocity.get(name)
        if v is None:
            v = opt.velocity[name] = np.zeros_like(p)
        v *= m
        v -= lr * g
        p += m * v - lr * g
    opt.step += 1
    return state, opt
