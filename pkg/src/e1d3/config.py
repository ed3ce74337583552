"""Run configuration read from a TOML file.

Sections mirror the module configs; any key not listed here is rejected::

    seed = 0

    [paths]
    dataset = "phantoms"        # relative paths resolve against the config file
    output = "run"

    [data]
    subjects = ["phantom_000"]  # optional; default is every subject directory
    segment_size = 32

    [network]    # NetworkSpec fields
    [train]      # TrainConfig fields (seed comes from the top level)
    [augment]    # AugmentConfig fields plus enabled = true/false
    [inference]  # window, stride, tta
    [fusion]     # FusionConfig fields plus mode = "full" | "naive"
"""
import os
import sys
from dataclasses import dataclass, field, fields, replace

from .augment import AugmentConfig
from .errors import ConfigError, E1D3Error
from .fusion import FusionConfig
from .network import NetworkSpec
from .optim import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class InferenceConfig:
    window: int = 96
    stride: int | None = None
    tta: bool = False

    def __post_init__(self):
        if self.window < 1 or (self.stride is not None and self.stride < 1):
            raise ConfigError("window and stride must be positive")


@dataclass(frozen=True)
class RunConfig:
    dataset: str = ""
    output: str = "."
    subjects: tuple | None = None
    segment_size: int = 96
    seed: int = 0
    network: NetworkSpec = field(default_factory=NetworkSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig | None = field(default_factory=AugmentConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    fusion_mode: str = "full"

    def validate(self, need_dataset=True):
        if need_dataset and not os.path.isdir(self.dataset):
            raise ConfigError(f"dataset directory {self.dataset!r} does not exist")
        if self.segment_size % self.network.divisor:
            raise ConfigError(
                f"segment_size {self.segment_size} must be divisible by {self.network.divisor}"
            )
        if self.inference.window % self.network.divisor:
            raise ConfigError(f"inference window must be divisible by {self.network.divisor}")
        return self


_SECTIONS = {
    "network": NetworkSpec,
    "train": TrainConfig,
    "augment": AugmentConfig,
    "inference": InferenceConfig,
    "fusion": FusionConfig,
}
_EXTRA = {"augment": {"enabled"}, "fusion": {"mode"}}
_TOP = {"seed", "paths", "data"} | set(_SECTIONS)


def _check_keys(where, got, allowed):
    unknown = sorted(set(got) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _build(cls, section, values):
    names = {f.name for f in fields(cls)}
    _check_keys(f"[{section}]", values, names | _EXTRA.get(section, set()))
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items() if k in names}
    try:
        return cls(**kwargs)
    except E1D3Error as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def parse_config(doc, base_dir="."):
    """Build a RunConfig from an already-parsed TOML mapping."""
    _check_keys("config", doc, _TOP)
    paths = doc.get("paths", {})
    _check_keys("[paths]", paths, {"dataset", "output"})
    data = doc.get("data", {})
    _check_keys("[data]", data, {"subjects", "segment_size"})
    seed = int(doc.get("seed", 0))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))

    train_vals = dict(doc.get("train", {}))
    if "seed" in train_vals:
        raise ConfigError("set the seed at the top level, not in [train]")
    aug_vals = doc.get("augment", {})
    fusion_vals = doc.get("fusion", {})
    mode = fusion_vals.get("mode", "full")
    if mode not in ("full", "naive"):
        raise ConfigError(f"[fusion] mode must be 'full' or 'naive', got {mode!r}")
    subjects = data.get("subjects")
    return RunConfig(
        dataset=resolve(paths.get("dataset", "")) if paths.get("dataset") else "",
        output=resolve(paths.get("output", ".")),
        subjects=None if subjects is None else tuple(subjects),
        segment_size=int(data.get("segment_size", 96)),
        seed=seed,
        network=_build(NetworkSpec, "network", doc.get("network", {})),
        train=replace(_build(TrainConfig, "train", train_vals), seed=seed),
        augment=_build(AugmentConfig, "augment", aug_vals) if aug_vals.get("enabled", True) else None,
        inference=_build(InferenceConfig, "inference", doc.get("inference", {})),
        fusion=_build(FusionConfig, "fusion", fusion_vals),
        fusion_mode=mode,
    )


def load_config(path):
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc, os.path.dirname(os.path.abspath(path)))
