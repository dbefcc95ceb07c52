"""Run configuration: INI parsing, defaults, and serialization.

A run is described by a small INI file with [run], [model], [train],
[data], and [augment] sections.  Every key has a default, so an empty
file is a valid (full-scale) configuration.  Unknown sections or keys are
rejected outright rather than ignored, since a typo silently falling back
to a default is the worst failure mode a config system can have.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields

from .data import AugmentConfig
from .model import ConfigError, ModelConfig

__all__ = [
    "TrainConfig",
    "DataConfig",
    "RunConfig",
    "load_run_config",
    "parse_run_config",
    "run_config_to_ini",
    "model_config_to_ini",
    "model_config_from_ini",
    "ConfigError",
]


@dataclass
class TrainConfig:
    batch_size: int = 2
    max_epochs: int = 175
    lr: float = 1e-5
    plateau_factor: float = 0.2
    plateau_patience: int = 5
    early_stop_patience: int = 5
    min_lr: float = 0.0
    threshold: float = 0.5
    pooled_auc: bool = False
    stop_train_dice: float = 0.0
    augment: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if not 0.0 < self.lr:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError(f"plateau_factor must be in (0, 1), got {self.plateau_factor}")


@dataclass
class DataConfig:
    data_dir: str = ""
    synthetic: bool = False
    synthetic_n: int = 8
    size: int = 512
    train_count: int = 528
    val_count: int = 76
    test_count: int = 100
    cross: str = ""
    val_fraction: float = 0.1
    dilate_radius: int = 1
    dilate_iterations: int = 1

    def __post_init__(self):
        if self.cross not in ("", "m2s", "s2m"):
            raise ConfigError(f"cross must be '', 'm2s' or 's2m', got {self.cross!r}")
        if self.size < 2:
            raise ConfigError(f"size must be >= 2, got {self.size}")

    @property
    def counts(self):
        return self.train_count, self.val_count, self.test_count


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)


# --------------------------------------------------------------------------
# value codecs

def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_filters(s: str):
    s = s.strip()
    if s in ("auto", ""):
        return None
    try:
        return tuple(int(part) for part in s.split(","))
    except ValueError:
        raise ConfigError(f"filters must be 'auto' or comma-separated integers, got {s!r}")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "auto"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_SECTION_SPECS = {
    "run": {"seed": int},
    "model": {
        "arch": str, "levels": int, "base_filters": int, "filters": _parse_filters,
        "steps": int, "units": int, "alpha": float, "in_channels": int,
        "out_channels": int, "fuse_bottom": _parse_bool, "inception_batchnorm": _parse_bool,
    },
    "train": {
        "batch_size": int, "max_epochs": int, "lr": float, "plateau_factor": float,
        "plateau_patience": int, "early_stop_patience": int, "min_lr": float,
        "threshold": float, "pooled_auc": _parse_bool, "stop_train_dice": float,
        "augment": _parse_bool,
    },
    "data": {
        "data_dir": str, "synthetic": _parse_bool, "synthetic_n": int, "size": int,
        "train_count": int, "val_count": int, "test_count": int, "cross": str,
        "val_fraction": float, "dilate_radius": int, "dilate_iterations": int,
    },
    "augment": {
        "rotation": float, "shift": float, "shear": float, "zoom": float, "hflip": float,
    },
}


def _read_ini(text: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e
    return parser


def _section_kwargs(parser, section: str) -> dict:
    spec = _SECTION_SPECS[section]
    out = {}
    if not parser.has_section(section):
        return out
    for key, raw in parser.items(section):
        if key not in spec:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        try:
            out[key] = spec[key](raw)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({e})") from e
    return out


def parse_run_config(text: str) -> RunConfig:
    parser = _read_ini(text)
    unknown = [s for s in parser.sections() if s not in _SECTION_SPECS]
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    try:
        return RunConfig(
            seed=_section_kwargs(parser, "run").get("seed", 0),
            model=ModelConfig(**_section_kwargs(parser, "model")),
            train=TrainConfig(**_section_kwargs(parser, "train")),
            data=DataConfig(**_section_kwargs(parser, "data")),
            augment=AugmentConfig(**_section_kwargs(parser, "augment")),
        )
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_run_config(fh.read())


def _write_section(out: io.StringIO, name: str, obj) -> None:
    out.write(f"[{name}]\n")
    for f in fields(obj):
        out.write(f"{f.name} = {_format_value(getattr(obj, f.name))}\n")
    out.write("\n")


def run_config_to_ini(cfg: RunConfig) -> str:
    out = io.StringIO()
    out.write("[run]\n")
    out.write(f"seed = {cfg.seed}\n\n")
    _write_section(out, "model", cfg.model)
    _write_section(out, "train", cfg.train)
    _write_section(out, "data", cfg.data)
    _write_section(out, "augment", cfg.augment)
    return out.getvalue()


def model_config_to_ini(cfg: ModelConfig) -> str:
    """Deterministic text form of a model config (stored inside checkpoints)."""
    out = io.StringIO()
    _write_section(out, "model", cfg)
    return out.getvalue()


def model_config_from_ini(text: str) -> ModelConfig:
    parser = _read_ini(text)
    return ModelConfig(**_section_kwargs(parser, "model"))
