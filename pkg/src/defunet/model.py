"""The dual-encoder fusion segmentation network and a plain baseline.

The main network runs two encoders in lockstep.  The context path X is a
chain of densely connected recurrent blocks separated by max pooling; the
spatial path Y is a chain of inception-dilation blocks fed, at every
stage, by the pixelwise sum of both paths:

    X_1 = DCRC_1(input),  Y_1 = X_1,
    X_{n+1} = DCRC_{n+1}(maxpool(X_n)),
    Y_{n+1} = Inception_n(X_n + Y_n).

The decoder consumes the fused sums as skip connections (the first skip
is X_1 itself, there being no second path yet) and upsamples with
parameter-free nearest-neighbor interpolation.  A 1x1 conv + sigmoid head
emits per-pixel probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np

from . import ops
from .blocks import DCRCBlock, DoubleConvBlock, InceptionDilationBlock
from .layers import Conv2d, Module
from .tensor import ShapeError

__all__ = [
    "ModelConfig",
    "ConfigError",
    "FusionStage",
    "DEFUNetModel",
    "UNetBaseline",
    "build",
    "count_params",
]

ARCHS = ("defunet", "unet")


class ConfigError(ValueError):
    """An architecture description is internally inconsistent."""


@dataclass(frozen=True)
class ModelConfig:
    """Declarative description of a network.

    When ``filters`` is omitted the per-level schedule is derived from
    ``base_filters`` by doubling, except that the bottom level repeats the
    one above it (f, 2f, 4f, 8f, 8f for five levels), which trims the
    widest layer's parameter cost.  An explicit ``filters`` tuple is
    accepted as an ablation escape hatch and only checked for positivity.
    """

    arch: str = "defunet"
    levels: int = 5
    base_filters: int = 32
    filters: tuple = field(default=None)
    steps: int = 2
    units: int = 2
    alpha: float = 0.01
    in_channels: int = 1
    out_channels: int = 1
    fuse_bottom: bool = True
    inception_batchnorm: bool = True

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        if self.base_filters < 1:
            raise ConfigError(f"base_filters must be >= 1, got {self.base_filters}")
        if self.steps < 0 or self.units < 1:
            raise ConfigError(
                f"need steps >= 0 and units >= 1, got steps={self.steps}, units={self.units}"
            )
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.filters is not None:
            object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
            if len(self.filters) != self.levels:
                raise ConfigError(
                    f"explicit filters must list one width per level "
                    f"({self.levels}), got {len(self.filters)}"
                )
            if any(f < 1 for f in self.filters):
                raise ConfigError(f"filter widths must be >= 1, got {self.filters}")

    def resolved_filters(self) -> tuple:
        """Per-level channel widths; bottom repeats the level above it."""
        if self.filters is not None:
            return self.filters
        sched = tuple(self.base_filters * 2 ** min(n, self.levels - 2)
                      for n in range(self.levels))
        assert sched[-1] == sched[-2]
        return sched

    def divisor(self) -> int:
        """Spatial sizes must be divisible by this (one halving per level)."""
        return 2 ** (self.levels - 1)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class FusionStage(NamedTuple):
    x: object
    y: object
    skip: object


def _check_input(x, config: ModelConfig):
    data = x.data if hasattr(x, "data") else np.asarray(x)
    if data.ndim != 4 or data.shape[1] != config.in_channels:
        raise ShapeError(
            f"expected input (N, {config.in_channels}, H, W), got {data.shape}"
        )
    div = config.divisor()
    if data.shape[2] % div or data.shape[3] % div:
        raise ShapeError(
            f"input spatial size {data.shape[2]}x{data.shape[3]} must be divisible "
            f"by {div} ({config.levels} levels)"
        )


class DEFUNetModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        if config.arch != "defunet":
            raise ConfigError(f"DEFUNetModel needs arch='defunet', got {config.arch!r}")
        self.config = config
        rng = np.random.default_rng(seed)
        f = config.resolved_filters()
        kw = dict(units=config.units, steps=config.steps, alpha=config.alpha, rng=rng)
        self.encoders = [DCRCBlock(config.in_channels if n == 0 else f[n - 1], f[n], **kw)
                         for n in range(config.levels)]
        self.inceptions = [
            InceptionDilationBlock(f[n], f[n + 1], alpha=config.alpha,
                                   batchnorm=config.inception_batchnorm, rng=rng)
            for n in range(config.levels - 1)
        ]
        self.decoders = [DCRCBlock(f[n + 1] + f[n], f[n], **kw)
                         for n in range(config.levels - 1)]
        self.head = Conv2d(f[0], config.out_channels, kernel=1, rng=rng)
        self.refresh_parameter_names()

    def _encode(self, x) -> list:
        stages = []
        xn = self.encoders[0](x)
        yn, skip = xn, xn
        stages.append(FusionStage(xn, yn, skip))
        for n in range(1, self.config.levels):
            # the fused sum feeds both the next inception stage and, from
            # stage 2 on, doubles as the previous stage's skip
            fused = skip if n > 1 else ops.add(xn, yn)
            x_next = self.encoders[n](ops.maxpool2d(xn))
            y_next = self.inceptions[n - 1](fused)
            skip = ops.add(x_next, y_next)
            stages.append(FusionStage(x_next, y_next, skip))
            xn, yn = x_next, y_next
        return stages

    def _decode(self, stages):
        bottom = stages[-1]
        d = bottom.skip if self.config.fuse_bottom else bottom.x
        for n in range(self.config.levels - 2, -1, -1):
            d = self.decoders[n](
                ops.concat_channels([ops.upsample_nearest2x(d), stages[n].skip])
            )
        return ops.sigmoid(self.head(d))

    def forward(self, x):
        _check_input(x, self.config)
        return self._decode(self._encode(x))

    def fusion_trace(self, x):
        """Run forward, also returning the per-stage (X_n, Y_n, skip_n) nodes."""
        _check_input(x, self.config)
        stages = self._encode(x)
        return stages, self._decode(stages)


class UNetBaseline(Module):
    """Single-encoder network of double-conv blocks; same decoder topology."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        if config.arch != "unet":
            raise ConfigError(f"UNetBaseline needs arch='unet', got {config.arch!r}")
        self.config = config
        rng = np.random.default_rng(seed)
        f = config.resolved_filters()
        self.encoders = [
            DoubleConvBlock(config.in_channels if n == 0 else f[n - 1], f[n],
                            alpha=config.alpha, rng=rng)
            for n in range(config.levels)
        ]
        self.decoders = [DoubleConvBlock(f[n + 1] + f[n], f[n], alpha=config.alpha, rng=rng)
                         for n in range(config.levels - 1)]
        self.head = Conv2d(f[0], config.out_channels, kernel=1, rng=rng)
        self.refresh_parameter_names()

    def forward(self, x):
        _check_input(x, self.config)
        feats = []
        h = x
        for n, enc in enumerate(self.encoders):
            if n > 0:
                h = ops.maxpool2d(h)
            h = enc(h)
            feats.append(h)
        d = feats[-1]
        for n in range(self.config.levels - 2, -1, -1):
            d = self.decoders[n](
                ops.concat_channels([ops.upsample_nearest2x(d), feats[n]])
            )
        return ops.sigmoid(self.head(d))


def build(config: ModelConfig, seed: int = 0) -> Module:
    """Instantiate the architecture named by ``config.arch``, deterministically."""
    model = DEFUNetModel(config, seed) if config.arch == "defunet" else UNetBaseline(config, seed)
    names = [name for name, _ in model.named_parameters()]
    assert len(names) == len(set(names))
    return model


def count_params(model: Module) -> int:
    return sum(p.data.size for p in model.parameters())
