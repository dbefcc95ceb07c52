"""Composite building blocks of the segmentation network.

Three blocks carry the architecture: a recurrent convolutional unit that
re-adds its input at every step under shared weights, a densely connected
recurrent block that concatenates all previous features and compresses
them with 1x1 bottlenecks, and a five-branch downsampling block whose two
dilated branches stretch the receptive field anisotropically.  A plain
double-conv block rounds out the baseline network.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Parameter
from .layers import BatchNorm2d, Conv2d, Module
from .tensor import default_dtype

__all__ = [
    "effective_kernel",
    "RecurrentConvUnit",
    "DCRCBlock",
    "InceptionDilationBlock",
    "DoubleConvBlock",
]


def effective_kernel(kernel: int, rate: int) -> int:
    """Pixels covered by a kernel whose taps sit ``rate`` apart.

    A 3-tap kernel at rate 3 spans 7 pixels; at rate 2 it spans 5.
    """
    if kernel < 1 or rate < 1:
        raise ValueError(f"kernel and rate must be >= 1, got {kernel}, {rate}")
    return (rate - 1) * (kernel - 1) + kernel


class RecurrentConvUnit(Module):
    """One 3x3 conv + batchnorm applied ``steps + 1`` times under shared weights.

    z_0 = act(BN(conv(x))), then z_k = act(BN(conv(x + z_{k-1}))) for
    k = 1..steps.  Re-adding x each step needs output channels equal to
    input channels, so the unit is square by construction and its
    parameter count does not depend on ``steps``.

    The conv weights and the normalization affine (gamma, beta) are shared
    across steps, but each step keeps its own running statistics: the
    step-k input distribution differs from step 0, and folding them into
    one pair would make eval-mode normalization match no step at all.
    Running statistics are buffers, so the sharing invariant on the
    parameter count still holds for any ``steps``.
    """

    def __init__(self, channels: int, steps: int = 2, alpha: float = 0.01,
                 momentum: float = 0.1, eps: float = 1e-5, rng=None):
        super().__init__()
        if steps < 0:
            raise ValueError(f"steps must be >= 0, got {steps}")
        self.steps = int(steps)
        self.alpha = float(alpha)
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.conv = Conv2d(channels, channels, kernel=3, rng=rng)
        self.gamma = Parameter(np.ones(channels), "gamma")
        self.beta = Parameter(np.zeros(channels), "beta")
        names = []
        for k in range(self.steps + 1):
            setattr(self, f"running_mean_{k}", np.zeros(channels, dtype=default_dtype()))
            setattr(self, f"running_var_{k}", np.ones(channels, dtype=default_dtype()))
            names += [f"running_mean_{k}", f"running_var_{k}"]
        self.buffer_names = tuple(names)

    def _pass(self, x, k):
        out, new_mean, new_var = ops.batchnorm(
            self.conv(x), self.gamma, self.beta,
            getattr(self, f"running_mean_{k}"), getattr(self, f"running_var_{k}"),
            self.training, self.momentum, self.eps,
        )
        if self.training:
            setattr(self, f"running_mean_{k}", new_mean)
            setattr(self, f"running_var_{k}", new_var)
        return ops.leaky_relu(out, self.alpha)

    def forward(self, x):
        z = self._pass(x, 0)
        for k in range(1, self.steps + 1):
            z = self._pass(ops.add(x, z), k)
        return z


class DCRCBlock(Module):
    """Densely connected stack of recurrent units with 1x1 bottlenecks.

    The feature list starts as [x].  Each unit consumes a 1x1-compressed
    view of everything so far (the first unit takes x directly, through an
    entry 1x1 only if the channel counts differ), and appends its output.
    A final 1x1 conv + activation fuses the whole list, whose width at
    that point is in_channels + units * channels, down to the target.
    """

    def __init__(self, in_channels: int, channels: int, units: int = 2,
                 steps: int = 2, alpha: float = 0.01, rng=None):
        super().__init__()
        if units < 1:
            raise ValueError(f"units must be >= 1, got {units}")
        self.in_channels = int(in_channels)
        self.channels = int(channels)
        self.alpha = float(alpha)
        self.entry = None
        if in_channels != channels:
            self.entry = Conv2d(in_channels, channels, kernel=1, rng=rng)
        self.units = [RecurrentConvUnit(channels, steps, alpha, rng=rng) for _ in range(units)]
        self.junctions = [
            Conv2d(in_channels + j * channels, channels, kernel=1, rng=rng)
            for j in range(1, units)
        ]
        self.fuse = Conv2d(in_channels + units * channels, channels, kernel=1, rng=rng)

    def forward(self, x):
        out, _ = self.forward_trace(x)
        return out

    def forward_trace(self, x):
        """Forward pass that also reports the dense wiring for inspection."""
        feats = [x]
        if self.entry is None:
            r = x
        else:
            r = ops.leaky_relu(self.entry(x), self.alpha)
        for j, unit in enumerate(self.units):
            if j > 0:
                cat = ops.concat_channels(feats)
                r = ops.leaky_relu(self.junctions[j - 1](cat), self.alpha)
            feats.append(unit(r))
        cat = ops.concat_channels(feats)
        out = ops.leaky_relu(self.fuse(cat), self.alpha)
        info = {
            "pre_fuse_channels": cat.data.shape[1],
            "feature_channels": [f.data.shape[1] for f in feats],
        }
        return out, info


class InceptionDilationBlock(Module):
    """Five stride-2 branches concatenated and projected back to the target width.

    Branches: 1x1 conv; 3x3 conv; 3x3 average pool then 1x1 conv; 3x3 conv
    dilated (3, 1); 3x3 conv dilated (1, 2).  The dilated pair covers 7x3
    and 3x5 pixels, pulling in context along one axis at a time.  Each
    branch (and the 1x1 projection after the concat) is followed by
    batchnorm + activation; ``batchnorm=False`` drops the norms.
    """

    def __init__(self, in_channels: int, channels: int, alpha: float = 0.01,
                 batchnorm: bool = True, rng=None):
        super().__init__()
        self.alpha = float(alpha)
        self.convs = [
            Conv2d(in_channels, channels, kernel=1, stride=2, rng=rng),
            Conv2d(in_channels, channels, kernel=3, stride=2, rng=rng),
            Conv2d(in_channels, channels, kernel=1, stride=1, rng=rng),
            Conv2d(in_channels, channels, kernel=3, stride=2, dilation=(3, 1), rng=rng),
            Conv2d(in_channels, channels, kernel=3, stride=2, dilation=(1, 2), rng=rng),
        ]
        self.norms = [BatchNorm2d(channels) for _ in range(5)] if batchnorm else []
        self.project = Conv2d(5 * channels, channels, kernel=1, rng=rng)
        self.project_norm = BatchNorm2d(channels) if batchnorm else None

    def _post(self, h, i):
        if self.norms:
            h = self.norms[i](h)
        return ops.leaky_relu(h, self.alpha)

    def branch(self, x, i):
        """Evaluate branch ``i`` (0..4) alone; used by order-invariance checks."""
        if i == 2:
            h = self.convs[2](ops.avgpool2d(x, k=3, s=2, padding="same"))
        else:
            h = self.convs[i](x)
        return self._post(h, i)

    def forward(self, x):
        cat = ops.concat_channels([self.branch(x, i) for i in range(5)])
        h = self.project(cat)
        if self.project_norm is not None:
            h = self.project_norm(h)
        return ops.leaky_relu(h, self.alpha)


class DoubleConvBlock(Module):
    """Two 3x3 conv + batchnorm + activation stages (baseline network unit)."""

    def __init__(self, in_channels: int, channels: int, alpha: float = 0.01, rng=None):
        super().__init__()
        self.alpha = float(alpha)
        self.conv1 = Conv2d(in_channels, channels, kernel=3, rng=rng)
        self.bn1 = BatchNorm2d(channels)
        self.conv2 = Conv2d(channels, channels, kernel=3, rng=rng)
        self.bn2 = BatchNorm2d(channels)

    def forward(self, x):
        h = ops.leaky_relu(self.bn1(self.conv1(x)), self.alpha)
        return ops.leaky_relu(self.bn2(self.conv2(h)), self.alpha)
