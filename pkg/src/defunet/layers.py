"""Parameterized layers and the small module system they hang off.

A :class:`Module` owns :class:`~defunet.autodiff.Parameter` leaves, plain
ndarray buffers (batchnorm running statistics), and child modules.
Children are discovered from instance attributes in insertion order, so
parameter registries and checkpoints are deterministic by construction.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Parameter
from .tensor import ConvSpec, ShapeError, default_dtype

__all__ = ["Module", "Conv2d", "BatchNorm2d", "LeakyReLU"]


def _as_pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


class Module:
    """Base class: child/parameter discovery, train/eval mode, state dicts."""

    buffer_names: tuple = ()

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in self.__dict__.items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in self.__dict__.items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name in self.buffer_names:
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(prefix + name + ".")

    def refresh_parameter_names(self) -> None:
        """Rename every parameter to its dotted path from this module."""
        for path, p in self.named_parameters():
            p.name = path

    def train(self, mode: bool = True):
        self.training = bool(mode)
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self) -> dict:
        """Copies of all parameters and buffers, keyed by dotted path."""
        out = {path: p.data.copy() for path, p in self.named_parameters()}
        for path, buf in self.named_buffers():
            out[path] = np.array(buf, copy=True)
        return out

    def load_state_dict(self, state: dict) -> None:
        """Strict load: keys and shapes must match exactly; dtypes are kept."""
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        got = set(state)
        if expected != got:
            missing = sorted(expected - got)
            unexpected = sorted(got - expected)
            raise KeyError(f"state dict mismatch: missing {missing}, unexpected {unexpected}")
        for path, value in state.items():
            target_shape = (params[path] if path in params else buffers[path]).shape
            if tuple(value.shape) != tuple(target_shape):
                raise ShapeError(
                    f"state entry {path!r} has shape {tuple(value.shape)}, "
                    f"model expects {tuple(target_shape)}"
                )
        for path, p in params.items():
            p.data = np.ascontiguousarray(state[path])
        buffer_owners = self._buffer_owners()
        for path, (owner, name) in buffer_owners.items():
            setattr(owner, name, np.ascontiguousarray(state[path]))

    def _buffer_owners(self, prefix: str = "") -> dict:
        out = {prefix + name: (self, name) for name in self.buffer_names}
        for name, child in self._children():
            out.update(child._buffer_owners(prefix + name + "."))
        return out


class Conv2d(Module):
    """2-D convolution layer; He-style fan-in init, zero bias."""

    def __init__(self, in_channels: int, out_channels: int, kernel=3, stride=1,
                 dilation=1, padding: str = "same", rng=None):
        super().__init__()
        self.spec = ConvSpec(in_channels, out_channels, _as_pair(kernel),
                             _as_pair(stride), _as_pair(dilation), padding)
        if rng is None:
            rng = np.random.default_rng(0)
        kh, kw = self.spec.kernel
        fan_in = in_channels * kh * kw
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_channels, in_channels, kh, kw))
        self.weight = Parameter(w, "weight")
        self.bias = Parameter(np.zeros(out_channels), "bias")

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.spec)


class BatchNorm2d(Module):
    """Per-channel batch normalization with running statistics."""

    buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.gamma = Parameter(np.ones(channels), "gamma")
        self.beta = Parameter(np.zeros(channels), "beta")
        self.running_mean = np.zeros(channels, dtype=default_dtype())
        self.running_var = np.ones(channels, dtype=default_dtype())

    def forward(self, x):
        out, new_mean, new_var = ops.batchnorm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )
        if self.training:
            self.running_mean = new_mean
            self.running_var = new_var
        return out


class LeakyReLU(Module):
    def __init__(self, alpha: float = 0.01):
        super().__init__()
        self.alpha = float(alpha)

    def forward(self, x):
        return ops.leaky_relu(x, self.alpha)
