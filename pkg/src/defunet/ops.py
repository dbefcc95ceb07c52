"""Differentiable ops: eager forward wrappers plus their backward rules.

Each public function runs the numeric primitive from :mod:`defunet.tensor`
on ``Node`` data, wraps the result in a fresh ``Node``, and records it on
the active tape.  The matching backward rule is registered right next to
the forward wrapper so the pairing is visible at a glance.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .autodiff import Node, as_node, record, register_backward

__all__ = [
    "conv2d",
    "maxpool2d",
    "avgpool2d",
    "upsample_nearest2x",
    "batchnorm",
    "leaky_relu",
    "sigmoid",
    "add",
    "concat_channels",
    "mul",
    "sum_all",
    "scale",
    "add_const",
    "div",
]


def conv2d(x, weight, bias, spec: T.ConvSpec) -> Node:
    x, weight, bias = as_node(x), as_node(weight), as_node(bias)
    out = Node(T.conv2d(x.data, weight.data, bias.data, spec))
    return record("conv2d", out, (x, weight, bias), spec)


@register_backward("conv2d")
def _conv2d_bwd(gout, rec):
    x, weight, _bias = rec.parents
    spec = rec.ctx
    gx = T.conv2d_grad_input(gout, weight.data, spec, x.data.shape) if x.requires_grad else None
    if weight.requires_grad or _bias.requires_grad:
        gw, gb = T.conv2d_grad_weight(gout, x.data, spec)
    else:
        gw = gb = None
    return gx, gw, gb


def maxpool2d(x) -> Node:
    x = as_node(x)
    out_data, idx = T.maxpool2d(x.data)
    out = Node(out_data)
    return record("maxpool2d", out, (x,), idx)


@register_backward("maxpool2d")
def _maxpool2d_bwd(gout, rec):
    return (T.maxpool2d_grad(gout, rec.ctx),)


def avgpool2d(x, k: int = 3, s: int = 2, padding: str = "same") -> Node:
    x = as_node(x)
    out = Node(T.avgpool2d(x.data, k, s, padding))
    return record("avgpool2d", out, (x,), (k, s, padding, x.data.shape))


@register_backward("avgpool2d")
def _avgpool2d_bwd(gout, rec):
    k, s, padding, input_shape = rec.ctx
    return (T.avgpool2d_grad(gout, input_shape, k, s, padding),)


def upsample_nearest2x(x) -> Node:
    x = as_node(x)
    out = Node(T.upsample_nearest2x(x.data))
    return record("upsample_nearest2x", out, (x,))


@register_backward("upsample_nearest2x")
def _upsample_bwd(gout, rec):
    return (T.upsample_nearest2x_grad(gout),)


def batchnorm(x, gamma, beta, running_mean, running_var, train: bool,
              momentum: float = 0.1, eps: float = 1e-5):
    """Returns ``(out, new_running_mean, new_running_var)``.

    The caller (the layer) owns the running buffers and decides whether to
    store the returned updates; the tape only tracks x, gamma, beta.
    """
    x, gamma, beta = as_node(x), as_node(gamma), as_node(beta)
    res = T.batchnorm(x.data, gamma.data, beta.data, running_mean, running_var,
                      train, momentum, eps)
    out = Node(res.out)
    record("batchnorm", out, (x, gamma, beta), (res, train))
    return out, res.running_mean, res.running_var


@register_backward("batchnorm")
def _batchnorm_bwd(gout, rec):
    _x, gamma, _beta = rec.parents
    res, train = rec.ctx
    return T.batchnorm_grad(gout, res, gamma.data, train)


def leaky_relu(x, alpha: float = 0.01) -> Node:
    x = as_node(x)
    out = Node(T.leaky_relu(x.data, alpha))
    return record("leaky_relu", out, (x,), alpha)


@register_backward("leaky_relu")
def _leaky_relu_bwd(gout, rec):
    (x,) = rec.parents
    return (T.leaky_relu_grad(gout, x.data, rec.ctx),)


def sigmoid(x) -> Node:
    x = as_node(x)
    out = Node(T.sigmoid(x.data))
    return record("sigmoid", out, (x,))


@register_backward("sigmoid")
def _sigmoid_bwd(gout, rec):
    y = rec.out.data
    return (gout * y * (1.0 - y),)


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = Node(T.add(a.data, b.data))
    return record("add", out, (a, b))


@register_backward("add")
def _add_bwd(gout, rec):
    return gout, gout


def concat_channels(parts) -> Node:
    parts = tuple(as_node(p) for p in parts)
    out = Node(T.concat_channels([p.data for p in parts]))
    return record("concat_channels", out, parts, tuple(p.data.shape[1] for p in parts))


@register_backward("concat_channels")
def _concat_bwd(gout, rec):
    splits = np.cumsum(rec.ctx)[:-1]
    return tuple(np.ascontiguousarray(g) for g in np.split(gout, splits, axis=1))


def mul(a, b) -> Node:
    """Elementwise product; shapes must match exactly."""
    a, b = as_node(a), as_node(b)
    if a.data.shape != b.data.shape:
        raise T.ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} differ")
    out = Node(a.data * b.data)
    return record("mul", out, (a, b))


@register_backward("mul")
def _mul_bwd(gout, rec):
    a, b = rec.parents
    return gout * b.data, gout * a.data


def sum_all(x) -> Node:
    """Sum every element down to a scalar node."""
    x = as_node(x)
    out = Node(np.sum(x.data))
    return record("sum_all", out, (x,), x.data.shape)


@register_backward("sum_all")
def _sum_all_bwd(gout, rec):
    return (np.full(rec.ctx, gout, dtype=gout.dtype),)


def scale(x, c: float) -> Node:
    x = as_node(x)
    c = float(c)
    out = Node(x.data * np.asarray(c, dtype=x.data.dtype))
    return record("scale", out, (x,), c)


@register_backward("scale")
def _scale_bwd(gout, rec):
    return (gout * np.asarray(rec.ctx, dtype=gout.dtype),)


def add_const(x, c: float) -> Node:
    x = as_node(x)
    out = Node(x.data + np.asarray(float(c), dtype=x.data.dtype))
    return record("add_const", out, (x,), float(c))


@register_backward("add_const")
def _add_const_bwd(gout, rec):
    return (gout,)


def div(a, b) -> Node:
    """Elementwise quotient; shapes must match exactly (scalars included)."""
    a, b = as_node(a), as_node(b)
    if a.data.shape != b.data.shape:
        raise T.ShapeError(f"div: shapes {a.data.shape} and {b.data.shape} differ")
    out = Node(a.data / b.data)
    return record("div", out, (a, b))


@register_backward("div")
def _div_bwd(gout, rec):
    a, b = rec.parents
    ga = gout / b.data
    gb = -gout * a.data / (b.data * b.data)
    return ga, gb


# Operator sugar so scalar loss algebra reads naturally.
def _node_add(self, other):
    return add(self, other) if isinstance(other, Node) else add_const(self, other)


def _node_mul(self, other):
    return mul(self, other) if isinstance(other, Node) else scale(self, other)


Node.__add__ = _node_add
Node.__radd__ = _node_add
Node.__mul__ = _node_mul
Node.__rmul__ = _node_mul
Node.__neg__ = lambda self: scale(self, -1.0)
Node.__truediv__ = div
Node.__sub__ = lambda self, other: (
    add(self, scale(other, -1.0)) if isinstance(other, Node) else add_const(self, -other)
)
