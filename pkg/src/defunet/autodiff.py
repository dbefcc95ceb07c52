"""Tape-based reverse-mode differentiation.

Ops execute eagerly on numpy arrays wrapped in :class:`Node`.  While a
:class:`Tape` is active (as a context manager), every op whose inputs
require gradients appends one record to the tape.  Because an op can only
consume nodes that already exist, tape order is itself a topological
order: :meth:`Tape.backward` walks it once in reverse, popping each
node's finished gradient and accumulating into the parents.

Backward rules live in the :data:`BACKWARD` registry, keyed by op name.
Recording an op with no registered rule fails immediately, so forward
coverage and backward coverage cannot drift apart silently.
"""

from __future__ import annotations

import threading

import numpy as np

from .tensor import ShapeError, default_dtype

__all__ = [
    "Node",
    "Parameter",
    "Tape",
    "BACKWARD",
    "register_backward",
    "registered_ops",
    "as_node",
    "record",
    "active_tape",
    "grad_check",
    "GradCheckReport",
]


class Node:
    """A value in the computation graph: an array plus tape bookkeeping."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"{type(self).__name__}(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


class Parameter(Node):
    """A named trainable leaf."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(np.ascontiguousarray(data, dtype=default_dtype()), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape}, dtype={self.data.dtype})"


def as_node(value) -> Node:
    """Wrap arrays/scalars as constant nodes; pass nodes through."""
    if isinstance(value, Node):
        return value
    return Node(np.asarray(value))


class _Record:
    __slots__ = ("op", "out", "parents", "ctx")

    def __init__(self, op, out, parents, ctx):
        self.op = op
        self.out = out
        self.parents = parents
        self.ctx = ctx


BACKWARD: dict = {}


def register_backward(name: str):
    """Decorator adding a rule ``(grad_out, record) -> per-parent grads``."""

    def deco(fn):
        if name in BACKWARD:
            raise ValueError(f"backward rule for {name!r} registered twice")
        BACKWARD[name] = fn
        return fn

    return deco


def registered_ops() -> list[str]:
    """Names of all ops with a backward rule, sorted."""
    return sorted(BACKWARD)


_STACK = threading.local()


def _tapes() -> list:
    stack = getattr(_STACK, "tapes", None)
    if stack is None:
        stack = _STACK.tapes = []
    return stack


def active_tape():
    stack = _tapes()
    return stack[-1] if stack else None


def record(op: str, out: Node, parents: tuple, ctx=None) -> Node:
    """Attach *out* to the active tape if any parent is being tracked."""
    if op not in BACKWARD:
        raise KeyError(f"op {op!r} has no backward rule; register one before recording")
    tape = active_tape()
    if tape is None or not any(p.requires_grad for p in parents):
        return out
    out.requires_grad = True
    tape._records.append(_Record(op, out, parents, ctx))
    return out


class Tape:
    """Ordered log of recorded ops for one forward pass."""

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tapes().pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted: exited a tape that is not on top")
        return False

    def __len__(self):
        return len(self._records)

    def op_names(self) -> list[str]:
        return [rec.op for rec in self._records]

    def backward(self, loss: Node, params) -> dict:
        """Gradient of scalar *loss* w.r.t. every parameter in *params*.

        Parameters the loss does not depend on get zero gradients rather
        than being dropped, so optimizers can iterate the result blindly.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        params = list(params)
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self._records):
            gout = grads.pop(id(rec.out), None)
            if gout is None:
                continue
            parent_grads = BACKWARD[rec.op](gout, rec)
            for parent, g in zip(rec.parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                key = id(parent)
                held = grads.get(key)
                grads[key] = g if held is None else held + g
        return {p: grads.get(id(p), np.zeros_like(p.data)) for p in params}


# --------------------------------------------------------------------------
# finite-difference checking


class GradCheckReport:
    """Worst relative error per parameter, plus the overall maximum."""

    def __init__(self, per_param: dict, tol: float):
        self.per_param = per_param
        self.tol = tol
        self.max_rel_err = max(per_param.values()) if per_param else 0.0

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tol

    def __repr__(self):
        worst = max(self.per_param, key=self.per_param.get) if self.per_param else None
        return (
            f"GradCheckReport(max_rel_err={self.max_rel_err:.3e}, tol={self.tol:.1e}, "
            f"worst={worst!r}, ok={self.ok})"
        )


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(1.0, abs(a), abs(n))


def grad_check(loss_fn, params, eps: float = 1e-6, tol: float = 1e-6,
               max_entries: int | None = None, rng=None) -> GradCheckReport:
    """Compare tape gradients against central differences.

    ``loss_fn`` takes no arguments and must rebuild the scalar loss from
    the live ``params`` each call.  Checks every entry of every parameter
    unless ``max_entries`` caps the per-parameter sample (drawn with
    ``rng``).  Parameters should be float64 for the default tolerances.
    """
    params = list(params)
    with Tape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss, params)
    if rng is None:
        rng = np.random.default_rng(0)
    per_param: dict[str, float] = {}
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            sample = rng.choice(n, size=max_entries, replace=False)
        else:
            sample = range(n)
        analytic = grads[p].reshape(-1)
        worst = 0.0
        for i in sample:
            kept = flat[i]
            flat[i] = kept + eps
            hi = loss_fn().item()
            flat[i] = kept - eps
            lo = loss_fn().item()
            flat[i] = kept
            numeric = (hi - lo) / (2.0 * eps)
            worst = max(worst, _rel_err(float(analytic[i]), numeric))
        name = getattr(p, "name", f"param{id(p):x}")
        per_param[name] = worst
    return GradCheckReport(per_param, tol)
