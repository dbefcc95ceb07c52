"""Finite-difference verification of every backward rule.

Each check builds a tiny scalar loss exercising one op (or one composite
block, or the whole network with the dice loss), runs it in 64-bit mode,
and compares tape gradients against central differences.  The suite also
tracks which registry ops each check touched, so a backward rule that no
check exercises fails the coverage assertion rather than hiding.

Inputs are sampled away from the non-smooth points: maxpool windows get
strictly distinct values and leaky-relu inputs keep a margin around zero,
where one-sided kinks would make finite differences meaningless.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Tape, grad_check, registered_ops
from .blocks import DCRCBlock, InceptionDilationBlock, RecurrentConvUnit
from .losses import dice_loss
from .model import ModelConfig, build
from .tensor import ConvSpec, precision
from .autodiff import Parameter

__all__ = ["run_suite", "suite_checks", "full_model_check", "TOL_F64", "TOL_F32"]

TOL_F64 = 1e-6
TOL_F32 = 1e-3

_TINY_MODEL = ModelConfig(levels=3, base_filters=2, steps=2, units=2)


def _away_from_zero(rng, shape, margin=0.15):
    """Uniform values in [-1, -margin] U [margin, 1]."""
    mag = rng.uniform(margin, 1.0, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _distinct_grid(rng, shape):
    """Shuffled linspace: every entry unique, gaps far above FD epsilon."""
    flat = np.linspace(-1.0, 1.0, int(np.prod(shape)))
    rng.shuffle(flat)
    return flat.reshape(shape)


def _ops_seen(loss_fn) -> set:
    with Tape() as tape:
        loss_fn()
    return set(tape.op_names())


def _check(name, loss_fn, params, checks, coverage, eps=1e-6, tol=TOL_F64):
    coverage |= _ops_seen(loss_fn)
    report = grad_check(loss_fn, params, eps=eps, tol=tol)
    checks.append((name, report))


def suite_checks(seed: int = 0):
    """Run every per-op and per-block check in 64-bit mode.

    Returns ``(checks, coverage)``: a list of (name, GradCheckReport) and
    the set of registry ops the suite exercised.
    """
    checks = []
    coverage: set = set()
    with precision("float64"):
        rng = np.random.default_rng(seed)

        x = Parameter(rng.standard_normal((2, 3, 6, 6)), "x")
        w = Parameter(rng.standard_normal((4, 3, 3, 3)) * 0.5, "w")
        b = Parameter(rng.standard_normal(4) * 0.1, "b")
        spec = ConvSpec(3, 4, kernel=(3, 3), stride=(1, 1), padding="same")
        _check("conv2d",
               lambda: ops.sum_all(ops.sigmoid(ops.conv2d(x, w, b, spec))),
               [x, w, b], checks, coverage)

        spec_s2 = ConvSpec(3, 2, kernel=(3, 3), stride=(2, 2), padding="same")
        w2 = Parameter(rng.standard_normal((2, 3, 3, 3)) * 0.5, "w2")
        b2 = Parameter(rng.standard_normal(2) * 0.1, "b2")
        _check("conv2d/stride2",
               lambda: ops.sum_all(ops.sigmoid(ops.conv2d(x, w2, b2, spec_s2))),
               [x, w2, b2], checks, coverage)

        for rates in ((3, 1), (1, 2)):
            spec_d = ConvSpec(3, 2, kernel=(3, 3), dilation=rates, padding="same")
            wd = Parameter(rng.standard_normal((2, 3, 3, 3)) * 0.5, f"wd{rates}")
            bd = Parameter(rng.standard_normal(2) * 0.1, f"bd{rates}")
            xd = Parameter(rng.standard_normal((1, 3, 8, 8)), f"xd{rates}")
            _check(f"conv2d/dilation{rates}",
                   lambda: ops.sum_all(ops.sigmoid(ops.conv2d(xd, wd, bd, spec_d))),
                   [xd, wd, bd], checks, coverage)

        spec_v = ConvSpec(2, 2, kernel=(3, 3), padding="valid")
        wv = Parameter(rng.standard_normal((2, 2, 3, 3)) * 0.5, "wv")
        bv = Parameter(rng.standard_normal(2) * 0.1, "bv")
        xv = Parameter(rng.standard_normal((1, 2, 5, 7)), "xv")
        _check("conv2d/valid",
               lambda: ops.sum_all(ops.sigmoid(ops.conv2d(xv, wv, bv, spec_v))),
               [xv, wv, bv], checks, coverage)

        xm = Parameter(_distinct_grid(rng, (2, 2, 6, 6)), "xm")
        _check("maxpool2d",
               lambda: ops.sum_all(ops.sigmoid(ops.maxpool2d(xm))),
               [xm], checks, coverage)

        xa = Parameter(rng.standard_normal((1, 2, 5, 5)), "xa")
        _check("avgpool2d",
               lambda: ops.sum_all(ops.sigmoid(ops.avgpool2d(xa))),
               [xa], checks, coverage)

        xu = Parameter(rng.standard_normal((1, 2, 3, 3)), "xu")
        _check("upsample_nearest2x",
               lambda: ops.sum_all(ops.sigmoid(ops.upsample_nearest2x(xu))),
               [xu], checks, coverage)

        xb = Parameter(rng.standard_normal((2, 3, 4, 4)), "xb")
        gam = Parameter(rng.uniform(0.5, 1.5, 3), "gamma")
        bet = Parameter(rng.standard_normal(3) * 0.2, "beta")
        rm = np.zeros(3)
        rv = np.ones(3)

        def bn_loss():
            out, _, _ = ops.batchnorm(xb, gam, bet, rm, rv, train=True)
            return ops.sum_all(ops.sigmoid(out))

        _check("batchnorm/train", bn_loss, [xb, gam, bet], checks, coverage)

        def bn_eval_loss():
            out, _, _ = ops.batchnorm(xb, gam, bet, rm + 0.1, rv + 0.2, train=False)
            return ops.sum_all(ops.sigmoid(out))

        _check("batchnorm/eval", bn_eval_loss, [xb, gam, bet], checks, coverage)

        xl = Parameter(_away_from_zero(rng, (2, 2, 4, 4)), "xl")
        _check("leaky_relu",
               lambda: ops.sum_all(ops.sigmoid(ops.leaky_relu(xl, 0.01))),
               [xl], checks, coverage)

        xs = Parameter(rng.standard_normal((1, 2, 3, 3)), "xs")
        _check("sigmoid", lambda: ops.sum_all(ops.sigmoid(xs)), [xs], checks, coverage)

        pa = Parameter(rng.standard_normal((1, 2, 3, 3)), "pa")
        pb = Parameter(rng.standard_normal((1, 2, 3, 3)), "pb")
        _check("add",
               lambda: ops.sum_all(ops.sigmoid(ops.add(pa, pb))),
               [pa, pb], checks, coverage)
        _check("mul",
               lambda: ops.sum_all(ops.sigmoid(ops.mul(pa, pb))),
               [pa, pb], checks, coverage)
        _check("concat_channels",
               lambda: ops.sum_all(ops.sigmoid(ops.concat_channels([pa, pb, pa]))),
               [pa, pb], checks, coverage)

        ps = Parameter(rng.standard_normal(()) + 2.5, "ps")
        pt = Parameter(rng.standard_normal(()) + 7.0, "pt")
        _check("scalar-algebra",  # scale, add_const, div in one expression
               lambda: ops.sigmoid(ops.div(ops.add_const(ops.scale(ps, 1.7), 0.3), pt)),
               [ps, pt], checks, coverage)

        # composite blocks
        rcu = RecurrentConvUnit(3, steps=2, rng=rng)
        xr = Parameter(rng.standard_normal((1, 3, 6, 6)), "xr")
        rcu_params = [xr] + rcu.parameters()
        rcu.refresh_parameter_names()
        _check("block/rcu",
               lambda: ops.sum_all(ops.sigmoid(rcu(xr))),
               rcu_params, checks, coverage)

        dcrc = DCRCBlock(2, 4, units=2, steps=1, rng=rng)
        dcrc.refresh_parameter_names()
        xc = Parameter(rng.standard_normal((1, 2, 6, 6)), "xc")
        _check("block/dcrc",
               lambda: ops.sum_all(ops.sigmoid(dcrc(xc))),
               [xc] + dcrc.parameters(), checks, coverage)

        inc = InceptionDilationBlock(3, 2, rng=rng)
        inc.refresh_parameter_names()
        xi = Parameter(rng.standard_normal((1, 3, 8, 8)), "xi")
        _check("block/inception",
               lambda: ops.sum_all(ops.sigmoid(inc(xi))),
               [xi] + inc.parameters(), checks, coverage)

    return checks, coverage


def _fd_numeric(loss_fn, params, eps):
    """Central-difference gradient of loss_fn w.r.t. every entry of params."""
    out = {}
    for p in params:
        flat = p.data.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            kept = flat[i]
            flat[i] = kept + eps
            hi = loss_fn().item()
            flat[i] = kept - eps
            lo = loss_fn().item()
            flat[i] = kept
            numeric[i] = (hi - lo) / (2.0 * eps)
        out[p] = numeric.reshape(p.data.shape)
    return out


def _max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / scale).max())


def full_model_check(seed: int = 3, eps: float = 1e-6):
    """Whole-network dice-loss gradient check on a 1x1x16x16 input.

    A reduced-width model (3 levels, 2 base filters, all block types
    present) keeps every-parameter finite differences tractable.  The
    64-bit pass compares tape gradients to FD entry by entry; the 32-bit
    pass reuses the same FD numbers against the float32 tape gradients of
    an identically initialized model, since differences of a float32 loss
    sit below its own rounding noise.

    Returns ``(err64, err32, n_params)``.
    """
    data_rng = np.random.default_rng(seed)
    x = data_rng.random((1, 1, 16, 16))
    y = (data_rng.random((1, 1, 16, 16)) > 0.6).astype(np.float64)

    with precision("float64"):
        model64 = build(_TINY_MODEL, seed=seed)
        model64.train()
        params64 = model64.parameters()

        def loss64():
            return dice_loss(y, model64(x))

        with Tape() as tape:
            loss = loss64()
        grads64 = tape.backward(loss, params64)
        numeric = _fd_numeric(loss64, params64, eps)
        err64 = max(_max_rel_err(grads64[p], numeric[p]) for p in params64)

    model32 = build(_TINY_MODEL, seed=seed)
    model32.train()
    params32 = model32.parameters()
    x32 = x.astype(np.float32)
    y32 = y.astype(np.float32)
    with Tape() as tape32:
        loss32 = dice_loss(y32, model32(x32))
    grads32 = tape32.backward(loss32, params32)
    by_name = {p.name: numeric[p] for p in params64}
    err32 = max(
        _max_rel_err(grads32[p].astype(np.float64), by_name[p.name]) for p in params32
    )
    n_params = sum(p.data.size for p in params64)
    return err64, err32, n_params


def run_suite(seed: int = 0, printer=None):
    """Execute all checks; returns (ok, lines) and prints through ``printer``."""
    lines = []

    def emit(text):
        lines.append(text)
        if printer is not None:
            printer(text)

    checks, coverage = suite_checks(seed)
    ok = True
    for name, report in checks:
        status = "PASS" if report.ok else "FAIL"
        if not report.ok:
            ok = False
        emit(f"{name:24s} max rel err {report.max_rel_err:.3e}  {status}")
    err64, err32, n_params = full_model_check()
    for label, err, tol in (("model/full-f64", err64, TOL_F64),
                            ("model/full-f32", err32, TOL_F32)):
        status = "PASS" if err < tol else "FAIL"
        if err >= tol:
            ok = False
        emit(f"{label:24s} max rel err {err:.3e}  {status}  ({n_params} params)")
    registry = set(registered_ops())
    missing = sorted(registry - coverage)
    emit(f"registry coverage: {len(registry - set(missing))}/{len(registry)} ops exercised")
    if missing:
        ok = False
        emit(f"MISSING coverage for: {missing}")
    emit("gradient suite: " + ("ALL PASS" if ok else "FAILURES PRESENT"))
    return ok, lines
