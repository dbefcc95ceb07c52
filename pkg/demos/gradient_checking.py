"""Run the finite-difference gradient suite and show how to check your own graph.

Every backward rule in the engine is audited two ways: a per-op battery
that compares tape gradients against central differences in float64, and
an end-to-end check of a small complete model in float32.  The same suite
backs the ``defunet gradcheck`` CLI command; here we call it as a library
and then gradcheck a custom loss by hand.

The full-model sweep perturbs every one of its parameters twice, so the
suite takes half a minute or so on one CPU core.
"""

import time

import numpy as np

from defunet import ops
from defunet.autodiff import Parameter, grad_check
from defunet.gradcheck_suite import run_suite
from defunet.losses import dice_loss
from defunet.tensor import precision

# ---------------------------------------------------------------------------
# 1. the full suite, printing one verdict line per check
# ---------------------------------------------------------------------------
start = time.time()
ok, lines = run_suite(seed=0, printer=print)
print(f"suite finished in {time.time() - start:.1f}s, all pass: {ok}")

# ---------------------------------------------------------------------------
# 2. gradcheck a loss of your own: wire ops into a closure over Parameters
#    and hand it to grad_check, which perturbs each entry in turn
# ---------------------------------------------------------------------------
with precision("float64"):
    rng = np.random.default_rng(42)
    logits = Parameter(rng.standard_normal((1, 1, 4, 4)), "logits")
    target = (rng.random((1, 1, 4, 4)) > 0.5).astype(np.float64)

    def loss_fn():
        return dice_loss(ops.as_node(target), ops.sigmoid(logits))

    report = grad_check(loss_fn, [logits], eps=1e-6, tol=1e-6)
    print()
    print("custom dice-through-sigmoid loss:", report)
    print("worst relative error:", f"{report.max_rel_err:.3e}", "ok:", report.ok)
