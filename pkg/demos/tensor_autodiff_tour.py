"""Walk through the tensor kernels and the reverse-mode tape.

Every layer in this package bottoms out in a handful of numpy kernels
(conv2d, pooling, batchnorm, elementwise maps) plus a gradient tape that
records each op as it runs.  This script builds a tiny graph by hand,
runs backward, and checks one gradient against central differences.
"""

import numpy as np

from defunet import ops
from defunet.autodiff import Parameter, Tape, registered_ops
from defunet.tensor import ConvSpec, conv2d, default_dtype, maxpool2d, precision

rng = np.random.default_rng(0)

# ---------------------------------------------------------------------------
# 1. raw kernels: plain arrays in, plain arrays out
# ---------------------------------------------------------------------------
x = rng.standard_normal((1, 1, 6, 6))
w = rng.standard_normal((2, 1, 3, 3))
b = np.zeros(2)

y = conv2d(x, w, b, ConvSpec(in_channels=1, out_channels=2))
print("conv2d same-padding keeps the spatial size:", x.shape, "->", y.shape)

y2 = conv2d(x, w, b, ConvSpec(in_channels=1, out_channels=2, dilation=(2, 2)))
print("dilation widens the receptive field without new weights:", y2.shape)

pooled, indices = maxpool2d(y)
print("maxpool halves each spatial axis:", y.shape, "->", pooled.shape)
print("and remembers argmax indices for the backward pass:", indices.shape)

# ---------------------------------------------------------------------------
# 2. the tape: ops executed inside a Tape are recorded for backward
# ---------------------------------------------------------------------------
print()
print("registered differentiable ops:", ", ".join(registered_ops()))

with precision("float64"):
    weight = Parameter(rng.standard_normal((2, 1, 3, 3)) * 0.3, name="demo.weight")
    bias = Parameter(np.zeros(2), name="demo.bias")
    image = ops.as_node(rng.standard_normal((2, 1, 8, 8)))

    spec = ConvSpec(in_channels=1, out_channels=2)
    with Tape() as tape:
        h = ops.conv2d(image, weight, bias, spec)
        h = ops.leaky_relu(h, alpha=0.01)
        h = ops.maxpool2d(h)
        loss = ops.sum_all(ops.mul(h, h))
        grads = tape.backward(loss, [weight, bias])

    print("tape recorded", len(tape), "ops:", " -> ".join(tape.op_names()))
    print("loss value:", loss.item())
    print("grad shapes match parameters:",
          grads[weight].shape == weight.data.shape,
          grads[bias].shape == bias.data.shape)

    # -----------------------------------------------------------------------
    # 3. trust but verify: central differences on one weight entry
    # -----------------------------------------------------------------------
    def loss_at(wdata):
        with Tape():
            node = ops.conv2d(ops.as_node(image.data), ops.as_node(wdata),
                              ops.as_node(bias.data), spec)
            node = ops.leaky_relu(node, alpha=0.01)
            node = ops.maxpool2d(node)
            return ops.sum_all(ops.mul(node, node)).item()

    eps = 1e-6
    idx = (1, 0, 2, 2)
    wp = weight.data.copy(); wp[idx] += eps
    wm = weight.data.copy(); wm[idx] -= eps
    numeric = (loss_at(wp) - loss_at(wm)) / (2 * eps)
    analytic = grads[weight][idx]
    rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
    print(f"weight[{idx}]: analytic {analytic:.10f} numeric {numeric:.10f} "
          f"rel err {rel:.2e}")

# dtype policy: everything follows the engine default unless overridden
print()
print("default dtype outside the precision context:", default_dtype())
