#!/usr/bin/env python3
# Tensors, eager ops and reverse-mode gradients.

import numpy as np

from dmads import Tensor, default_dtype
from dmads import functional as F
from dmads.tensor import GradTape

# float32 by default; float64 for checking against finite differences
with default_dtype(np.float64):
    x = Tensor(np.random.default_rng(0).standard_normal((1, 2, 6, 6)), requires_grad=True)
    w = Tensor(np.random.default_rng(1).standard_normal((3, 2, 3, 3)) * 0.3, requires_grad=True)

# a dilated conv, a sigmoid and a sum, recorded as they run
with GradTape() as tape:
    y = F.sigmoid(F.conv2d(x, w, padding=2, dilation=2))
    loss = F.sum(y)
print("ops:", tape.op_names())

loss.backward()
print("dL/dw shape:", w.grad.shape)

# compare one kernel entry with a central difference
eps = 1e-4
w.data[0, 0, 1, 1] += eps
up = F.sum(F.sigmoid(F.conv2d(x, w, padding=2, dilation=2))).item()
w.data[0, 0, 1, 1] -= 2 * eps
down = F.sum(F.sigmoid(F.conv2d(x, w, padding=2, dilation=2))).item()
w.data[0, 0, 1, 1] += eps
print("analytic %.10f  numeric %.10f" % (w.grad[0, 0, 1, 1], (up - down) / (2 * eps)))

# the graph is freed by backward, so a second call is refused
try:
    loss.backward()
except Exception as exc:
    print("second backward:", exc)
