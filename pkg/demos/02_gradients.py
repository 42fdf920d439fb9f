"""
Reverse-mode gradients and finite-difference checks
====================================================

Every layer is built from a small float64 tape.  ``grad_check`` compares the
backward pass with central differences.
"""

import numpy as np

from sthsep import autodiff as ad
from sthsep.autodiff import GradCheckConfig, ParamStore, grad_check

# A scalar first: d/dx tanh(x) at 0.5.
x = ad.Tensor(np.array(0.5), requires_grad=True)
ad.tanh(x).backward()
print("tape:", x.grad, " closed form:", 1 - np.tanh(0.5) ** 2)

# A composite: causal dilated convolution followed by a gated activation.
rng = np.random.default_rng(1)


def gated_conv(seq, weight):
    q = ad.conv1d_causal(seq, weight, dilation=2)
    return ad.tanh(q) * ad.sigmoid(q)


rep = grad_check(gated_conv, [rng.standard_normal((2, 9, 3)), rng.standard_normal((2, 3, 4))],
                 GradCheckConfig(epsilon=1e-5))
print(f"gated conv: {rep.n_checked} coordinates, max relative error {rep.max_rel_err:.2e}")

# Frozen parameters keep an exactly zero gradient.
store = ParamStore()
w = store.add("w", rng.standard_normal(3), frozen=True)
v = store.add("v", rng.standard_normal(3))
(w * v).sum().backward()
print("frozen grad:", store.grad("w"), " trainable:", store.trainable())
