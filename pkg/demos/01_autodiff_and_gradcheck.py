"""Build a small computation on the tape, backprop it, and let central
finite differences vouch for every gradient.

The tensor core is deliberately tiny: eager numpy forward math plus a tape
of backward rules. Anything the transformer needs (matmul, softmax,
normalization, embedding lookup, cross-entropy) is checkable the same way.
"""

import numpy as np

from minit5.gradcheck import finite_diff_check
from minit5.tensor import Tape, Tensor, backward, matmul, rms_norm, softmax_lastdim, sum_all, mul

rng = np.random.default_rng(0)

# a two-layer map with normalization and softmax, as in an attention head
w1 = Tensor(rng.normal(size=(4, 8)), requires_grad=True, dtype=np.float64)
w2 = Tensor(rng.normal(size=(8, 3)), requires_grad=True, dtype=np.float64)
gain = Tensor(np.ones(8), requires_grad=True, dtype=np.float64)
x = Tensor(rng.normal(size=(5, 4)), dtype=np.float64)
readout = Tensor(rng.normal(size=(5, 3)), dtype=np.float64)


def loss_fn():
    h = rms_norm(matmul(x, w1), gain)
    probs = softmax_lastdim(matmul(h, w2))
    return sum_all(mul(probs, readout))


with Tape() as tape:
    loss = loss_fn()
    backward(loss, tape)

print(f"loss                  {loss.item():+.6f}")
print(f"|grad w1|             {np.abs(w1.grad).sum():.6f}")
print(f"|grad w2|             {np.abs(w2.grad).sum():.6f}")
print(f"|grad gain|           {np.abs(gain.grad).sum():.6f}")

err = finite_diff_check(loss_fn, {"w1": w1, "w2": w2, "gain": gain})
print(f"max rel err vs. central differences: {err:.2e}")
assert err < 1e-5  # composed ops; single primitives check to 1e-6
print("analytic gradients confirmed")
