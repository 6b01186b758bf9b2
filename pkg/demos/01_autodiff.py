"""A tour of the reverse-mode autodiff core.

Every model in this package is built on `attnseg.tensor`: a numpy array plus
the bookkeeping for one backward pass.  Run from the repository root:

    python3 demos/01_autodiff.py
"""

import numpy as np

from attnseg.tensor import Parameter, Tensor, grad_check, no_grad, sigmoid, softmax

# A Tensor wraps an ndarray.  Arithmetic builds a graph; backward() walks it.
x = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
w = Tensor([[0.5], [-0.25]], requires_grad=True)

y = x @ w              # matmul, shape [2, 1]
loss = (y * y).sum()   # a scalar to differentiate
loss.backward()

print("loss      =", loss.item())
print("dloss/dx  =\n", x.grad)
print("dloss/dw  =\n", w.grad)

# The usual nonlinearities are differentiable too.
z = Tensor(np.linspace(-2, 2, 5), requires_grad=True)
p = softmax(z)
p.sum().backward()     # softmax rows sum to 1, so this gradient is ~0
print("softmax   =", np.round(p.data, 4))
print("grad of a constant function:", np.round(z.grad, 12))

# Gradients accumulate across uses of the same tensor, exactly like the math.
a = Tensor(3.0, requires_grad=True)
(a * a + a).backward()
print("d(a^2 + a)/da at a=3:", a.grad, "(expect 7)")

# no_grad() turns the tape off for inference-style code.
with no_grad():
    silent = sigmoid(x @ w)
print("built under no_grad -> no graph:", silent._prev == ())

# grad_check compares the tape against central finite differences.  It is the
# same routine the test suite and the `gradcheck` CLI subcommand use.
params = [
    Parameter(np.random.default_rng(0).normal(size=(4, 3)), name="demo.weight"),
    Parameter(np.zeros(3), name="demo.bias"),
]
inputs = Tensor(np.random.default_rng(1).normal(size=(5, 4)))


def tiny_loss():
    logits = inputs @ params[0] + params[1]
    return (softmax(logits) * logits).mean()


worst = grad_check(tiny_loss, params)
print(f"grad_check worst relative error: {worst:.3e}")
