"""
A tour of the gradient engine
=============================

The network trainer sits on a small reverse-mode autodiff engine: each
op records a closure that knows how to push gradients to its inputs,
and `backward` replays those closures in reverse topological order.
This script walks the engine end to end: forward values, gradients,
a finite-difference cross-check, and a miniature fit.
"""

import numpy as np

from idip.engine import (
    Tensor,
    TapeConsumedError,
    backward,
    conv2d,
    leaky_relu,
    mse_reduce,
    no_grad,
    sigmoid,
)
from idip.optim import ModelParameters, adam_step

rng = np.random.default_rng(0)

# forward: ops build new tensors; only tensors explicitly marked
# requires_grad accumulate gradients
a = Tensor(rng.normal(size=(2, 3)), requires_grad=True, dtype=np.float64)
b = Tensor(rng.normal(size=(2, 3)), requires_grad=True, dtype=np.float64)
w = Tensor(np.ones((2, 3)), dtype=np.float64)
loss = mse_reduce(sigmoid(a * b), Tensor(np.zeros((2, 3)), dtype=np.float64), w)
print(f"loss value: {loss.item():.6f}")

# backward: one call populates .grad on every requires_grad leaf
backward(loss)
print(f"grad shapes: a {a.grad.shape}, b {b.grad.shape}")

# each tape is single-use; a second backward on the same graph refuses
# to run instead of silently double-counting
try:
    backward(loss)
except TapeConsumedError as exc:
    print(f"second backward rejected: {exc}")

# cross-check: nudge one kernel entry by +-eps and compare the loss
# delta against the recorded gradient
x = Tensor(rng.normal(size=(1, 2, 6, 6)), dtype=np.float64)
kernel = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.1, requires_grad=True, dtype=np.float64)
bias = Tensor(np.zeros(3), requires_grad=True, dtype=np.float64)
target = Tensor(rng.normal(size=(1, 3, 6, 6)), dtype=np.float64)
weight = Tensor(np.ones((1, 3, 6, 6)), dtype=np.float64)


def conv_loss(k: Tensor) -> Tensor:
    return mse_reduce(leaky_relu(conv2d(x, k, bias)), target, weight)


backward(conv_loss(kernel))
eps, idx = 1e-6, (1, 0, 2, 2)
plus, minus = kernel.data.copy(), kernel.data.copy()
plus[idx] += eps
minus[idx] -= eps
fd = (conv_loss(Tensor(plus)).item() - conv_loss(Tensor(minus)).item()) / (2 * eps)
print(f"conv kernel grad {kernel.grad[idx]:+.8f} vs finite diff {fd:+.8f}")

# no_grad turns recording off, so evaluation passes cost no memory
with no_grad():
    silent = conv_loss(kernel)
print(f"recorded under no_grad: {silent._grad_fn is not None}")

# miniature fit: two conv layers learn to reproduce a fixed image from
# fixed noise, the same loop shape the restorer runs at full scale
params = ModelParameters()
k1 = params.register("k1", rng.normal(size=(8, 4, 3, 3)).astype(np.float32) * 0.3)
c1 = params.register("c1", np.zeros(8, dtype=np.float32))
k2 = params.register("k2", rng.normal(size=(3, 8, 3, 3)).astype(np.float32) * 0.3)
c2 = params.register("c2", np.zeros(3, dtype=np.float32))
z = Tensor(rng.normal(size=(1, 4, 8, 8)).astype(np.float32))
goal = Tensor(rng.uniform(0.2, 0.8, size=(1, 3, 8, 8)).astype(np.float32))
ones = Tensor(np.ones((1, 3, 8, 8), dtype=np.float32))

trace = []
for step in range(300):
    params.clear_grads()
    hidden = leaky_relu(conv2d(z, k1, c1))
    fit = mse_reduce(sigmoid(conv2d(hidden, k2, c2)), goal, ones)
    backward(fit)
    adam_step(params, lr=0.01)
    trace.append(fit.item())
print(f"fit loss: {trace[0]:.5f} -> {trace[-1]:.2e} after {len(trace)} steps")
