"""Shared harness glue for the test suite.

`gradient_errors` runs the engine's backward pass next to the
finite-difference oracle and reports the worst relative error per input,
in either precision: analytic gradients are computed at the requested
dtype while the numeric side always differentiates an f64 copy of the
same values.  `op_gradient_cases` is the per-op case table both the
engine tests and the acceptance gate sweep.
"""

from __future__ import annotations

import numpy as np

from idip.engine import (
    GradientTape,
    Tensor,
    add,
    concat_channels,
    conv2d,
    leaky_relu,
    mse_reduce,
    mul,
    scale,
    sigmoid,
    sub,
    tensor_sum,
    upsample_nearest,
)

from oracles import numeric_gradient, relative_error


def analytic_gradients(make_loss, arrays, dtype):
    tensors = [Tensor(a.astype(dtype), requires_grad=True) for a in arrays]
    loss = make_loss(tensors)
    GradientTape.trace(loss).backward()
    return [t.grad for t in tensors]


def gradient_errors(make_loss, arrays, dtype=np.float64, eps=1e-4):
    """Worst relative error per input array, analytic vs central differences."""
    arrays64 = [np.asarray(a, dtype=np.float64) for a in arrays]
    analytic = analytic_gradients(make_loss, arrays64, dtype)

    def f():
        tensors = [Tensor(a) for a in arrays64]
        return float(make_loss(tensors).data)

    numeric = numeric_gradient(f, arrays64, eps=eps)
    return [relative_error(a, n) for a, n in zip(analytic, numeric)]


def op_gradient_cases(rng):
    """(name, make_loss, input arrays) for every differentiable op.

    Non-differentiated constants are cast to the variables' dtype inside
    the closures so a single table serves both precisions.
    """

    def rnd(*shape):
        return rng.uniform(-1.0, 1.0, shape)

    w_el = rnd(2, 3, 4, 4)
    w_up = rnd(1, 2, 8, 8)
    w_cat = rnd(1, 5, 4, 4)
    w_conv = rnd(1, 3, 5, 5)
    mask = (rng.uniform(0, 1, (1, 3, 4, 4)) > 0.4).astype(np.float64)

    def const(arr, like):
        return Tensor(arr.astype(like[0].dtype))

    return [
        ("add", lambda t: tensor_sum(mul(add(t[0], t[1]), const(w_el, t))),
         [rnd(2, 3, 4, 4), rnd(2, 3, 4, 4)]),
        ("sub", lambda t: tensor_sum(mul(sub(t[0], t[1]), const(w_el, t))),
         [rnd(2, 3, 4, 4), rnd(2, 3, 4, 4)]),
        ("mul", lambda t: tensor_sum(mul(t[0], t[1])),
         [rnd(2, 3, 4, 4), rnd(2, 3, 4, 4)]),
        ("scale", lambda t: scale(tensor_sum(t[0]), -1.7), [rnd(2, 3, 4, 4)]),
        ("leaky_relu", lambda t: tensor_sum(mul(leaky_relu(t[0], 0.1), const(w_el, t))),
         [rnd(2, 3, 4, 4) + 0.01]),
        ("sigmoid", lambda t: tensor_sum(mul(sigmoid(t[0]), const(w_el, t))),
         [rnd(2, 3, 4, 4)]),
        ("upsample", lambda t: tensor_sum(mul(upsample_nearest(t[0], 2), const(w_up, t))),
         [rnd(1, 2, 4, 4)]),
        ("concat", lambda t: tensor_sum(mul(concat_channels([t[0], t[1]]), const(w_cat, t))),
         [rnd(1, 2, 4, 4), rnd(1, 3, 4, 4)]),
        ("conv_zero_s1", lambda t: tensor_sum(mul(
            conv2d(t[0], t[1], t[2], stride=1, padding="zero", pad=1), const(w_conv, t))),
         [rnd(1, 2, 5, 5), rnd(3, 2, 3, 3), rnd(3)]),
        ("conv_reflect_s2", lambda t: tensor_sum(
            conv2d(t[0], t[1], t[2], stride=2, padding="reflect", pad=1)),
         [rnd(1, 2, 6, 6), rnd(3, 2, 3, 3), rnd(3)]),
        ("mse", lambda t: mse_reduce(t[0], t[1], const(mask, t)),
         [rnd(1, 3, 4, 4), rnd(1, 3, 4, 4)]),
    ]
