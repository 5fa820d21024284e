"""Adam with bias correction, operating in place on a parameter bag."""

from __future__ import annotations

import numpy as np

from .network import ModelParameters

__all__ = ["MissingGradientError", "adam_step"]


class MissingGradientError(RuntimeError):
    """adam_step was called before backward populated every gradient."""


def adam_step(
    params: ModelParameters,
    lr: float = 0.01,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One Adam update: theta -= lr * m_hat / (sqrt(v_hat) + eps).

    Increments the shared step count, applies bias correction with it and
    clears all gradients afterwards.
    """
    missing = [n for n in params.names if params.tensors[n].grad is None]
    if missing:
        raise MissingGradientError(f"no gradient for parameters: {missing[:3]}...")
    b1, b2 = betas
    params.step += 1
    t = params.step
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name in params.names:
        p = params.tensors[name]
        g = p.grad
        m = params.m[name]
        v = params.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.grad = None
