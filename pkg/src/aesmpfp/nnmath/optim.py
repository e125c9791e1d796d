"""Adam and the linear learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteValue
from .tensor import all_finite

LR_START = 1e-4
LR_END = 1e-6


def linear_lr(step, total_steps, lr_start=LR_START, lr_end=LR_END):
    """Linear decay from ``lr_start`` at step 0 to ``lr_end`` at ``total_steps``."""
    if total_steps <= 0:
        return lr_start
    frac = min(max(step / total_steps, 0.0), 1.0)
    return lr_start * (1.0 - frac) + lr_end * frac


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns new parameter arrays.

    ``state`` is advanced in place.  ``grads`` entries may be ``None`` for
    parameters that took no part in the loss; those are left unchanged.
    """
    for i, g in enumerate(grads):
        if g is not None and not all_finite(g):
            raise NonFiniteValue(f"gradient[{i}]")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            out.append(p)
            continue
        m = state.m[i]
        v = state.v[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        denom = np.sqrt(v * (1.0 / c2))
        denom += eps
        step = m * (lr / c1)
        step /= denom
        out.append((p - step).astype(p.dtype, copy=False))
    return out


@dataclass
class Adam:
    """Stateful wrapper binding :func:`adam_step` to a list of parameter tensors."""

    params: list
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None
    names: list | None = None
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.state = AdamState.zeros_like([p.data for p in self.params])

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr):
        grads = [p.grad for p in self.params]
        for i, g in enumerate(grads):
            if g is not None and not all_finite(g):
                name = self.names[i] if self.names else f"param[{i}]"
                raise NonFiniteValue(f"gradient of {name}")
        if self.clip_norm is not None:
            total = np.sqrt(sum(float(np.dot(g.ravel(), g.ravel())) for g in grads if g is not None))
            if total > self.clip_norm:
                scale = self.clip_norm / (total + 1e-12)
                grads = [None if g is None else g * scale for g in grads]
        new = adam_step([p.data for p in self.params], grads, self.state, lr,
                        self.beta1, self.beta2, self.eps)
        for p, d in zip(self.params, new):
            p.data = d
