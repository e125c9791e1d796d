"""Parameter containers: dense layers, MLP stacks and the GRU cell."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteValue
from . import functional as F
from . import tensor as T
from .tensor import Tensor


def init_uniform(rng, fan_in, shape, gain=2.0, dtype=np.float32):
    """Kaiming-style uniform init: variance ``gain / fan_in``."""
    bound = np.sqrt(3.0 * gain / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Attribute-walking parameter container.

    Parameters are :class:`Tensor` attributes with ``requires_grad``; child
    modules (or lists of them) are found the same way, in definition order.
    """

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in own.items():
            arr = np.asarray(state[k])
            if arr.shape != p.data.shape:
                raise KeyError(f"{k}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def check_finite(self, where):
        for name, p in self.named_parameters():
            if not T.all_finite(p.data):
                raise NonFiniteValue(f"{where}/{name}")


class Dense(Module):
    def __init__(self, n_in, n_out, rng, gain=2.0, dtype=np.float32, zero=False):
        w = np.zeros((n_in, n_out), dtype) if zero else init_uniform(rng, n_in, (n_in, n_out), gain, dtype)
        self.W = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(n_out, dtype), requires_grad=True)

    def __call__(self, x):
        return T.dense(x, self.W, self.b)


class MLP(Module):
    """Dense stack with a shared hidden activation and a linear head."""

    def __init__(self, sizes, rng, act="elu", dtype=np.float32, out_gain=1.0):
        self.act = act
        n = len(sizes) - 1
        self.layers = [
            Dense(sizes[i], sizes[i + 1], rng, gain=2.0 if i < n - 1 else out_gain, dtype=dtype)
            for i in range(n)
        ]

    def __call__(self, x):
        act = F.ACTIVATIONS[self.act]
        for layer in self.layers[:-1]:
            x = act(layer(x))
        return self.layers[-1](x)


class GRUCell(Module):
    def __init__(self, n_in, n_hidden, rng, dtype=np.float32, zero_recurrent=False):
        self.Wx = Tensor(init_uniform(rng, n_in, (n_in, 3 * n_hidden), 1.0, dtype), requires_grad=True)
        wh = (np.zeros((n_hidden, 3 * n_hidden), dtype) if zero_recurrent
              else init_uniform(rng, n_hidden, (n_hidden, 3 * n_hidden), 1.0, dtype))
        self.Wh = Tensor(wh, requires_grad=True)
        self.bx = Tensor(np.zeros(3 * n_hidden, dtype), requires_grad=True)
        self.bh = Tensor(np.zeros(3 * n_hidden, dtype), requires_grad=True)
        self.n_hidden = n_hidden

    def __call__(self, h, x):
        return F.gru_cell(h, x, {"Wx": self.Wx, "Wh": self.Wh, "bx": self.bx, "bh": self.bh})
