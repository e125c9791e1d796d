"""Central finite-difference checks for the autodiff tape.

Two flavours:

* :func:`gradcheck` perturbs every coordinate of every input (small ops).
* :func:`directional_gradcheck` compares ``<grad, d>`` with a central
  difference along random unit directions ``d``; used for whole models whose
  parameter count makes coordinate sweeps impractical.

Errors are norm-wise relative: ``|a - n| / max(|a|, |n|, floor)``.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def _rel(a, n, floor):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def analytic_grads(fn, arrays):
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    out.backward()
    return [np.zeros_like(l.data) if l.grad is None else l.grad for l in leaves]


def numeric_grads(fn, arrays, h=1e-4):
    arrays = [np.array(a, dtype=np.float64) for a in arrays]

    def f():
        return float(fn(*[Tensor(a) for a in arrays]).data)

    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def gradcheck(fn, arrays, h=1e-4, floor=1e-8):
    """Largest norm-wise relative error over all inputs of ``fn``."""
    ana = analytic_grads(fn, arrays)
    num = numeric_grads(fn, arrays, h)
    return max(_rel(a, n, floor) for a, n in zip(ana, num))


def directional_gradcheck(loss_fn, params, rng, n_dirs=3, h=1e-4, floor=1e-10):
    """Check ``loss_fn()`` against its gradient w.r.t. ``params`` along random directions.

    ``params`` are float64 leaf tensors that ``loss_fn`` closes over; their
    ``data`` is perturbed in place and restored.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [rng.standard_normal(p.data.shape) for p in params]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        orig = [p.data.copy() for p in params]
        for p, o, d in zip(params, orig, dirs):
            p.data = o + h * d
        fp = float(loss_fn().data)
        for p, o, d in zip(params, orig, dirs):
            p.data = o - h * d
        fm = float(loss_fn().data)
        for p, o in zip(params, orig):
            p.data = o
        numeric = (fp - fm) / (2.0 * h)
        worst = max(worst, _rel(analytic, numeric, floor))
    return worst
