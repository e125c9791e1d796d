"""Differentiable building blocks used by the world model and the actor-critic.

Thin wrappers over :mod:`.tensor` that add finiteness checks and the few
composite expressions (Gaussian sampling, KL, losses) the models need.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import NonFiniteValue, ShapeMismatch
from . import tensor as T
from .tensor import Tensor, as_tensor

LOG_2PI = math.log(2.0 * math.pi)


def check_finite(t, where):
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not T.all_finite(data):
        bad = int((~np.isfinite(data)).sum())
        raise NonFiniteValue(where, f"{bad} of {data.size} entries")
    return t


def dense(x, W, b=None):
    return check_finite(T.dense(x, W, b), "dense")


def gru_cell(h_prev, x, params):
    """``params`` is a mapping with keys ``Wx, Wh, bx, bh``."""
    out = T.gru_cell(h_prev, x, params["Wx"], params["Wh"], params["bx"], params["bh"])
    return check_finite(out, "gru_cell")


def tanh(x):
    return T.tanh(as_tensor(x))


def relu(x):
    return T.relu(as_tensor(x))


def elu(x):
    return T.elu(as_tensor(x))


def softplus(x):
    return T.softplus(as_tensor(x))


def sigmoid(x):
    return T.sigmoid(as_tensor(x))


ACTIVATIONS = {"tanh": tanh, "relu": relu, "elu": elu, "softplus": softplus, "sigmoid": sigmoid}


def gaussian_sample(mu, log_sigma, noise):
    """Reparameterized draw ``mu + exp(log_sigma) * noise``.

    ``noise`` is supplied by the caller so the draw is reproducible from a seed.
    """
    mu = as_tensor(mu)
    noise = np.asarray(noise, dtype=mu.data.dtype)
    if noise.shape != mu.shape:
        raise ShapeMismatch(f"noise {noise.shape} vs mean {mu.shape}")
    return check_finite(mu + T.exp(as_tensor(log_sigma)) * noise, "gaussian_sample")


def gaussian_kl(mu1, sigma1, mu2, sigma2, axis=-1):
    """KL(N(mu1, sigma1) || N(mu2, sigma2)) for diagonal Gaussians, summed over ``axis``."""
    mu1, sigma1, mu2, sigma2 = (as_tensor(v) for v in (mu1, sigma1, mu2, sigma2))
    if not (np.all(sigma1.data > 0) and np.all(sigma2.data > 0)):
        raise ValueError("gaussian_kl needs strictly positive standard deviations")
    var2 = T.square(sigma2)
    diff = mu1 - mu2
    per_dim = T.log(sigma2) - T.log(sigma1) + (T.square(sigma1) + T.square(diff)) / (2.0 * var2) - 0.5
    out = per_dim if axis is None else T.tsum(per_dim, axis=axis)
    return check_finite(out, "gaussian_kl")


def gaussian_log_prob(x, mu, log_sigma, axis=-1):
    x, mu, log_sigma = (as_tensor(v) for v in (x, mu, log_sigma))
    z = (x - mu) * T.exp(-log_sigma)
    per_dim = -0.5 * T.square(z) - log_sigma - 0.5 * LOG_2PI
    return T.tsum(per_dim, axis=axis)


def mse(x, y):
    x, y = T._pair(as_tensor(x), y)
    if x.shape != y.shape:
        raise ShapeMismatch(f"mse {x.shape} vs {y.shape}")
    return check_finite(T.tmean(T.square(x - y)), "mse")


def bce_with_logits(logits, targets, axis=-1):
    """Binary cross-entropy on logits, averaged over ``axis``.

    Uses ``softplus(l) - t*l`` which stays finite for any logit magnitude.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=logits.data.dtype)
    if targets.shape != logits.shape:
        raise ShapeMismatch(f"bce {logits.shape} vs {targets.shape}")
    return T.tmean(T.bce_logits(logits, targets), axis=axis)
