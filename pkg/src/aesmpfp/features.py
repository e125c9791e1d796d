"""Network input features derived from observations.

Every network (encoder, actor, critics) sees the flattened occupancy map plus
a normalized state vector extended with heading and base-frame EE offsets.
The observation decoder predicts the normalized vector, so imagined
observations round-trip through :func:`denormalize_vec`.
"""

from __future__ import annotations

import numpy as np

from .envsim.sim import BASE_POSE, EE_DESIRED, EE_POS, MAP_SIZE, OBS_VEC_DIM

MAP_CELLS = MAP_SIZE * MAP_SIZE
# per-entry scale: prev action, pose (x, y, theta), velocity, ee, ee target, goal_rel, goal index
VEC_SCALE = np.array([0.3, 0.3, 5.0, 5.0, np.pi, 0.3, 0.3, 5.0, 5.0, 5.0, 5.0, 3.0, 3.0, 4.0])
EXTRA_DIM = 6
FEATURE_DIM = MAP_CELLS + OBS_VEC_DIM + EXTRA_DIM


def normalize_vec(vecs):
    return np.asarray(vecs, dtype=np.float64) / VEC_SCALE


def denormalize_vec(vecs_norm):
    return np.asarray(vecs_norm, dtype=np.float64) * VEC_SCALE


def vec_features(vecs):
    """(N, 14) raw vectors -> (N, 20) normalized vector plus cos/sin heading and local EE offsets."""
    v = np.atleast_2d(np.asarray(vecs, dtype=np.float64))
    th = v[:, BASE_POSE][:, 2]
    c, s = np.cos(th), np.sin(th)
    base = v[:, BASE_POSE][:, :2]

    def local(p):
        d = p - base
        return np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]], axis=1)

    extra = np.concatenate([np.stack([c, s], axis=1), local(v[:, EE_DESIRED]), local(v[:, EE_POS])], axis=1)
    return np.concatenate([v / VEC_SCALE, extra], axis=1)


def obs_features(maps, vecs, dtype=np.float32):
    """Batch of observations -> (N, FEATURE_DIM) network input."""
    vecs = np.atleast_2d(vecs)
    maps = np.asarray(maps).reshape(vecs.shape[0], MAP_CELLS)
    return np.concatenate([maps.astype(dtype), vec_features(vecs).astype(dtype)], axis=1)
