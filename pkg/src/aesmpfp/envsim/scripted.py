"""Hand-written base controller used for data collection and sanity baselines."""

from __future__ import annotations

import numpy as np

from .sim import BASE_POSE, EE_DESIRED, EnvConfig


def ring_tracking_action(obs, config=None, gain=1.0):
    """Velocity command (base frame) steering toward the ideal placement ring.

    Aims for the point ``r_ideal`` short of the EE target along the line from
    the base; ignores obstacles.
    """
    cfg = config or EnvConfig()
    x, y, th = obs.vec[BASE_POSE]
    ee = obs.vec[EE_DESIRED]
    d = ee - np.array([x, y])
    dist = float(np.linalg.norm(d))
    if dist < 1e-9:
        return np.zeros(2)
    target = ee - d / dist * cfg.r_ideal
    world = gain * (target - np.array([x, y])) / cfg.dt
    c, s = np.cos(th), np.sin(th)
    local = np.array([c * world[0] + s * world[1], -s * world[0] + c * world[1]])
    return np.clip(local, -cfg.v_max, cfg.v_max)


class ScriptedPolicy:
    """Ring tracking plus Gaussian exploration noise (seeded)."""

    def __init__(self, config=None, noise=0.05, seed=0):
        self.config = config or EnvConfig()
        self.noise = noise
        self.rng = np.random.default_rng(seed)

    def __call__(self, obs):
        a = ring_tracking_action(obs, self.config)
        if self.noise > 0:
            a = a + self.rng.normal(0.0, self.noise, 2)
        return np.clip(a, -self.config.v_max, self.config.v_max)
