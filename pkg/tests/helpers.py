"""Shared data builders for the test suite."""

import numpy as np

from aesmpfp.aes import EpisodeRecorder
from aesmpfp.aes.episode import EpisodeFragment
from aesmpfp.envsim import MMEnv, Observation, builtin_scenario
from aesmpfp.envsim.scripted import ScriptedPolicy


def collect_episodes(n_transitions, scenario="cross_room", noise=0.1, seed=0):
    """Scripted-policy episodes totalling at least ``n_transitions`` steps."""
    env = MMEnv(builtin_scenario(scenario))
    pol = ScriptedPolicy(noise=noise, seed=seed)
    eps, n, e = [], 0, 0
    while n < n_transitions:
        obs = env.reset(1000 * seed + e)
        rec = EpisodeRecorder(e)
        while not env.state.done:
            a = pol(obs)
            res = env.step(a)
            rec.add(obs, a, res.reward, res.obs, res.done, res.ik_failure)
            obs = res.obs
        ep = rec.finish()
        eps.append(ep)
        n += len(ep)
        e += 1
    return eps


def random_windows(eps, rng, batch, window=16):
    out = []
    for _ in range(batch):
        ep = eps[int(rng.integers(len(eps)))]
        s = int(rng.integers(0, max(1, len(ep) - window + 1)))
        out.append(EpisodeFragment(ep.window(s, s + window), s, 0.0))
    return out


# -------------------------------------------------- linear planning system

class LinearModel:
    """x' = x + a with reward -|x + a - x*|^2; records every action it sees."""

    noise_dim = 0

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)
        self.seen = []

    def root(self, obs, h=None):
        return obs.vec[None, :2].copy()

    def tile(self, x, n):
        return np.repeat(x, n, 0)

    def step(self, x, a, noise=None):
        self.seen.append(a.copy())
        x2 = x + a
        return x2, -((x2 - self.target) ** 2).sum(1), x2


class FlatPolicy:
    def __init__(self, mean=(0.0, 0.0), std=0.3, q=0.0):
        self.mean, self.std, self.q = np.asarray(mean), std, q

    def propose(self, obs):
        n = len(obs)
        return np.tile(self.mean, (n, 1)), np.full((n, 2), self.std)

    def value(self, obs):
        return np.full(len(obs), self.q)


def point_obs(x):
    return Observation(np.zeros((30, 30), np.float32), np.r_[x, np.zeros(12)])


def linear_instance(rng):
    x = rng.uniform(-1, 1, 2)
    a_star = rng.uniform(-0.25, 0.25, 2)
    return x, a_star
