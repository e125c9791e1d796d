"""Soft actor-critic over raw observations.

The actor outputs a diagonal Gaussian in pre-squash space; actions are
``v_max * tanh(u)``. Two Q critics with Polyak-averaged targets give the
clipped double-Q target, and the entropy temperature is learned in log
space toward a target entropy of ``-act_dim``.

Goal conditioning needs no extra input: the goal offset already sits in the
observation vector.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from .features import FEATURE_DIM, obs_features
from .nnmath import functional as F
from .nnmath import tensor as T
from .nnmath.checkpoint import module_blocks, restore_module
from .nnmath.layers import MLP
from .nnmath.optim import Adam
from .nnmath.tensor import Tensor, no_grad

BLOCKS = ("actor", "q1", "q2", "q1_target", "q2_target", "log_alpha")
LOG2 = math.log(2.0)


@dataclass(frozen=True)
class SACConfig:
    hidden: int = 256
    batch_size: int = 128
    gamma: float = 0.99
    tau: float = 0.005
    v_max: float = 0.3
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    init_alpha: float = 0.1
    target_entropy: float = -2.0
    obs_dim: int = FEATURE_DIM
    act_dim: int = 2
    act: str = "elu"
    dtype: str = "float32"


@dataclass
class PolicyOutput:
    mu: np.ndarray
    log_std: np.ndarray
    action: np.ndarray


def _log1m_tanh_sq(u):
    # log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u)), stable for large |u|
    return (LOG2 - u - T.softplus(u * -2.0)) * 2.0


class SAC:
    def __init__(self, config=None, rng=None):
        cfg = config or SACConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = np.dtype(cfg.dtype)
        self.config = cfg
        self.dtype = dt
        h = cfg.hidden
        # near-zero head: the initial policy is N(0, 1) before the squash
        self.actor = MLP([cfg.obs_dim, h, h, 2 * cfg.act_dim], rng, cfg.act, dt, out_gain=1e-3)
        self.q1 = MLP([cfg.obs_dim + cfg.act_dim, h, h, 1], rng, cfg.act, dt)
        self.q2 = MLP([cfg.obs_dim + cfg.act_dim, h, h, 1], rng, cfg.act, dt)
        self.q1_target = copy.deepcopy(self.q1)
        self.q2_target = copy.deepcopy(self.q2)
        self.log_alpha = Tensor(np.array([math.log(cfg.init_alpha)], dtype=dt), requires_grad=True)
        self.actor_opt = Adam(self.actor.parameters())
        self.critic_opt = Adam(self.q1.parameters() + self.q2.parameters())
        self.alpha_opt = Adam([self.log_alpha])
        self._act_lo = -cfg.v_max * (1.0 - 1e-6)
        self._act_hi = cfg.v_max * (1.0 - 1e-6)

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha.data[0]))

    # ------------------------------------------------------------ networks

    def features(self, maps, vecs):
        return obs_features(maps, vecs, self.dtype)

    def policy_dist(self, feats):
        """(mu, log_std) tensors in pre-squash space, log_std clamped."""
        out = F.check_finite(self.actor(T.as_tensor(feats, self.dtype)), "sac/actor")
        d = self.config.act_dim
        mu = T.getitem(out, (slice(None), slice(0, d)))
        log_std = T.clip(T.getitem(out, (slice(None), slice(d, 2 * d))),
                         self.config.log_std_min, self.config.log_std_max)
        return mu, log_std

    def sample(self, feats, noise):
        """Reparameterized squashed action and its log-density in action space."""
        cfg = self.config
        mu, log_std = self.policy_dist(feats)
        u = F.gaussian_sample(mu, log_std, noise)
        a = T.tanh(u) * cfg.v_max
        logp = (F.gaussian_log_prob(u, mu, log_std, axis=1)
                - T.tsum(_log1m_tanh_sq(u), axis=1) - cfg.act_dim * math.log(cfg.v_max))
        return a, logp

    def q_values(self, net, feats, actions):
        if isinstance(actions, Tensor):
            a = actions * (1.0 / self.config.v_max)
        else:
            a = Tensor(np.asarray(actions, self.dtype) / self.dtype.type(self.config.v_max))
        q = net(T.concat([T.as_tensor(feats, self.dtype), a], axis=1))
        return F.check_finite(T.reshape(q, (q.shape[0],)), "sac/critic")

    def q_min(self, feats, actions):
        with no_grad():
            return np.minimum(self.q_values(self.q1, feats, actions).data,
                              self.q_values(self.q2, feats, actions).data).astype(np.float64)

    # ------------------------------------------------------------- acting

    def act_features(self, feats, mode="mean", noise=None):
        """Batched actions from features; ``noise`` (N, act_dim) is required when sampling."""
        cfg = self.config
        with no_grad():
            mu, log_std = self.policy_dist(feats)
        mu = mu.data.astype(np.float64)
        log_std = log_std.data.astype(np.float64)
        if mode == "mean":
            u = mu
        elif mode == "sample":
            u = mu + np.exp(log_std) * np.asarray(noise, dtype=np.float64).reshape(mu.shape)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        a = np.clip(cfg.v_max * np.tanh(u), self._act_lo, self._act_hi)
        return PolicyOutput(mu, log_std, a)

    def act(self, obs, mode="mean", rng=None):
        """Action for one Observation. ``mode="sample"`` draws its noise from ``rng``."""
        feats = self.features(obs.map[None], obs.vec[None])
        noise = None
        if mode == "sample":
            if rng is None:
                raise ValueError("sampling needs an rng")
            noise = rng.standard_normal((1, self.config.act_dim))
        out = self.act_features(feats, mode, noise)
        return out.action[0], PolicyOutput(out.mu[0], out.log_std[0], out.action[0])

    def action_std(self, out):
        """Per-component action-space spread of a PolicyOutput (delta method through the squash)."""
        slope = self.config.v_max * (1.0 - np.tanh(out.mu) ** 2)
        return slope * np.exp(out.log_std)

    # ------------------------------------------------------------ learning

    def update(self, batch, rng, lr):
        """One gradient step on critics, actor and temperature, then a Polyak step.

        ``batch`` holds arrays ``maps, vecs, actions, rewards, next_maps,
        next_vecs, terminal`` with a shared leading batch dimension.
        Precomputed ``feats`` / ``next_feats`` take the place of the raw
        observations when present.
        """
        cfg = self.config
        feats = batch["feats"] if "feats" in batch else self.features(batch["maps"], batch["vecs"])
        next_feats = (batch["next_feats"] if "next_feats" in batch
                      else self.features(batch["next_maps"], batch["next_vecs"]))
        rewards = np.asarray(batch["rewards"], dtype=np.float64)
        done = np.asarray(batch["terminal"], dtype=np.float64)
        B = len(rewards)
        alpha = self.alpha

        with no_grad():
            a_next, logp_next = self.sample(next_feats, rng.standard_normal((B, cfg.act_dim)))
            q_next = np.minimum(self.q_values(self.q1_target, next_feats, a_next).data,
                                self.q_values(self.q2_target, next_feats, a_next).data)
            soft = q_next.astype(np.float64) - alpha * logp_next.data.astype(np.float64)
        y = td_target(rewards, done, soft, cfg.gamma).astype(self.dtype)

        self.critic_opt.zero_grad()
        q1 = self.q_values(self.q1, feats, batch["actions"])
        q2 = self.q_values(self.q2, feats, batch["actions"])
        critic_loss = F.mse(q1, y) + F.mse(q2, y)
        critic_loss.backward()
        self.critic_opt.step(lr)

        self.actor_opt.zero_grad()
        a_new, logp = self.sample(feats, rng.standard_normal((B, cfg.act_dim)))
        p1 = self.q_values(self.q1, feats, a_new)
        p2 = self.q_values(self.q2, feats, a_new)
        pick = (p1.data <= p2.data).astype(self.dtype)
        q_pi = p1 * pick + p2 * (1.0 - pick)
        actor_loss = T.tmean(logp * alpha - q_pi)
        actor_loss.backward()
        self.actor_opt.step(lr)
        self.q1.zero_grad()
        self.q2.zero_grad()

        self.alpha_opt.zero_grad()
        slack = (logp.data + cfg.target_entropy).astype(self.dtype)
        alpha_loss = T.tmean(self.log_alpha * -slack)
        alpha_loss.backward()
        self.alpha_opt.step(lr)

        polyak_update(self.q1_target, self.q1, cfg.tau)
        polyak_update(self.q2_target, self.q2, cfg.tau)
        return {
            "critic_loss": float(critic_loss.data),
            "actor_loss": float(actor_loss.data),
            "alpha": self.alpha,
            "entropy": float(-logp.data.mean()),
            "q_mean": float(q1.data.mean()),
        }

    # ---------------------------------------------------------- checkpoint

    def blocks(self):
        out = {}
        for name in BLOCKS[:-1]:
            out.update(module_blocks(f"sac/{name}", getattr(self, name)))
        out["sac/log_alpha"] = self.log_alpha.data.copy()
        return out

    def restore(self, blocks):
        for name in BLOCKS[:-1]:
            restore_module(f"sac/{name}", getattr(self, name), blocks)
        self.log_alpha.data = np.asarray(blocks["sac/log_alpha"], dtype=self.dtype).reshape(1).copy()


def td_target(rewards, done, soft_next, gamma):
    """``r + gamma * (1 - done) * soft_next``; terminal rows reduce to ``r`` exactly."""
    rewards = np.asarray(rewards, dtype=np.float64)
    cont = np.where(np.asarray(done, dtype=bool), 0.0, gamma * np.asarray(soft_next, dtype=np.float64))
    return rewards + cont


def polyak_update(target, online, tau):
    """``target <- (1 - tau) * target + tau * online``, computed in float64 and cast back."""
    for (_, t), (_, p) in zip(target.named_parameters(), online.named_parameters()):
        mixed = (1.0 - tau) * t.data.astype(np.float64) + tau * p.data.astype(np.float64)
        t.data = mixed.astype(t.data.dtype)
