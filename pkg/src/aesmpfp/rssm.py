"""Recurrent state-space world model.

Components (each a named parameter block):

* ``encoder``: observation features -> diagonal Gaussian over the stochastic code z
* ``dynamics``: GRU cell, ``h' = f(h, [z, a])``
* ``prior``: h -> Gaussian over z, the KL target and the observation-free path
* ``obs_head``: h -> (map logits, normalized state vector)
* ``reward_head``: h -> scalar reward

The decoders read the post-transition state, so ``h_{t+1}`` predicts the
observation ``o_{t+1}`` and the reward ``r_t`` of the transition that led
there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .features import FEATURE_DIM, MAP_CELLS, denormalize_vec, normalize_vec, obs_features
from .nnmath import functional as F
from .nnmath import tensor as T
from .nnmath.checkpoint import module_blocks, restore_module
from .nnmath.layers import MLP, GRUCell, Module
from .nnmath.optim import Adam
from .nnmath.tensor import Tensor, no_grad

BLOCKS = ("encoder", "dynamics", "prior", "obs_head", "reward_head")


@dataclass(frozen=True)
class RSSMConfig:
    h_dim: int = 128
    z_dim: int = 32
    hidden: int = 256
    act: str = "elu"
    sigma_min: float = 0.1
    kl_beta: float = 0.1
    free_bits: float = 1.0
    burn_in: int = 4
    vec_dim: int = 14
    act_dim: int = 2
    clip_norm: float = 100.0
    obs_reduce: str = "sum"  # "sum": log-likelihood over cells and components; "mean": per-element average
    dtype: str = "float32"


@dataclass
class LatentState:
    h: np.ndarray
    z: np.ndarray


def pack_batch(fragments, burn_in=4):
    """Stack fragments into padded arrays with a loss mask.

    Returns a dict of arrays ``maps (B, L+1, 900)``, ``vecs (B, L+1, V)``,
    ``actions (B, L, 2)``, ``rewards (B, L)``, ``mask (B, L)`` and the list of
    per-fragment ``offsets`` (first scored transition). The first
    ``min(burn_in, len - 1)`` transitions of each fragment only warm up h.
    """
    L = max(len(f) for f in fragments)
    B = len(fragments)
    ep0 = fragments[0].transitions
    V = ep0.vecs.shape[1]
    maps = np.zeros((B, L + 1, MAP_CELLS), dtype=np.float32)
    vecs = np.zeros((B, L + 1, V))
    vecs[..., 2] = 1.0  # keeps padded vectors away from the zero-norm corner
    actions = np.zeros((B, L, ep0.actions.shape[1]))
    rewards = np.zeros((B, L))
    mask = np.zeros((B, L), dtype=bool)
    offsets = []
    for b, f in enumerate(fragments):
        ep = f.transitions
        n = len(ep)
        m, v = ep.observation_sequence()
        maps[b, :n + 1] = m.reshape(n + 1, -1)
        vecs[b, :n + 1] = v
        actions[b, :n] = ep.actions
        rewards[b, :n] = ep.rewards
        off = min(burn_in, n - 1)
        mask[b, off:n] = True
        offsets.append(off)
    return {"maps": maps, "vecs": vecs, "actions": actions, "rewards": rewards, "mask": mask, "offsets": offsets}


class RSSM(Module):
    def __init__(self, config=None, rng=None):
        cfg = config or RSSMConfig()
        if cfg.obs_reduce not in ("sum", "mean"):
            raise ConfigError(f"obs_reduce must be 'sum' or 'mean', got {cfg.obs_reduce!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = np.dtype(cfg.dtype)
        self.config = cfg
        self.dtype = dt
        zd, hd, hid = cfg.z_dim, cfg.h_dim, cfg.hidden
        self.encoder = MLP([FEATURE_DIM, hid, hid, 2 * zd], rng, cfg.act, dt)
        self.dynamics = GRUCell(zd + cfg.act_dim, hd, rng, dt)
        self.prior = MLP([hd, hid, 2 * zd], rng, cfg.act, dt)
        self.obs_head = MLP([hd, hid, hid, MAP_CELLS + cfg.vec_dim], rng, cfg.act, dt)
        self.reward_head = MLP([hd, hid, 1], rng, cfg.act, dt)
        self.optimizer = None

    # ------------------------------------------------------------ pieces

    def _gaussian(self, out):
        zd = self.config.z_dim
        mu = T.getitem(out, (slice(None), slice(0, zd)))
        sigma = T.softplus(T.getitem(out, (slice(None), slice(zd, 2 * zd)))) + self.config.sigma_min
        return mu, sigma

    def encode_features(self, feats):
        out = self.encoder(Tensor(np.asarray(feats, dtype=self.dtype)))
        mu, sigma = self._gaussian(out)
        return F.check_finite(mu, "rssm/encoder"), sigma

    def encode(self, maps, vecs, noise=None):
        """Posterior (mu, sigma) and z; ``z = mu + sigma * noise`` (``mu`` when noise is None)."""
        mu, sigma = self.encode_features(obs_features(maps, vecs, self.dtype))
        z = mu if noise is None else mu + sigma * np.asarray(noise, dtype=self.dtype)
        return mu, sigma, z

    def dynamics_step(self, h, z, a):
        x = T.concat([T.as_tensor(z, self.dtype), T.as_tensor(a, self.dtype)], axis=1)
        out = self.dynamics(T.as_tensor(h, self.dtype), x)
        return F.check_finite(out, "rssm/dynamics")

    def prior_dist(self, h):
        return self._gaussian(self.prior(T.as_tensor(h, self.dtype)))

    def predict(self, h):
        """(map logits, normalized vec, reward) tensors from h."""
        h = T.as_tensor(h, self.dtype)
        out = F.check_finite(self.obs_head(h), "rssm/obs_head")
        logits = T.getitem(out, (slice(None), slice(0, MAP_CELLS)))
        vec = T.getitem(out, (slice(None), slice(MAP_CELLS, None)))
        r = F.check_finite(self.reward_head(h), "rssm/reward_head")
        return logits, vec, T.reshape(r, (r.shape[0],))

    def decode(self, h):
        """Point predictions as arrays: map probabilities (N, 30, 30), raw vec (N, V), reward (N,)."""
        with no_grad():
            logits, vec, r = self.predict(h)
        maps = 0.5 * (1.0 + np.tanh(0.5 * logits.data.astype(np.float64)))
        return maps.reshape(-1, 30, 30), denormalize_vec(vec.data), r.data.astype(np.float64)

    def initial_h(self, n=1):
        return np.zeros((n, self.config.h_dim), dtype=self.dtype)

    def filter_step(self, h, obs_map, obs_vec, action):
        """Advance the recurrent state along a real trajectory: ``h' = f(h, e(o), a)``."""
        with no_grad():
            mu, _, _ = self.encode(obs_map[None], obs_vec[None])
            return self.dynamics_step(h, mu, np.asarray(action)[None]).data

    # ------------------------------------------------------------ training

    def observe(self, batch, noise):
        """Posterior over every observation and the filtered states h_1..h_L.

        Returns ``(mu, sigma)`` flattened to (B * (L+1), z_dim) and the list of
        per-step h tensors, each (B, h_dim).
        """
        cfg = self.config
        maps, vecs, actions = batch["maps"], batch["vecs"], batch["actions"]
        B, L1 = maps.shape[:2]
        feats = obs_features(maps.reshape(B * L1, -1), vecs.reshape(B * L1, -1), self.dtype)
        mu, sigma = self.encode_features(feats)
        z = mu + sigma * np.asarray(noise, dtype=self.dtype).reshape(B * L1, -1)
        z = T.reshape(z, (B, L1, cfg.z_dim))
        h = Tensor(self.initial_h(B))
        hs = []
        for t in range(L1 - 1):
            h = self.dynamics_step(h, T.getitem(z, (slice(None), t)), actions[:, t])
            hs.append(h)
        return mu, sigma, hs

    def sequence_loss(self, batch, noise):
        """Mean loss over masked transitions and the per-transition loss array (B, L).

        Unscored entries (burn-in and padding) of the returned array are NaN.

        ``noise`` is standard normal of shape (B, L+1, z_dim) for posterior samples.
        """
        cfg = self.config
        maps, vecs = batch["maps"], batch["vecs"]
        B, L1 = maps.shape[:2]
        L = L1 - 1
        mu, sigma, hs = self.observe(batch, noise)
        H = T.reshape(T.concat([T.reshape(h, (B, 1, cfg.h_dim)) for h in hs], axis=1), (B * L, cfg.h_dim))
        # decoders and prior run on scored rows only
        sel = np.flatnonzero(batch["mask"].reshape(-1))
        Hs = H if sel.size == B * L else T.getitem(H, sel)
        logits, vec_pred, r_pred = self.predict(Hs)
        tgt_maps = maps[:, 1:].reshape(B * L, -1)[sel]
        tgt_vecs = normalize_vec(vecs[:, 1:].reshape(B * L, -1)[sel]).astype(self.dtype)
        map_bce = F.bce_with_logits(logits, tgt_maps, axis=-1)
        vec_mse = T.tmean(T.square(vec_pred - tgt_vecs), axis=-1)
        rew_se = T.square(r_pred - batch["rewards"].reshape(-1)[sel].astype(self.dtype))
        post_idx = (np.arange(B)[:, None] * L1 + np.arange(1, L1)[None, :]).reshape(-1)[sel]
        p_mu, p_sigma = self.prior_dist(Hs)
        kl = F.gaussian_kl(T.getitem(mu, post_idx), T.getitem(sigma, post_idx), p_mu, p_sigma, axis=-1)
        kl_fb = T.maximum(kl, cfg.free_bits)
        if cfg.obs_reduce == "sum":
            # summed log-likelihoods keep a 900-cell map from being drowned out by the KL and reward terms
            per = map_bce * float(MAP_CELLS) + vec_mse * float(cfg.vec_dim) + rew_se + cfg.kl_beta * kl_fb
        else:
            per = map_bce + vec_mse + rew_se + cfg.kl_beta * kl_fb
        loss = T.tsum(per) * (1.0 / max(float(sel.size), 1.0))
        F.check_finite(loss, "rssm/loss")

        def full(a):
            out = np.full(B * L, np.nan)
            out[sel] = a
            return out.reshape(B, L)

        parts = {"map_bce": map_bce.data, "vec_mse": vec_mse.data, "reward_se": rew_se.data, "kl": kl.data}
        return loss, full(per.data), {k: full(v) for k, v in parts.items()}

    def make_optimizer(self):
        names = [n for n, _ in self.named_parameters()]
        self.optimizer = Adam(self.parameters(), clip_norm=self.config.clip_norm, names=names)
        return self.optimizer

    def train_step(self, fragments, rng, lr):
        """One Adam step on a batch of fragments.

        Returns (per-fragment scored losses as a list of (offset, losses), stats).
        """
        batch = pack_batch(fragments, self.config.burn_in)
        if self.optimizer is None:
            self.make_optimizer()
        noise = rng.standard_normal((*batch["maps"].shape[:2], self.config.z_dim))
        self.optimizer.zero_grad()
        loss, per, parts = self.sequence_loss(batch, noise)
        loss.backward()
        self.optimizer.step(lr)
        self.check_finite("rssm")
        out = []
        for b, f in enumerate(fragments):
            off = batch["offsets"][b]
            out.append((off, per[b, off:len(f)].astype(np.float64)))
        mask = batch["mask"]
        stats = {k: float(v[mask].mean()) for k, v in parts.items()}
        stats["loss"] = float(loss.data)
        stats["obs_loss"] = stats["map_bce"] + stats["vec_mse"]
        return out, stats

    def evaluate(self, fragments, rng=None, noise=None):
        """Loss statistics without an update (posterior noise from ``rng`` or zero)."""
        batch = pack_batch(fragments, self.config.burn_in)
        shape = (*batch["maps"].shape[:2], self.config.z_dim)
        if noise is None:
            noise = rng.standard_normal(shape) if rng is not None else np.zeros(shape)
        with no_grad():
            loss, per, parts = self.sequence_loss(batch, noise)
        mask = batch["mask"]
        stats = {k: float(v[mask].mean()) for k, v in parts.items()}
        stats["loss"] = float(loss.data)
        stats["obs_loss"] = stats["map_bce"] + stats["vec_mse"]
        return stats, per, mask

    def prediction_losses(self, batch, context, open_loop):
        """Per-step observation loss (map BCE + vec MSE) after ``context`` filtered transitions.

        Closed loop keeps encoding the real observations; open loop replaces
        every later code with the prior mean, so predictions rely on the
        dynamics alone. Returns an array (B, L - context).
        """
        maps, vecs, actions = batch["maps"], batch["vecs"], batch["actions"]
        B, L1 = maps.shape[:2]
        with no_grad():
            feats = obs_features(maps.reshape(B * L1, -1), vecs.reshape(B * L1, -1), self.dtype)
            mu = self.encode_features(feats)[0].data.reshape(B, L1, -1)
            h = self.initial_h(B)
            z = mu[:, 0]
            out = []
            for t in range(L1 - 1):
                h = self.dynamics_step(h, z, actions[:, t]).data
                if t >= context:
                    logits, vec, _ = self.predict(h)
                    bce = F.bce_with_logits(logits, maps[:, t + 1], axis=-1).data
                    err = vec.data - normalize_vec(vecs[:, t + 1])
                    out.append(bce + (err * err).mean(axis=1))
                z = self.prior_dist(h)[0].data if (open_loop and t >= context) else mu[:, t + 1]
        return np.stack(out, axis=1)

    def episode_losses(self, episode):
        """Per-transition losses over a whole episode, filtering from its first observation."""
        from .aes.episode import EpisodeFragment

        frag = EpisodeFragment(episode, 0, 0.0)
        batch = pack_batch([frag], burn_in=0)
        noise = np.zeros((1, len(episode) + 1, self.config.z_dim))
        with no_grad():
            _, per, _ = self.sequence_loss(batch, noise)
        return per[0].astype(np.float64)

    # ------------------------------------------------------------ checkpoint

    def blocks(self):
        out = {}
        for name in BLOCKS:
            out.update(module_blocks(f"rssm/{name}", getattr(self, name)))
        return out

    def restore(self, blocks):
        for name in BLOCKS:
            restore_module(f"rssm/{name}", getattr(self, name), blocks)
