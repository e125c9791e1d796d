"""Model-predictive forward planning with the cross-entropy method.

Each decision seeds a Gaussian over H-step action sequences from the actor,
then alternates sampling L candidates, scoring them by imagined return plus
a discounted terminal critic value, and refitting to the top K. Only the
first action of the final mean is executed.

The planner talks to two small protocols so that the learned world model can
be swapped for analytic or ground-truth dynamics:

* a *model* with ``root(obs, h)``, ``tile(state, n)``, ``step(state, actions,
  noise) -> (state, rewards, obs_batch)`` and an integer ``noise_dim``;
* a *policy* with ``propose(obs_batch) -> (mean, std)`` and
  ``value(obs_batch) -> Q(o, mean action)``.

Observation batches are opaque to the planner and only travel from the model
to the policy.
"""

from __future__ import annotations

import json
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteValue
from .features import denormalize_vec, obs_features
from .nnmath.tensor import no_grad

THREADS_ENV = "AESMPFP_THREADS"
MODES = ("decode_reencode", "latent_prior")


@dataclass(frozen=True)
class PlanConfig:
    horizon: int = 8
    candidates: int = 50
    elites: int = 10
    iters: int = 4
    gamma: float = 0.99
    sigma_floor: float = 0.05
    sigma_init: float | None = None  # overrides the actor's spread when set
    noise_seed: int = 0
    mode: str = "decode_reencode"
    v_max: float = 0.3
    chunk: int = 25  # candidates per rollout batch; fixed so thread count never changes results

    def validate(self):
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if not 1 <= self.elites <= self.candidates:
            raise ConfigError(f"need 1 <= elites <= candidates, got {self.elites} / {self.candidates}")
        if self.iters < 1 or self.chunk < 1:
            raise ConfigError("iters and chunk must be positive")
        if self.sigma_floor < 0:
            raise ConfigError("sigma_floor must be non-negative")
        if self.mode not in MODES:
            raise ConfigError(f"unknown imagination mode {self.mode!r}")
        return self


@dataclass
class CemState:
    mu: np.ndarray  # (H, 2)
    sigma: np.ndarray  # (H, 2)
    elite_returns: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class PlanResult:
    action: np.ndarray
    state: CemState
    init: CemState
    elite_history: list  # per iteration, elite returns in rank order


def horizon_schedule(step, total_steps, h_min=1, h_max=8, evaluation=False):
    """Linear horizon ramp, rounded half-up; evaluation always plans at ``h_max``."""
    if evaluation or total_steps <= 0:
        return h_max
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    # exact integer form of floor(h_min + (h_max - h_min) * step / total + 1/2)
    num = 2 * (h_min * total_steps + (h_max - h_min) * step) + total_steps
    return num // (2 * total_steps)


def discounted_return(rewards, terminal_value, gamma):
    """``sum_k gamma^k r_k + gamma^H * terminal_value`` along the last axis."""
    rewards = np.asarray(rewards, dtype=np.float64)
    H = rewards.shape[-1]
    disc = np.float64(gamma) ** np.arange(H)
    return rewards @ disc + np.float64(gamma) ** H * np.asarray(terminal_value, dtype=np.float64)


def score_candidate(rewards, final_obs, policy, gamma):
    """Imagined return of rollouts whose last decoded observations are ``final_obs``."""
    return discounted_return(rewards, policy.value(final_obs), gamma)


# ----------------------------------------------------------------- adapters

class RSSMImagination:
    """Latent rollouts through the world model.

    ``decode_reencode`` feeds each decoded observation back through the
    encoder (posterior mean); ``latent_prior`` samples the next code from the
    prior with caller-supplied noise.
    """

    def __init__(self, rssm, mode="decode_reencode"):
        if mode not in MODES:
            raise ConfigError(f"unknown imagination mode {mode!r}")
        self.rssm = rssm
        self.mode = mode
        self.noise_dim = rssm.config.z_dim if mode == "latent_prior" else 0

    def root(self, obs, h=None):
        rssm = self.rssm
        h = rssm.initial_h(1) if h is None else np.asarray(h, dtype=rssm.dtype).reshape(1, -1)
        with no_grad():
            z = rssm.encode(obs.map[None], obs.vec[None])[0].data
        return h, z

    def tile(self, state, n):
        h, z = state
        return np.repeat(h, n, 0), np.repeat(z, n, 0)

    def step(self, state, actions, noise=None):
        rssm = self.rssm
        h, z = state
        with no_grad():
            h2 = rssm.dynamics_step(h, z, actions).data
            logits, vec, r = rssm.predict(h2)
            maps = 0.5 * (1.0 + np.tanh(0.5 * logits.data))
            vecs = denormalize_vec(vec.data)
            if self.mode == "decode_reencode":
                z2 = rssm.encode_features(obs_features(maps, vecs, rssm.dtype))[0].data
            else:
                mu, sigma = rssm.prior_dist(h2)
                eps = np.zeros(mu.shape) if noise is None else noise
                z2 = mu.data + sigma.data * np.asarray(eps, dtype=rssm.dtype)
        return (h2, z2), r.data.astype(np.float64), (maps.reshape(-1, 30, 30), vecs)


class ActorCritic:
    """Planner view of a SAC agent over (maps, vecs) observation batches."""

    def __init__(self, sac):
        self.sac = sac

    def propose(self, obs):
        out = self.sac.act_features(self.sac.features(*obs), "mean")
        return out.action, self.sac.action_std(out)

    def value(self, obs):
        feats = self.sac.features(*obs)
        return self.sac.q_min(feats, self.sac.act_features(feats, "mean").action)


def imagine(model, state, actions, noise=None):
    """Unroll ``model`` from a batch ``state`` under ``actions`` (N, H, 2).

    Returns rewards (N, H) and the final observation batch.
    """
    N, H = actions.shape[:2]
    rewards = np.empty((N, H))
    obs = None
    for k in range(H):
        state, rewards[:, k], obs = model.step(state, actions[:, k], None if noise is None else noise[:, k])
    return rewards, obs


def imagine_rollout(h0, z0, actions, rssm, mode="decode_reencode", noise=None):
    """Single-sequence rollout from an explicit latent ``(h0, z0)``.

    ``actions`` is (H, 2); ``noise`` (H, z_dim) is only used by ``latent_prior``.
    Returns the H rewards and the final decoded observation ``(map, vec)``.
    """
    model = RSSMImagination(rssm, mode)
    state = (np.asarray(h0, dtype=rssm.dtype).reshape(1, -1), np.asarray(z0, dtype=rssm.dtype).reshape(1, -1))
    acts = np.asarray(actions, dtype=np.float64)[None]
    eps = None if noise is None else np.asarray(noise)[None]
    rewards, (maps, vecs) = imagine(model, state, acts, eps)
    return rewards[0], (maps[0], vecs[0])


# -------------------------------------------------------------------- CEM

def init_distribution(obs_batch, policy, model, root, cfg):
    """Actor-seeded Gaussian: the actor mean rolled through imagination, spread floored."""
    H = cfg.horizon
    mu = np.empty((H, 2))
    sigma = np.empty((H, 2))
    state = root
    obs = obs_batch
    for k in range(H):
        mean, std = policy.propose(obs)
        mu[k] = mean[0]
        sigma[k] = std[0]
        if k + 1 < H:
            state, _, obs = model.step(state, mu[k][None], None)
    if cfg.sigma_init is not None:
        sigma[:] = cfg.sigma_init
    sigma = np.maximum(sigma, cfg.sigma_floor)
    if not (np.isfinite(mu).all() and np.isfinite(sigma).all()):
        raise NonFiniteValue("mpfp/init_distribution")
    return CemState(mu, sigma)


def pool_size():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def score_candidates(model, policy, root, candidates, noise, cfg):
    """Returns of every candidate, computed in fixed-size chunks reduced in index order."""
    L = len(candidates)
    bounds = [(lo, min(lo + cfg.chunk, L)) for lo in range(0, L, cfg.chunk)]

    def run(b):
        lo, hi = b
        rewards, final = imagine(model, model.tile(root, hi - lo), candidates[lo:hi],
                                 None if noise is None else noise[lo:hi])
        return score_candidate(rewards, final, policy, cfg.gamma)

    workers = min(pool_size(), len(bounds))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    return np.concatenate(parts)


def plan(obs, model, policy, cfg, h=None, seed=None, obs_batch=None):
    """CEM decision for one observation; returns a :class:`PlanResult`.

    ``seed`` overrides ``cfg.noise_seed``. Candidate noise is drawn once and
    reused by every iteration (common random numbers), and each round's
    elites stay in the selection pool of the next, so the mean elite return
    never decreases. ``obs_batch`` is the
    policy's view of ``obs`` and defaults to ``(map[None], vec[None])``.
    """
    cfg.validate()
    H, L, K = cfg.horizon, cfg.candidates, cfg.elites
    root = model.root(obs, h)
    if obs_batch is None:
        obs_batch = (obs.map[None], obs.vec[None])
    init = init_distribution(obs_batch, policy, model, root, cfg)
    rng = np.random.default_rng(cfg.noise_seed if seed is None else seed)
    eps = rng.standard_normal((L, H, 2))
    znoise = rng.standard_normal((L, H, model.noise_dim)) if model.noise_dim else None
    mu, sigma = init.mu.copy(), init.sigma.copy()
    history = []
    kept = np.zeros((0, H, 2))
    kept_returns = np.zeros(0)
    for _ in range(cfg.iters):
        cand = np.clip(mu + sigma * eps, -cfg.v_max, cfg.v_max)
        returns = score_candidates(model, policy, root, cand, znoise, cfg)
        if not np.isfinite(returns).all():
            raise NonFiniteValue("mpfp/score", f"{int((~np.isfinite(returns)).sum())} candidate returns")
        # last round's elites compete again (after the fresh draws, so ties favour fresh ones)
        pool = np.concatenate([cand, kept])
        pool_returns = np.concatenate([returns, kept_returns])
        order = np.argsort(-pool_returns, kind="stable")[:K]
        kept, kept_returns = pool[order], pool_returns[order]
        history.append(kept_returns)
        mu = kept.mean(axis=0)
        sigma = np.maximum(kept.std(axis=0, ddof=1 if K > 1 else 0), cfg.sigma_floor)
    action = np.clip(mu[0], -cfg.v_max, cfg.v_max)
    return PlanResult(action, CemState(mu, sigma, kept_returns), init, history)


# ----------------------------------------------------------------- filter

class ContextFilter:
    """Recurrent state for planning, rebuilt from the last ``context`` transitions.

    Training windows are short, so the state is recomputed from zero over a
    sliding window instead of being carried across the whole episode.
    """

    def __init__(self, rssm, context=8):
        self.rssm = rssm
        self.context = context
        self.history = deque(maxlen=context)

    def reset(self):
        self.history.clear()

    def push(self, obs, action):
        self.history.append((obs, np.asarray(action, dtype=np.float64)))

    def state(self):
        rssm = self.rssm
        h = rssm.initial_h(1)
        if not self.history:
            return h
        maps = np.stack([o.map for o, _ in self.history])
        vecs = np.stack([o.vec for o, _ in self.history])
        with no_grad():
            z = rssm.encode(maps, vecs)[0].data
            for i, (_, a) in enumerate(self.history):
                h = rssm.dynamics_step(h, z[i:i + 1], a[None]).data
        return h


# ------------------------------------------------------------------ trace

class PlanTrace:
    """Append-only JSONL log of planner decisions."""

    def __init__(self, path):
        self.fh = open(path, "a")

    def write(self, step, result):
        rec = {
            "step": int(step),
            "iteration": list(range(len(result.elite_history))),
            "elite_returns": [[round(float(v), 10) for v in e] for e in result.elite_history],
            "chosen_action": [float(v) for v in result.action],
        }
        self.fh.write(json.dumps(rec) + "\n")

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
