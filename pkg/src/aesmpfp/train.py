"""Training, evaluation and the ablation grid.

One training run interleaves, per environment step: an action from the
planner (or the raw actor), one SAC update on uniformly drawn transitions,
and every ``rssm_every`` steps one world-model update on a batch of
fragments. At each episode end the episode is scored, its best windows go
into the fragment sum tree, and the world-model losses of every sampled
fragment are written back as fresh prediction-error priorities.

All randomness flows from the run seed through independent named streams,
so (config, seed) fixes every emitted byte. Metrics files carry no
timestamps.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aes import FragmentBuffer, TransitionRing, compute_priority_arrays, extract_fragments
from .config import PRESETS, apply_preset, dumps_config, lr_schedule
from .envsim import DoneReason, EnvConfig, MMEnv, episode_metrics, load_scenario
from .errors import CheckpointError, NonFiniteValue
from .features import FEATURE_DIM
from .mpfp import ActorCritic, ContextFilter, PlanConfig, PlanTrace, RSSMImagination, horizon_schedule, plan
from .nnmath import checkpoint as ckpt
from .rssm import RSSM, RSSMConfig
from .sac import SAC, SACConfig

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.ckpt"
CURVE_NAME = "curve.jsonl"
REPORT_NAME = "eval.json"
TABLE_FIELDS = ("preset", "aikf_mean", "aikf_sd", "abc_mean", "abc_sd", "tcr", "psr", "train_tcr")

# stream tags for SeedSequence([seed, tag, ...])
_TRAIN_ENV, _EVAL_ENV, _PLAN, _SAC, _RSSM, _ACT, _INIT = range(7)


def episode_seed(seed, tag, index):
    """Environment reset seed for episode ``index`` of a run."""
    return int(np.random.SeedSequence([seed, tag, index]).generate_state(1, np.uint64)[0] >> 1)


def _stream(seed, tag):
    return np.random.default_rng([seed, tag])


# ------------------------------------------------------------------ agent

@dataclass
class Agent:
    sac: SAC
    rssm: RSSM
    dims: tuple

    @classmethod
    def build(cls, cfg, seed):
        rng = _stream(seed, _INIT)
        sac = SAC(SACConfig(hidden=cfg.sac_hidden, batch_size=cfg.sac_batch, gamma=cfg.gamma), rng=rng)
        rssm = RSSM(RSSMConfig(h_dim=cfg.rssm_h_dim, z_dim=cfg.rssm_z_dim, hidden=cfg.rssm_hidden), rng=rng)
        return cls(sac, rssm, agent_dims(cfg))

    def blocks(self):
        out = {"meta/dims": np.asarray(self.dims, dtype=np.float32)}
        out.update(self.sac.blocks())
        out.update(self.rssm.blocks())
        return out

    def save(self, path):
        ckpt.save(path, self.blocks())

    @classmethod
    def load(cls, path, cfg):
        try:
            blocks = ckpt.load(path)
        except OSError as e:
            raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
        want = agent_dims(cfg)
        got = tuple(int(v) for v in blocks.get("meta/dims", np.zeros(0)))
        if got != want:
            raise CheckpointError(f"checkpoint network sizes {got} do not match the config's {want}")
        agent = cls.build(cfg, 0)
        agent.sac.restore(blocks)
        agent.rssm.restore(blocks)
        return agent


def agent_dims(cfg):
    return (FEATURE_DIM, cfg.sac_hidden, cfg.rssm_hidden, cfg.rssm_h_dim, cfg.rssm_z_dim)


def plan_config(cfg, horizon):
    return PlanConfig(horizon=horizon, candidates=cfg.candidates, elites=cfg.elites, iters=cfg.cem_iters,
                      gamma=cfg.gamma, sigma_floor=cfg.sigma_floor, mode=cfg.imagination)


class Controller:
    """Chooses actions for one episode at a time: planner or raw actor."""

    def __init__(self, agent, cfg, use_planner, seed, trace=None):
        self.agent = agent
        self.cfg = cfg
        self.use_planner = use_planner
        self.seed = seed
        self.trace = trace
        self.model = RSSMImagination(agent.rssm, cfg.imagination)
        self.policy = ActorCritic(agent.sac)
        self.filter = ContextFilter(agent.rssm, cfg.context)
        self.calls = 0

    def reset(self):
        self.filter.reset()

    def observe(self, obs, action):
        self.filter.push(obs, action)

    def act(self, obs, horizon):
        """Planner decision, or the actor's mean action when planning is off."""
        if not self.use_planner:
            return self.agent.sac.act(obs, "mean")[0]
        res = plan(obs, self.model, self.policy, plan_config(self.cfg, horizon), h=self.filter.state(),
                   seed=[self.seed, _PLAN, self.calls])
        if self.trace is not None:
            self.trace.write(self.calls, res)
        self.calls += 1
        return res.action


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    checkpoint: Path
    curve_path: Path
    curve: list = field(default_factory=list)

    @property
    def final_tcr(self):
        return self.curve[-1]["tcr"] if self.curve else 0.0


def _jsonl(fh, rec):
    fh.write(json.dumps(rec, sort_keys=True) + "\n")


def train(cfg, seed, out_dir):
    """One seeded training run; writes the checkpoint, curve and config into ``out_dir``."""
    cfg.validate()
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dumps_config(cfg))
    scenario = load_scenario(cfg.scenario)
    env = MMEnv(scenario, EnvConfig())
    v_max = env.config.v_max
    agent = Agent.build(cfg, seed)
    sac, rssm = agent.sac, agent.rssm
    act_rng, sac_rng, rssm_rng = _stream(seed, _ACT), _stream(seed, _SAC), _stream(seed, _RSSM)
    ring = TransitionRing(cfg.buffer_capacity)
    frags = FragmentBuffer(cfg.fragment_capacity, cfg.weights)
    ctl = Controller(agent, cfg, not cfg.mpfp_off_train, seed)

    curve, flags = [], []
    curve_path = out / CURVE_NAME
    episode = 0
    obs = env.reset(episode_seed(seed, _TRAIN_ENV, episode))
    ctl.reset()
    ep_return, sac_stats, rssm_stats = 0.0, [], []
    with open(curve_path, "w") as fh:
        for step in range(cfg.total_steps):
            lr = lr_schedule(step, cfg.total_steps, cfg.lr_start, cfg.lr_end)
            try:
                if step < cfg.warmup_steps:
                    action = act_rng.uniform(-v_max, v_max, 2)
                elif cfg.mpfp_off_train:
                    action = sac.act(obs, "sample", act_rng)[0]
                else:
                    action = ctl.act(obs, horizon_schedule(step, cfg.total_steps, cfg.h_min, cfg.h_max))
                    action = np.clip(action + cfg.explore_std * act_rng.standard_normal(2), -v_max, v_max)
                res = env.step(action)
                terminal = res.done and res.done_reason != DoneReason.TIMEOUT
                ring.add(obs, action, res.reward, res.obs, terminal, res.ik_failure, episode)
                ctl.observe(obs, action)
                ep_return += res.reward
                obs = res.obs

                if step >= cfg.warmup_steps:
                    batch = ring.batch(ring.sample_indices(sac_rng, cfg.sac_batch))
                    sac_stats.append(sac.update(batch, sac_rng, lr)["critic_loss"])
                    if step % cfg.rssm_every == 0:
                        loss = _rssm_update(rssm, ring, frags, cfg, rssm_rng, lr)
                        if loss is not None:
                            rssm_stats.append(loss)

                if res.done:
                    ep = ring.end_episode()
                    if not cfg.uniform_sampling:
                        _insert_fragments(ep, rssm, frags, cfg)
                    m = episode_metrics(env.log)
                    flags.append(m.tcr_flag)
                    recent = flags[-cfg.tcr_window:]
                    rec = {"step": step + 1, "episode": episode, "return": ep_return, "length": len(ep),
                           "tcr": sum(recent) / len(recent), "fragments": len(frags), **m.as_dict(),
                           "critic_loss": float(np.mean(sac_stats)) if sac_stats else None,
                           "rssm_loss": float(np.mean(rssm_stats)) if rssm_stats else None}
                    curve.append(rec)
                    _jsonl(fh, rec)
                    episode += 1
                    obs = env.reset(episode_seed(seed, _TRAIN_ENV, episode))
                    ctl.reset()
                    ep_return, sac_stats, rssm_stats = 0.0, [], []
            except NonFiniteValue as e:
                raise NonFiniteValue(e.where, f"at training step {step}") from e

            if (step + 1) % cfg.checkpoint_every == 0:
                agent.save(out / "checkpoints" / f"step_{step + 1:08d}.ckpt")
                log.info("seed %d step %d episodes %d tcr %.3f", seed, step + 1, episode,
                         curve[-1]["tcr"] if curve else 0.0)
    path = out / CHECKPOINT_NAME
    agent.save(path)
    return TrainResult(path, curve_path, curve)


def _rssm_update(rssm, ring, frags, cfg, rng, lr):
    if cfg.uniform_sampling or len(frags) == 0:
        batch = ring.sample_windows(rng, cfg.rssm_batch, cfg.window)
        prioritized = False
    else:
        batch = frags.sample(rng, cfg.rssm_batch)
        prioritized = True
    if not batch:
        return None
    losses, stats = rssm.train_step(batch, rng, lr)
    if prioritized:
        for frag, (offset, per) in zip(batch, losses):
            frags.write_back(frag, per, offset)
    return stats["loss"]


def _insert_fragments(ep, rssm, frags, cfg):
    sig, peak = compute_priority_arrays(ep, rssm.episode_losses(ep), cfg.weights, cfg.lof_k, cfg.lof_lambda,
                                        cfg.p_tc)
    for f in extract_fragments(ep, sig, cfg.window, cfg.max_fragments):
        frags.add(f, peak)


# -------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    records: list
    aggregates: dict

    def to_json(self):
        return json.dumps({"records": self.records, "aggregates": self.aggregates}, sort_keys=True, indent=1)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        return cls(doc["records"], doc["aggregates"])

    @classmethod
    def from_records(cls, records):
        return cls(list(records), aggregate(records))

    def merge(self, other):
        return EvalReport.from_records(self.records + other.records)


def _mean_sd(values):
    # population sd over episodes x seeds; plain Python sums keep it reproducible from the records
    n = len(values)
    if n == 0:
        return 0.0, 0.0
    mean = math.fsum(values) / n
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)


def aggregate(records):
    """AIKF / ABC mean and sd, TCR and PSR in percent."""
    aikf = _mean_sd([r["aikf"] for r in records])
    abc = _mean_sd([r["abc"] for r in records])
    n = max(len(records), 1)
    return {
        "episodes": len(records),
        "aikf_mean": aikf[0], "aikf_sd": aikf[1],
        "abc_mean": abc[0], "abc_sd": abc[1],
        "tcr": 100.0 * sum(r["tcr_flag"] for r in records) / n,
        "psr": 100.0 * sum(r["psr_flag"] for r in records) / n,
    }


def evaluate(agent, cfg, episodes=None, seed=0, trace_path=None):
    """Roll out ``episodes`` evaluation episodes with the planner at full horizon, or the raw actor.

    ``agent`` is an :class:`Agent` or a checkpoint path. The scenario comes
    from ``cfg``, so pointing it at another layout is the generalization
    protocol.
    """
    cfg.validate()
    if not isinstance(agent, Agent):
        agent = Agent.load(agent, cfg)
    n = cfg.eval_episodes if episodes is None else int(episodes)
    env = MMEnv(load_scenario(cfg.scenario), EnvConfig())
    trace = PlanTrace(trace_path) if trace_path is not None else None
    ctl = Controller(agent, cfg, not cfg.mpfp_off_eval, seed + (1 << 20), trace)
    h = horizon_schedule(0, cfg.total_steps, cfg.h_min, cfg.h_max, evaluation=True)
    records = []
    try:
        for i in range(n):
            obs = env.reset(episode_seed(seed, _EVAL_ENV, i))
            ctl.reset()
            total, done = 0.0, False
            while not done:
                action = ctl.act(obs, h)
                res = env.step(action)
                ctl.observe(obs, action)
                total += res.reward
                obs, done = res.obs, res.done
            m = episode_metrics(env.log)
            records.append({"seed": seed, "episode": i, "return": total, "length": len(env.log), **m.as_dict()})
    finally:
        if trace is not None:
            trace.close()
    return EvalReport.from_records(records)


# ---------------------------------------------------------------- ablation

def ablation_suite(cfg, out_dir, presets=PRESETS, episodes=None):
    """Train and evaluate every preset over ``cfg.seeds``; writes ``ablation.csv`` and returns its rows.

    ``mpfp_off_eval`` trains exactly like ``full``, so it reuses those
    checkpoints and differs only at evaluation.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trained = {}
    rows = []
    for name in presets:
        pc = apply_preset(cfg, name)
        train_key = "full" if name == "mpfp_off_eval" else name
        report, tcrs = None, []
        (out / name).mkdir(parents=True, exist_ok=True)
        for seed in cfg.seeds:
            if (train_key, seed) not in trained:
                run_dir = out / train_key / f"seed_{seed}"
                trained[train_key, seed] = train(apply_preset(cfg, train_key), seed, run_dir)
            result = trained[train_key, seed]
            tcrs.append(result.final_tcr)
            rep = evaluate(result.checkpoint, pc, episodes, seed)
            rep.save(out / name / f"eval_seed_{seed}.json")
            report = rep if report is None else report.merge(rep)
        report.save(out / name / REPORT_NAME)
        agg = report.aggregates
        rows.append({"preset": name, **{k: agg[k] for k in TABLE_FIELDS[1:-1]},
                     "train_tcr": float(np.median(tcrs))})
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return rows

