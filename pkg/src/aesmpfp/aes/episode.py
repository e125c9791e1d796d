"""Episode and fragment containers shared by the buffer, RSSM and learners."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPISODE_FIELDS = ("maps", "vecs", "actions", "rewards", "next_maps", "next_vecs", "terminal", "ik_failure")


@dataclass
class Episode:
    """T consecutive transitions of one episode, stored column-wise.

    ``maps``/``next_maps`` are uint8 occupancy grids (T, 30, 30); ``terminal``
    marks transitions after which the value must not be bootstrapped.
    """

    maps: np.ndarray
    vecs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_maps: np.ndarray
    next_vecs: np.ndarray
    terminal: np.ndarray
    ik_failure: np.ndarray
    episode_id: int = 0

    def __len__(self):
        return int(self.actions.shape[0])

    def window(self, start, stop):
        parts = {k: np.array(getattr(self, k)[start:stop]) for k in EPISODE_FIELDS}
        return Episode(**parts, episode_id=self.episode_id)

    def observation_sequence(self):
        """Maps (T+1, 30, 30) and vecs (T+1, V): the first observation then every next one."""
        maps = np.concatenate([self.maps[:1], self.next_maps], axis=0)
        vecs = np.concatenate([self.vecs[:1], self.next_vecs], axis=0)
        return maps, vecs


class EpisodeRecorder:
    """Accumulates env steps into an :class:`Episode`."""

    def __init__(self, episode_id=0):
        self.episode_id = episode_id
        self._rows = {k: [] for k in EPISODE_FIELDS}

    def __len__(self):
        return len(self._rows["actions"])

    def add(self, obs, action, reward, next_obs, terminal, ik_failure):
        r = self._rows
        r["maps"].append(np.asarray(obs.map, dtype=np.uint8))
        r["vecs"].append(np.asarray(obs.vec, dtype=np.float64))
        r["actions"].append(np.asarray(action, dtype=np.float64))
        r["rewards"].append(float(reward))
        r["next_maps"].append(np.asarray(next_obs.map, dtype=np.uint8))
        r["next_vecs"].append(np.asarray(next_obs.vec, dtype=np.float64))
        r["terminal"].append(bool(terminal))
        r["ik_failure"].append(bool(ik_failure))

    def finish(self):
        r = self._rows
        return Episode(
            maps=np.stack(r["maps"]), vecs=np.stack(r["vecs"]), actions=np.stack(r["actions"]),
            rewards=np.asarray(r["rewards"]), next_maps=np.stack(r["next_maps"]),
            next_vecs=np.stack(r["next_vecs"]), terminal=np.asarray(r["terminal"]),
            ik_failure=np.asarray(r["ik_failure"]), episode_id=self.episode_id,
        )


@dataclass
class EpisodeFragment:
    """Window of consecutive transitions plus the priority signals it was chosen by."""

    transitions: Episode
    start_index: int
    total_priority: float
    signals: dict = field(default_factory=dict)  # arrays p_ice, p_tc, ik_flag, p_per, p_total
    slot: int | None = None

    def __len__(self):
        return len(self.transitions)
