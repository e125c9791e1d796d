"""Shared experience storage.

:class:`TransitionRing` is the single experience buffer: SAC samples it
uniformly and, with prioritization disabled, RSSM windows are drawn from it
uniformly over transitions. :class:`FragmentBuffer` owns the sum tree of
AES-selected fragments and the per-episode loss scale used to normalize the
prediction-error signal when RSSM losses are written back.

Buffer snapshot layout (little-endian)::

    magic   8s  b"AESBUF\\x00\\x01"
    version u32
    capacity u32, fragment_count u32, write_cursor u32, size u32
    leaf priorities f64[capacity]
    loss-scale table: u32 count, then (episode_id i64, max f64) pairs
    fragment_count records: slot u32, start_index u32, episode_id i64,
        total_priority f64, then arrays (episode fields, then signal fields)
"""

from __future__ import annotations

import io
import struct
from collections import deque
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .episode import EPISODE_FIELDS, Episode, EpisodeFragment
from .priority import composite_priority
from .sumtree import SumTree

SNAPSHOT_MAGIC = b"AESBUF\x00\x01"
SNAPSHOT_VERSION = 1
SIGNAL_FIELDS = ("p_ice", "p_tc", "ik_flag", "p_per", "p_total")
# keeps a fragment drawable when all of its signals are zero
PRIORITY_EPS = 1e-6

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("u1"), 2: np.dtype("?"), 3: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class TransitionRing:
    """Fixed-capacity ring of transitions with episode bookkeeping."""

    def __init__(self, capacity, map_shape=(30, 30), vec_dim=14, act_dim=2):
        self.capacity = int(capacity)
        c = self.capacity
        self.maps = np.zeros((c, *map_shape), dtype=np.uint8)
        self.vecs = np.zeros((c, vec_dim))
        self.actions = np.zeros((c, act_dim))
        self.rewards = np.zeros(c)
        self.next_maps = np.zeros((c, *map_shape), dtype=np.uint8)
        self.next_vecs = np.zeros((c, vec_dim))
        self.terminal = np.zeros(c, dtype=bool)
        self.ik_failure = np.zeros(c, dtype=bool)
        self.episode_ids = np.full(c, -1, dtype=np.int64)
        self.written = 0
        self._open_start = 0
        self._open_id = None
        self._episodes = deque()  # (episode_id, first global index, length)

    def __len__(self):
        return min(self.written, self.capacity)

    def add(self, obs, action, reward, next_obs, terminal, ik_failure, episode_id):
        if self._open_id is None:
            self._open_id, self._open_start = int(episode_id), self.written
        elif self._open_id != episode_id:
            raise ValueError("close the current episode before adding another")
        i = self.written % self.capacity
        self.maps[i] = obs.map
        self.vecs[i] = obs.vec
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_maps[i] = next_obs.map
        self.next_vecs[i] = next_obs.vec
        self.terminal[i] = terminal
        self.ik_failure[i] = ik_failure
        self.episode_ids[i] = episode_id
        self.written += 1

    def end_episode(self):
        """Close the open episode and return it as an :class:`Episode` copy."""
        if self._open_id is None:
            raise ValueError("no open episode")
        start, n = self._open_start, self.written - self._open_start
        self._episodes.append((self._open_id, start, n))
        ep = self._gather(start, n, self._open_id)
        self._open_id = None
        self._evict()
        return ep

    def _evict(self):
        while self._episodes and self._episodes[0][1] < self.written - self.capacity:
            self._episodes.popleft()

    def _gather(self, start, n, episode_id):
        idx = (start + np.arange(n)) % self.capacity
        parts = {k: np.array(getattr(self, k)[idx]) for k in EPISODE_FIELDS}
        return Episode(**parts, episode_id=int(episode_id))

    def sample_indices(self, rng, n):
        return rng.integers(0, len(self), size=n)

    def batch(self, idx):
        return {k: getattr(self, k)[idx] for k in EPISODE_FIELDS}

    def sample_windows(self, rng, n, window):
        """``n`` windows from closed episodes, anchored on uniformly drawn transitions.

        Each window contains its anchor transition; its start is uniform among
        the legal starts that do.
        """
        self._evict()
        if not self._episodes:
            return []
        lengths = np.array([e[2] for e in self._episodes])
        cum = np.cumsum(lengths)
        anchors = rng.integers(0, cum[-1], size=n)
        out = []
        for a in anchors:
            j = int(np.searchsorted(cum, a, side="right"))
            ep_id, first, length = self._episodes[j]
            pos = int(a - (cum[j] - length))
            lo = max(0, pos - window + 1)
            hi = max(0, min(pos, length - window))
            s = int(rng.integers(lo, hi + 1)) if hi >= lo else 0
            w = min(window, length)
            out.append(EpisodeFragment(self._gather(first + s, w, ep_id), s, 0.0))
        return out


class FragmentBuffer:
    """Sum tree of fragments plus the per-episode loss scale for write-back."""

    def __init__(self, capacity=8192, weights=(1.0, 1.0, 1.0)):
        self.tree = SumTree(capacity)
        self.weights = tuple(float(w) for w in weights)
        self.loss_scale = {}

    def __len__(self):
        return len(self.tree)

    @staticmethod
    def tree_priority(fragment):
        return fragment.total_priority + PRIORITY_EPS

    def add(self, fragment, loss_scale=None):
        old = self.tree.data[self.tree.write_cursor]
        if old is not None:
            old.slot = None
        fragment.slot = self.tree.insert(fragment, self.tree_priority(fragment))
        if loss_scale is not None:
            ep = fragment.transitions.episode_id
            self.loss_scale[ep] = max(self.loss_scale.get(ep, 0.0), float(loss_scale))
        self._prune_scales()
        return fragment.slot

    def _prune_scales(self):
        if len(self.loss_scale) > 4 * self.tree.capacity:
            live = {f.transitions.episode_id for f in self.tree.data if f is not None}
            self.loss_scale = {k: v for k, v in self.loss_scale.items() if k in live}

    def sample(self, rng, n):
        slots = self.tree.sample_batch(rng, n)
        return [self.tree.data[s] for s in slots]

    def write_back(self, fragment, losses, offset=0):
        """Refresh prediction-error priorities from new per-transition RSSM losses.

        ``losses`` cover transitions ``offset .. offset + len(losses)`` of the
        fragment. They are normalized by the episode's running maximum.
        """
        if fragment.slot is None or self.tree.data[fragment.slot] is not fragment:
            return
        losses = np.asarray(losses, dtype=np.float64)
        ep = fragment.transitions.episode_id
        peak = max(self.loss_scale.get(ep, 0.0), float(losses.max()) if losses.size else 0.0)
        self.loss_scale[ep] = peak
        sig = fragment.signals
        if peak > 0:
            sig["p_per"][offset:offset + losses.size] = losses / peak
        sig["p_total"] = np.atleast_1d(composite_priority(sig["p_ice"], sig["p_tc"], sig["ik_flag"],
                                                          sig["p_per"], self.weights))
        fragment.total_priority = float(sig["p_total"].sum())
        self.tree.update(fragment.slot, self.tree_priority(fragment))

    # --------------------------------------------------------------- snapshot

    def dumps(self):
        buf = io.BytesIO()
        frags = [f for f in self.tree.data if f is not None]
        t = self.tree
        buf.write(SNAPSHOT_MAGIC)
        buf.write(struct.pack("<IIIII", SNAPSHOT_VERSION, t.capacity, len(frags), t.write_cursor, t.size))
        buf.write(t.leaves().astype("<f8").tobytes())
        buf.write(struct.pack("<I", len(self.loss_scale)))
        for k in sorted(self.loss_scale):
            buf.write(struct.pack("<qd", int(k), self.loss_scale[k]))
        for f in frags:
            buf.write(struct.pack("<IIqd", f.slot, f.start_index, f.transitions.episode_id, f.total_priority))
            for k in EPISODE_FIELDS:
                _write_array(buf, getattr(f.transitions, k))
            for k in SIGNAL_FIELDS:
                _write_array(buf, f.signals[k])
        return buf.getvalue()

    @classmethod
    def loads(cls, blob, weights=(1.0, 1.0, 1.0)):
        r = _Reader(blob)
        if r.take(8) != SNAPSHOT_MAGIC:
            raise CheckpointError("not a buffer snapshot (bad magic)")
        version, capacity, count, cursor, size = r.unpack("<IIIII")
        if version != SNAPSHOT_VERSION:
            raise CheckpointError(f"unsupported buffer snapshot version {version}")
        out = cls(capacity, weights)
        leaves = np.frombuffer(r.take(8 * capacity), dtype="<f8")
        for _ in range(r.unpack("<I")[0]):
            k, v = r.unpack("<qd")
            out.loss_scale[k] = v
        for _ in range(count):
            slot, start, ep_id, total = r.unpack("<IIqd")
            parts = {k: r.array() for k in EPISODE_FIELDS}
            sig = {k: r.array() for k in SIGNAL_FIELDS}
            frag = EpisodeFragment(Episode(**parts, episode_id=int(ep_id)), int(start), float(total), sig, int(slot))
            out.tree.data[slot] = frag
        if not r.done():
            raise CheckpointError("trailing bytes in buffer snapshot")
        for slot, p in enumerate(leaves):
            out.tree.update(slot, float(p))
        out.tree.write_cursor, out.tree.size = int(cursor), int(size)
        return out

    def save(self, path):
        Path(path).write_bytes(self.dumps())

    @classmethod
    def load(cls, path, weights=(1.0, 1.0, 1.0)):
        return cls.loads(Path(path).read_bytes(), weights)


def _write_array(buf, a):
    a = np.asarray(a)
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
    if dt not in _CODES:
        a = a.astype("<f8")
        dt = a.dtype
    buf.write(struct.pack("<BB", _CODES[dt], a.ndim))
    buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.write(np.ascontiguousarray(a, dtype=dt).tobytes())


class _Reader:
    def __init__(self, blob):
        self.blob = memoryview(blob)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated buffer snapshot")
        out = bytes(self.blob[self.pos:self.pos + n])
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self):
        code, ndim = self.unpack("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"unknown array dtype code {code}")
        shape = self.unpack(f"<{ndim}I") if ndim else ()
        dt = _DTYPES[code]
        n = int(np.prod(shape)) if ndim else 1
        return np.frombuffer(self.take(n * dt.itemsize), dtype=dt).reshape(shape).copy()

    def done(self):
        return self.pos == len(self.blob)
