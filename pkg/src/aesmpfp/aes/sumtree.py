"""Array-backed sum tree for proportional sampling of fragments."""

from __future__ import annotations

import numpy as np

from ..errors import EmptyTree


class SumTree:
    """Binary tree over ``capacity`` leaves (a power of two) storing subtree sums.

    Leaves live at ``nodes[capacity - 1:]``; node ``i`` has children
    ``2i + 1`` and ``2i + 2``. Inserts fill slots as a ring buffer. Ancestor
    sums are recomputed from the children on every write, so they never
    drift from the leaves.
    """

    def __init__(self, capacity):
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError(f"capacity must be a power of two, got {capacity}")
        self.capacity = int(capacity)
        self.nodes = np.zeros(2 * self.capacity - 1)
        self.data = [None] * self.capacity
        self.write_cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    @property
    def total(self):
        return float(self.nodes[0])

    def leaves(self):
        return self.nodes[self.capacity - 1:]

    def _set(self, slot, priority):
        p = float(priority)
        if not np.isfinite(p) or p < 0:
            raise ValueError(f"priority must be finite and >= 0, got {priority}")
        i = slot + self.capacity - 1
        self.nodes[i] = p
        while i > 0:
            i = (i - 1) // 2
            self.nodes[i] = self.nodes[2 * i + 1] + self.nodes[2 * i + 2]

    def insert(self, item, priority):
        """Store ``item`` at the write cursor (overwriting the oldest); returns its slot."""
        slot = self.write_cursor
        self.data[slot] = item
        self._set(slot, priority)
        self.write_cursor = (slot + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return slot

    def update(self, slot, priority):
        if not 0 <= slot < self.capacity:
            raise IndexError(f"slot {slot} out of range")
        self._set(slot, priority)

    def find(self, u):
        """Slot whose cumulative interval contains ``u``."""
        total = self.total
        if total <= 0.0:
            raise EmptyTree("cannot sample from a tree with zero total priority")
        if not 0.0 <= u < total:
            raise ValueError(f"u={u} outside [0, {total})")
        i = 0
        nodes = self.nodes
        while i < self.capacity - 1:
            left = 2 * i + 1
            if u < nodes[left] or nodes[left + 1] <= 0.0:
                i = left
            else:
                u -= nodes[left]
                i = left + 1
        return i - (self.capacity - 1)

    def sample(self, u):
        slot = self.find(u)
        return slot, self.data[slot]

    def find_many(self, us):
        """Vectorized :meth:`find` over an array of prefix values."""
        if self.total <= 0.0:
            raise EmptyTree("cannot sample from a tree with zero total priority")
        u = np.array(us, dtype=np.float64)
        idx = np.zeros(u.shape, dtype=np.int64)
        nodes = self.nodes
        for _ in range(self.capacity.bit_length() - 1):
            left = 2 * idx + 1
            lv = nodes[left]
            go_left = (u < lv) | (nodes[left + 1] <= 0.0)
            u = np.where(go_left, u, u - lv)
            idx = np.where(go_left, left, left + 1)
        return idx - (self.capacity - 1)

    def sample_batch(self, rng, n):
        """``n`` slots drawn independently with probability priority / total."""
        return self.find_many(rng.uniform(0.0, self.total, size=n))
