"""Feature-space distance and Local Outlier Factor over observation sequences.

The distance between two observations combines the L1 difference of their
occupancy maps with a cosine dissimilarity of their state vectors::

    d(a, b) = |m_b - m_a|_1 + lam * (1 - cos(v_a, v_b))

LOF follows the classic k-distance construction: neighborhoods include every
point within the k-th nearest distance (ties kept), reachability distance is
``max(k_dist(j), d(i, j))``, local reachability density is the inverse mean
reachability distance, and LOF is the mean density ratio to the neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateDensity, ZeroVector

# LRD assigned to points whose neighborhood collapses onto them (mean reach 0)
LRD_SENTINEL = 1e300


@dataclass
class FeaturePoint:
    map_flat: np.ndarray
    vec: np.ndarray

    @classmethod
    def from_observation(cls, obs):
        return cls(np.asarray(obs.map, dtype=np.float64).reshape(-1), np.asarray(obs.vec, dtype=np.float64))


def feature_distance(a, b, lam=1.0):
    """Distance between two :class:`FeaturePoint`; raises :class:`ZeroVector` on a zero state vector."""
    na = float(np.linalg.norm(a.vec))
    nb = float(np.linalg.norm(b.vec))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine term undefined for a zero state vector")
    l1 = float(np.abs(np.asarray(b.map_flat, np.float64) - np.asarray(a.map_flat, np.float64)).sum())
    ua = a.vec / na
    ub = b.vec / nb
    diff = ua - ub
    return l1 + lam * 0.5 * float(diff @ diff)


def _unit_rows(vecs):
    """Row-normalize; zero rows stay zero and are flagged."""
    norms = np.linalg.norm(vecs, axis=1)
    zero = norms == 0.0
    units = vecs / np.where(zero, 1.0, norms)[:, None]
    return units, zero


def pairwise_distances(maps, vecs, lam=1.0):
    """All-pairs feature distances for ``maps`` (n, M) and ``vecs`` (n, V).

    Zero state vectors follow the substitution convention: the cosine term is
    0 between two zero vectors and 1 between a zero and a nonzero vector.
    """
    maps = np.asarray(maps, dtype=np.float64).reshape(len(maps), -1)
    vecs = np.asarray(vecs, dtype=np.float64)
    n = maps.shape[0]
    l1 = np.empty((n, n))
    for i in range(n):
        l1[i] = np.abs(maps - maps[i]).sum(axis=1)
    units, zero = _unit_rows(vecs)
    sq = ((units[:, None, :] - units[None, :, :]) ** 2).sum(axis=2)
    cos_term = 0.5 * sq
    if zero.any():
        both = zero[:, None] & zero[None, :]
        one = zero[:, None] ^ zero[None, :]
        cos_term = np.where(both, 0.0, np.where(one, 1.0, cos_term))
    d = l1 + lam * cos_term
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def lof_from_distances(dist, k, on_degenerate="sentinel"):
    """LOF scores from a symmetric distance matrix with zero diagonal."""
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"LOF needs 1 <= k < n, got k={k}, n={n}")
    off = dist.copy()
    np.fill_diagonal(off, np.inf)
    kdist = np.partition(off, k - 1, axis=1)[:, k - 1]
    neigh = off <= kdist[:, None]
    reach = np.maximum(kdist[None, :], dist)
    counts = neigh.sum(axis=1)
    mean_reach = np.where(neigh, reach, 0.0).sum(axis=1) / counts
    degenerate = mean_reach == 0.0
    if degenerate.any() and on_degenerate == "raise":
        raise DegenerateDensity(f"{int(degenerate.sum())} point(s) have all-zero neighborhood distances")
    lrd = np.where(degenerate, LRD_SENTINEL, 1.0 / np.where(degenerate, 1.0, mean_reach))
    ratio = np.where(neigh, lrd[None, :] / lrd[:, None], 0.0)
    lof = ratio.sum(axis=1) / counts
    return np.where(degenerate, 1.0, lof)


def lof_scores(points, k=10, lam=1.0, on_degenerate="sentinel"):
    """LOF for each :class:`FeaturePoint` in ``points``, aligned with input order."""
    maps = np.stack([np.asarray(p.map_flat, np.float64).reshape(-1) for p in points])
    vecs = np.stack([np.asarray(p.vec, np.float64) for p in points])
    return lof_from_distances(pairwise_distances(maps, vecs, lam), k, on_degenerate)
