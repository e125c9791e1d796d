"""Per-transition priorities and greedy fragment selection.

Each transition gets three signals: the LOF of the observation it produced
(outlierness), a fixed bonus when it ended in an IK failure (task
criticality), and the RSSM loss on it normalized by the episode's running
maximum (prediction error). They combine as::

    p_total = w1 * max(0, p_ice - 1) + w2 * p_tc * ik_flag + w3 * p_per

The hinge means only observations that are less dense than their
neighbors (LOF > 1) contribute outlier priority.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episode import EpisodeFragment
from .lof import lof_from_distances, pairwise_distances

DEFAULT_K = 10
DEFAULT_LAMBDA = 1.0
DEFAULT_P_TC = 1.0
DEFAULT_WINDOW = 16
DEFAULT_MAX_FRAGMENTS = 4


@dataclass(frozen=True)
class PrioritySignals:
    p_ice: float
    p_tc: float
    ik_flag: bool
    p_per: float
    p_total: float


def composite_priority(p_ice, p_tc, ik_flag, p_per, weights=(1.0, 1.0, 1.0)):
    """Weighted sum of the three signals; works on scalars or aligned arrays."""
    w1, w2, w3 = weights
    hinge = np.maximum(0.0, np.asarray(p_ice, dtype=np.float64) - 1.0)
    gate = np.asarray(ik_flag, dtype=np.float64)
    out = w1 * hinge + w2 * np.asarray(p_tc, dtype=np.float64) * gate + w3 * np.asarray(p_per, dtype=np.float64)
    return float(out) if np.ndim(out) == 0 else out


def normalize_losses(losses, running_max=0.0):
    """Scale losses into [0, 1] by ``max(running_max, max(losses))``; returns (scaled, new_max)."""
    losses = np.asarray(losses, dtype=np.float64)
    peak = max(float(running_max), float(losses.max()) if losses.size else 0.0)
    if peak <= 0.0:
        return np.zeros_like(losses), peak
    return losses / peak, peak


def episode_lof(episode, k=DEFAULT_K, lam=DEFAULT_LAMBDA):
    """LOF of each transition's resulting observation within its episode.

    Episodes with at most ``k`` transitions use ``k = T - 1``; a single
    transition has no neighbors and scores 1 (inlier).
    """
    n = len(episode)
    if n < 2:
        return np.ones(n)
    maps = episode.next_maps.reshape(n, -1)
    dist = pairwise_distances(maps, episode.next_vecs, lam)
    return lof_from_distances(dist, min(k, n - 1))


def compute_priority_arrays(episode, rssm_losses, weights=(1.0, 1.0, 1.0), k=DEFAULT_K,
                            lam=DEFAULT_LAMBDA, p_tc_value=DEFAULT_P_TC, p_ice=None):
    """Array form of :func:`compute_priorities`; returns (signals dict, running loss max)."""
    losses = np.asarray(rssm_losses, dtype=np.float64)
    if losses.shape != (len(episode),):
        raise ValueError(f"need one loss per transition ({len(episode)}), got shape {losses.shape}")
    if any(w < 0 for w in weights):
        raise ValueError("priority weights must be nonnegative")
    if p_ice is None:
        p_ice = episode_lof(episode, k, lam) if weights[0] > 0 else np.ones(len(episode))
    ik = np.asarray(episode.ik_failure, dtype=bool)
    p_tc = np.full(len(episode), float(p_tc_value))
    p_per, peak = normalize_losses(losses)
    total = composite_priority(p_ice, p_tc, ik, p_per, weights)
    sig = {"p_ice": np.asarray(p_ice, dtype=np.float64), "p_tc": p_tc, "ik_flag": ik,
           "p_per": p_per, "p_total": np.atleast_1d(total)}
    return sig, peak


def compute_priorities(episode, rssm_losses, weights=(1.0, 1.0, 1.0), k=DEFAULT_K,
                       lam=DEFAULT_LAMBDA, p_tc_value=DEFAULT_P_TC):
    """One :class:`PrioritySignals` per transition of ``episode``."""
    sig, _ = compute_priority_arrays(episode, rssm_losses, weights, k, lam, p_tc_value)
    return [
        PrioritySignals(float(a), float(b), bool(c), float(d), float(e))
        for a, b, c, d, e in zip(sig["p_ice"], sig["p_tc"], sig["ik_flag"], sig["p_per"], sig["p_total"])
    ]


def select_windows(p_total, window=DEFAULT_WINDOW, max_fragments=DEFAULT_MAX_FRAGMENTS):
    """Start indices of greedily chosen non-overlapping windows, best first.

    Windows are ranked by summed priority, ties going to the earlier start.
    A sequence shorter than ``window`` yields the single start 0.
    """
    p = np.asarray(p_total, dtype=np.float64)
    n = p.shape[0]
    if window < 1:
        raise ValueError("window must be >= 1")
    if n <= window:
        return [0] if n > 0 else []
    scores = np.lib.stride_tricks.sliding_window_view(p, window).sum(axis=1)
    # stable sort on -score keeps earlier starts first among equal scores
    order = np.argsort(-scores, kind="stable")
    taken = np.zeros(n, dtype=bool)
    starts = []
    for s in order:
        if len(starts) >= max_fragments:
            break
        if not taken[s:s + window].any():
            taken[s:s + window] = True
            starts.append(int(s))
    return starts


def extract_fragments(episode, signals, window=DEFAULT_WINDOW, max_fragments=DEFAULT_MAX_FRAGMENTS):
    """Cut the best windows out of ``episode``.

    ``signals`` is either a list of :class:`PrioritySignals` or the dict
    returned by :func:`compute_priority_arrays`.
    """
    if isinstance(signals, dict):
        sig = signals
    else:
        sig = {
            "p_ice": np.array([s.p_ice for s in signals]), "p_tc": np.array([s.p_tc for s in signals]),
            "ik_flag": np.array([s.ik_flag for s in signals]), "p_per": np.array([s.p_per for s in signals]),
            "p_total": np.array([s.p_total for s in signals]),
        }
    if len(sig["p_total"]) != len(episode):
        raise ValueError("signals must align with the episode's transitions")
    out = []
    for s in select_windows(sig["p_total"], window, max_fragments):
        e = min(s + window, len(episode))
        part = {k: np.array(v[s:e]) for k, v in sig.items()}
        out.append(EpisodeFragment(episode.window(s, e), s, float(part["p_total"].sum()), part))
    return out
