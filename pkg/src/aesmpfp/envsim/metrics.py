"""Per-episode evaluation metrics (IK failures, base collisions, completion flags)."""

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class Metrics:
    aikf: int
    abc: int
    tcr_flag: int
    psr_flag: int

    def as_dict(self):
        return asdict(self)


def episode_metrics(episode_log):
    """Summarize a complete episode log (list of step records).

    ``tcr_flag`` marks success with failures allowed (an episode that hit the
    failure threshold never counts); ``psr_flag`` additionally requires zero
    failures of either kind.
    """
    aikf = sum(1 for r in episode_log if r["ik_failure"])
    abc = sum(1 for r in episode_log if r["collision"])
    success = bool(episode_log) and episode_log[-1].get("done_reason") == "Success"
    return Metrics(aikf, abc, int(success), int(success and aikf == 0 and abc == 0))
