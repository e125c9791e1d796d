"""Planar end-effector-centric mobile manipulation simulator.

A disc-shaped holonomic base moves under velocity commands given in its own
frame.  A scripted end-effector (EE) target walks a straight-line path through
the scenario's goal sequence at constant Cartesian speed; it only advances
while the previous step left it reachable, so the base has to keep the target
inside the reachability annulus ``[r_min, r_max]`` around its center.

Frames
------
The local occupancy map is robot-centric: row ``i`` spans forward offsets
``[(i - 15) * res, (i - 14) * res)`` and column ``j`` spans leftward offsets
``[(j - 15) * res, (j - 14) * res)``, so the base sits at the grid center and
"ahead" means increasing row index.

Reward
------
``r = progress_gain * (ring_prev - ring_curr) - ik_failure - collision + 5 * goal_reached``
where ``ring(p) = | |p - ee_desired| - r_ideal |`` is the base's distance to
the ideal placement ring (``r_ideal = (r_min + r_max) / 2``) around the
post-step EE target.  Per-step rewards lie in :meth:`EnvConfig.reward_bounds`.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import SpawnInfeasible, SteppedAfterDone
from .scenario import sample_layout

MAP_SIZE = 30
MAP_RESOLUTION = 0.1
OBS_VEC_DIM = 14

# slices into the flattened state vector
PREV_ACTION = slice(0, 2)
BASE_POSE = slice(2, 5)
BASE_VEL = slice(5, 7)
EE_POS = slice(7, 9)
EE_DESIRED = slice(9, 11)
GOAL_REL = slice(11, 13)
GOAL_INDEX = 13


class DoneReason(str, enum.Enum):
    SUCCESS = "Success"
    FAILURE_THRESHOLD = "FailureThreshold"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class EnvConfig:
    v_max: float = 0.3
    dt: float = 1.0
    r_min: float = 0.3
    r_max: float = 0.9
    base_radius: float = 0.25
    ee_speed: float = 0.2
    goal_eps: float = 0.05
    t_max: int = 200
    failure_threshold: int = 20
    progress_gain: float = 2.0
    goal_bonus: float = 5.0
    spawn_tries: int = 1000

    @property
    def r_ideal(self):
        return 0.5 * (self.r_min + self.r_max)

    def reward_bounds(self):
        """Closed interval containing every per-step reward."""
        reach = self.progress_gain * self.v_max * self.dt * math.sqrt(2.0)
        return (-reach - 2.0, reach + self.goal_bonus)


@dataclass
class Observation:
    map: np.ndarray  # (30, 30) float32, 1 = occupied
    vec: np.ndarray  # (OBS_VEC_DIM,) float64

    def copy(self):
        return Observation(self.map.copy(), self.vec.copy())


@dataclass
class StepResult:
    obs: Observation
    reward: float
    ik_failure: bool
    collision: bool
    goal_reached: bool
    done: bool
    done_reason: DoneReason | None


@dataclass
class SimState:
    layout: object
    base_pose: np.ndarray
    base_vel: np.ndarray
    prev_action: np.ndarray
    ee_desired: np.ndarray
    ee_pos: np.ndarray
    goal_index: int = 0
    t: int = 0
    ik_failures: int = 0
    collisions: int = 0
    last_ik_failure: bool = False
    doors_open: list = field(default_factory=list)
    dyn_s: list = field(default_factory=list)
    done: bool = False
    done_reason: DoneReason | None = None


def _rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


_OFFSETS = (np.arange(MAP_SIZE) - (MAP_SIZE / 2 - 0.5)) * MAP_RESOLUTION
# cell centers in the robot frame: [..., 0] forward, [..., 1] left
CELL_CENTERS = np.stack(np.meshgrid(_OFFSETS, _OFFSETS, indexing="ij"), axis=-1)


def render_local_map(state, scenario):
    """Rasterize obstacles around the base into a 30x30 robot-centric grid.

    Cells whose centers fall outside the world bounds count as occupied;
    closed doors and dynamic obstacles (at their current positions) are drawn.
    """
    x, y, th = state.base_pose
    c, s = math.cos(th), math.sin(th)
    fx = CELL_CENTERS[..., 0]
    fy = CELL_CENTERS[..., 1]
    wx = x + c * fx - s * fy
    wy = y + s * fx + c * fy
    w = scenario.world
    occ = (wx < w.x0) | (wx > w.x1) | (wy < w.y0) | (wy > w.y1)
    lay = state.layout
    boxes = list(lay.rects) + [d for d, is_open in zip(lay.doors, state.doors_open) if not is_open]
    for r in boxes:
        occ |= (wx >= r.x0) & (wx <= r.x1) & (wy >= r.y0) & (wy <= r.y1)
    for circ in lay.circles:
        occ |= (wx - circ.cx) ** 2 + (wy - circ.cy) ** 2 <= circ.r**2
    for dyn, sv in zip(scenario.dynamic, state.dyn_s):
        px, py = dyn.position(sv)
        occ |= (wx - px) ** 2 + (wy - py) ** 2 <= dyn.radius**2
    return occ.astype(np.float32)


def _disc_hits_rect(px, py, rad, r):
    nx = min(max(px, r.x0), r.x1)
    ny = min(max(py, r.y0), r.y1)
    return (px - nx) ** 2 + (py - ny) ** 2 < rad * rad


class MMEnv:
    """Seeded single-episode simulator; call :meth:`reset` before :meth:`step`."""

    def __init__(self, scenario, config=None):
        self.scenario = scenario.validate()
        self.config = config or EnvConfig()
        self.state = None
        self.log = []

    # ------------------------------------------------------------ geometry
    def _dyn_positions(self, dyn_s):
        return [d.position(s) for d, s in zip(self.scenario.dynamic, dyn_s)]

    def _disc_collides(self, px, py, state, dyn_s=None):
        rad = self.config.base_radius
        w = self.scenario.world
        if px - rad < w.x0 or px + rad > w.x1 or py - rad < w.y0 or py + rad > w.y1:
            return True
        lay = state.layout
        for r in lay.rects:
            if _disc_hits_rect(px, py, rad, r):
                return True
        for d, is_open in zip(lay.doors, state.doors_open):
            if not is_open and _disc_hits_rect(px, py, rad, d):
                return True
        for c in lay.circles:
            if math.hypot(px - c.cx, py - c.cy) < rad + c.r:
                return True
        dyn_s = state.dyn_s if dyn_s is None else dyn_s
        for d, (qx, qy) in zip(self.scenario.dynamic, self._dyn_positions(dyn_s)):
            if math.hypot(px - qx, py - qy) < rad + d.radius:
                return True
        return False

    # --------------------------------------------------------------- reset
    def reset(self, seed, scenario=None):
        if scenario is not None:
            self.scenario = scenario.validate()
        cfg = self.config
        rng = np.random.default_rng([self.scenario.rng_seed & 0xFFFFFFFFFFFFFFFF, int(seed) & 0xFFFFFFFFFFFFFFFF])
        layout = sample_layout(self.scenario, rng)
        sp = self.scenario.spawn_region
        state = SimState(layout=layout, base_pose=np.zeros(3), base_vel=np.zeros(2), prev_action=np.zeros(2),
                         ee_desired=np.zeros(2), ee_pos=np.zeros(2),
                         doors_open=[False] * len(layout.doors), dyn_s=list(layout.dynamic_phase))
        for _ in range(cfg.spawn_tries):
            px = rng.uniform(sp.x0, sp.x1)
            py = rng.uniform(sp.y0, sp.y1)
            th = rng.uniform(-math.pi, math.pi)
            if not self._disc_collides(px, py, state):
                break
        else:
            raise SpawnInfeasible(f"no collision-free spawn in {sp} after {cfg.spawn_tries} samples")
        state.base_pose = np.array([px, py, th])
        toward = layout.goals[0] - state.base_pose[:2]
        norm = float(np.linalg.norm(toward))
        u = toward / norm if norm > 1e-9 else np.array([math.cos(th), math.sin(th)])
        state.ee_desired = state.base_pose[:2] + cfg.r_ideal * u
        state.ee_pos = state.ee_desired.copy()
        self.state = state
        self.log = []
        return self.observe()

    # ---------------------------------------------------------------- step
    def step(self, action):
        st = self.state
        if st is None:
            raise SteppedAfterDone("step() before reset()")
        if st.done:
            raise SteppedAfterDone(f"episode already finished ({st.done_reason.value})")
        cfg = self.config
        a = np.asarray(action, dtype=np.float64).reshape(2)
        if not np.isfinite(a).all():
            raise ValueError(f"non-finite action {a}")
        a = np.clip(a, -cfg.v_max, cfg.v_max)

        # dynamic obstacles advance unless they would run into the parked base
        px, py, th = st.base_pose
        for i, d in enumerate(self.scenario.dynamic):
            nxt = list(st.dyn_s)
            nxt[i] = st.dyn_s[i] + d.speed * cfg.dt
            qx, qy = d.position(nxt[i])
            if math.hypot(px - qx, py - qy) >= cfg.base_radius + d.radius:
                st.dyn_s[i] = nxt[i]

        prev_xy = st.base_pose[:2].copy()
        world_v = _rot(th) @ a
        cand = prev_xy + world_v * cfg.dt
        collision = self._disc_collides(cand[0], cand[1], st)
        if collision:
            st.base_vel = np.zeros(2)
        else:
            st.base_pose = np.array([cand[0], cand[1], th])
            st.base_vel = a.copy()
        st.prev_action = a

        goal_reached = False
        n_goals = len(st.layout.goals)
        if st.goal_index < n_goals and not st.last_ik_failure:
            goal = st.layout.goals[st.goal_index]
            delta = goal - st.ee_desired
            dist = float(np.linalg.norm(delta))
            stride = cfg.ee_speed * cfg.dt
            if dist <= stride + cfg.goal_eps:
                st.ee_desired = goal.copy()
                goal_reached = True
                if st.layout.labels[st.goal_index] == "DoorEnd":
                    k = st.layout.labels[: st.goal_index + 1].count("DoorEnd") - 1
                    st.doors_open[k] = True
                st.goal_index += 1
            else:
                st.ee_desired = st.ee_desired + delta * (stride / dist)

        base_xy = st.base_pose[:2]
        reach = float(np.linalg.norm(st.ee_desired - base_xy))
        ik_failure = not (cfg.r_min <= reach <= cfg.r_max)
        if reach > 1e-12:
            st.ee_pos = base_xy + (st.ee_desired - base_xy) * (min(max(reach, cfg.r_min), cfg.r_max) / reach)
        else:
            st.ee_pos = base_xy.copy()
        st.last_ik_failure = ik_failure

        ring_prev = abs(float(np.linalg.norm(st.ee_desired - prev_xy)) - cfg.r_ideal)
        ring_curr = abs(reach - cfg.r_ideal)
        reward = (cfg.progress_gain * (ring_prev - ring_curr) - float(ik_failure) - float(collision)
                  + cfg.goal_bonus * float(goal_reached))

        st.t += 1
        st.ik_failures += int(ik_failure)
        st.collisions += int(collision)
        if st.ik_failures + st.collisions >= cfg.failure_threshold:
            st.done, st.done_reason = True, DoneReason.FAILURE_THRESHOLD
        elif st.goal_index >= n_goals:
            st.done, st.done_reason = True, DoneReason.SUCCESS
        elif st.t >= cfg.t_max:
            st.done, st.done_reason = True, DoneReason.TIMEOUT

        obs = self.observe()
        self.log.append({
            "t": st.t - 1,
            "action": [float(v) for v in a],
            "reward": float(reward),
            "ik_failure": bool(ik_failure),
            "collision": bool(collision),
            "goal_reached": bool(goal_reached),
            "goal_index": int(st.goal_index),
            "base_pose": [float(v) for v in st.base_pose],
            "ee_desired_pos": [float(v) for v in st.ee_desired],
            "done": bool(st.done),
            "done_reason": st.done_reason.value if st.done else None,
        })
        return StepResult(obs, float(reward), ik_failure, collision, goal_reached, st.done, st.done_reason)

    # ----------------------------------------------------------- observing
    def observe(self):
        st = self.state
        x, y, th = st.base_pose
        goals = st.layout.goals
        goal = goals[min(st.goal_index, len(goals) - 1)]
        goal_rel = _rot(th).T @ (goal - st.base_pose[:2])
        vec = np.empty(OBS_VEC_DIM)
        vec[PREV_ACTION] = st.prev_action
        vec[BASE_POSE] = (x, y, wrap_angle(th))
        vec[BASE_VEL] = st.base_vel
        vec[EE_POS] = st.ee_pos
        vec[EE_DESIRED] = st.ee_desired
        vec[GOAL_REL] = goal_rel
        vec[GOAL_INDEX] = st.goal_index
        return Observation(render_local_map(st, self.scenario), vec)

    def place_base(self, x, y, theta=None):
        """Teleport the base (test and scripting hook); leaves the EE target alone."""
        th = self.state.base_pose[2] if theta is None else theta
        self.state.base_pose = np.array([x, y, th], dtype=np.float64)
        return self.observe()

    def clone_state(self):
        st = self.state
        return replace(st, base_pose=st.base_pose.copy(), base_vel=st.base_vel.copy(),
                       prev_action=st.prev_action.copy(), ee_desired=st.ee_desired.copy(),
                       ee_pos=st.ee_pos.copy(), doors_open=list(st.doors_open), dyn_s=list(st.dyn_s))

    def restore_state(self, state):
        self.state = state


def write_episode_log(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_episode_log(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
