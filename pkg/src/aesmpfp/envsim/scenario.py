"""Scenario description, TOML (de)serialization and seeded layout sampling.

Scenario file schema (``schema_version = 1``)::

    schema_version = 1
    name = "cross_room"
    rng_seed = 11
    world = [x0, y0, x1, y1]             # workspace bounds in meters
    spawn_region = [x0, y0, x1, y1]      # base spawn rectangle

    [[rect]]                             # static axis-aligned box
    bounds = [x0, y0, x1, y1]
    jitter = 0.0                         # optional uniform translation (m)

    [[circle]]                           # static disc
    center = [x, y]
    radius = 0.3
    jitter = 0.0

    [[door]]                             # wall segment removed once its
    bounds = [x0, y0, x1, y1]            # DoorStart/DoorEnd pair is reached

    [[dynamic]]                          # disc looping through waypoints
    radius = 0.2
    speed = 0.15
    waypoints = [[x, y], [x, y], ...]

    [[goal]]                             # ordered EE goal sequence
    label = "Pick"                       # Pick | DoorStart | DoorEnd | Place
    region = [x0, y0, x1, y1]            # goal sampled uniformly inside

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import tomli

from ..errors import ConfigError

SCHEMA_VERSION = 1
GOAL_LABELS = ("Pick", "DoorStart", "DoorEnd", "Place")
GOAL_CLEARANCE = 0.05


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, x, y, margin=0.0):
        return (self.x0 - margin <= x <= self.x1 + margin) and (self.y0 - margin <= y <= self.y1 + margin)

    def shifted(self, dx, dy):
        return Rect(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)

    def as_list(self):
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float


@dataclass(frozen=True)
class StaticRect:
    rect: Rect
    jitter: float = 0.0


@dataclass(frozen=True)
class StaticCircle:
    circle: Circle
    jitter: float = 0.0


@dataclass(frozen=True)
class DynamicObstacle:
    radius: float
    speed: float
    waypoints: tuple

    @property
    def loop_length(self):
        pts = self.waypoints
        return sum(math.dist(pts[i], pts[(i + 1) % len(pts)]) for i in range(len(pts)))

    def position(self, s):
        """Point at arc length ``s`` along the closed waypoint loop."""
        pts = self.waypoints
        if len(pts) == 1:
            return tuple(pts[0])
        s = s % self.loop_length
        for i in range(len(pts)):
            a, b = pts[i], pts[(i + 1) % len(pts)]
            seg = math.dist(a, b)
            if s <= seg or i == len(pts) - 1:
                f = 0.0 if seg == 0 else min(s / seg, 1.0)
                return (a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]))
            s -= seg
        return tuple(pts[0])


@dataclass(frozen=True)
class GoalSpec:
    label: str
    region: Rect


@dataclass(frozen=True)
class Scenario:
    name: str
    world: Rect
    spawn_region: Rect
    goals: tuple
    rects: tuple = ()
    circles: tuple = ()
    doors: tuple = ()
    dynamic: tuple = ()
    rng_seed: int = 0
    schema_version: int = SCHEMA_VERSION

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported scenario schema_version {self.schema_version}")
        if not self.goals:
            raise ConfigError("scenario needs at least one goal")
        for g in self.goals:
            if g.label not in GOAL_LABELS:
                raise ConfigError(f"unknown goal label {g.label!r}")
            if not _inside(self.world, g.region):
                raise ConfigError(f"goal region {g.region} leaves the world bounds")
        labels = [g.label for g in self.goals]
        if labels.count("DoorStart") != labels.count("DoorEnd") or labels.count("DoorEnd") != len(self.doors):
            raise ConfigError("each door needs exactly one DoorStart/DoorEnd goal pair")
        if not _inside(self.world, self.spawn_region):
            raise ConfigError("spawn region leaves the world bounds")
        return self


def _inside(outer, inner):
    return outer.x0 <= inner.x0 <= inner.x1 <= outer.x1 and outer.y0 <= inner.y0 <= inner.y1 <= outer.y1


@dataclass
class Layout:
    """Concrete obstacle and goal placement drawn from a scenario."""

    rects: list
    circles: list
    doors: list
    goals: np.ndarray
    labels: list
    dynamic_phase: list = field(default_factory=list)


def sample_layout(scenario, rng):
    rects = []
    for sr in scenario.rects:
        dx, dy = rng.uniform(-sr.jitter, sr.jitter, 2) if sr.jitter > 0 else (0.0, 0.0)
        rects.append(sr.rect.shifted(float(dx), float(dy)))
    circles = []
    for sc in scenario.circles:
        dx, dy = rng.uniform(-sc.jitter, sc.jitter, 2) if sc.jitter > 0 else (0.0, 0.0)
        c = sc.circle
        circles.append(Circle(c.cx + float(dx), c.cy + float(dy), c.r))
    goals = np.zeros((len(scenario.goals), 2))
    for i, g in enumerate(scenario.goals):
        for _ in range(200):
            p = rng.uniform([g.region.x0, g.region.y0], [g.region.x1, g.region.y1])
            if not _point_blocked(p, rects, circles, scenario.doors, GOAL_CLEARANCE):
                break
        else:
            raise ConfigError(f"goal {g.label} region has no free point")
        goals[i] = p
    phases = [float(rng.uniform(0.0, d.loop_length)) if d.loop_length > 0 else 0.0 for d in scenario.dynamic]
    return Layout(rects, circles, list(scenario.doors), goals, [g.label for g in scenario.goals], phases)


def _point_blocked(p, rects, circles, doors, margin):
    x, y = float(p[0]), float(p[1])
    if any(r.contains(x, y, margin) for r in rects):
        return True
    if any(d.contains(x, y, margin) for d in doors):
        return True
    return any(math.hypot(x - c.cx, y - c.cy) <= c.r + margin for c in circles)


# ------------------------------------------------------------------ TOML io

_TOP_KEYS = {"schema_version", "name", "rng_seed", "world", "spawn_region", "rect", "circle", "door", "dynamic", "goal"}


def _check_keys(table, allowed, where):
    extra = set(table) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)} in {where}")


def _rect(v, where):
    if not (isinstance(v, list) and len(v) == 4):
        raise ConfigError(f"{where} must be [x0, y0, x1, y1]")
    r = Rect(*(float(a) for a in v))
    if r.x1 < r.x0 or r.y1 < r.y0:
        raise ConfigError(f"{where} has inverted bounds")
    return r


def scenario_from_dict(doc):
    _check_keys(doc, _TOP_KEYS, "scenario")
    try:
        rects = []
        for t in doc.get("rect", []):
            _check_keys(t, {"bounds", "jitter"}, "[[rect]]")
            rects.append(StaticRect(_rect(t["bounds"], "rect.bounds"), float(t.get("jitter", 0.0))))
        circles = []
        for t in doc.get("circle", []):
            _check_keys(t, {"center", "radius", "jitter"}, "[[circle]]")
            cx, cy = (float(a) for a in t["center"])
            circles.append(StaticCircle(Circle(cx, cy, float(t["radius"])), float(t.get("jitter", 0.0))))
        doors = []
        for t in doc.get("door", []):
            _check_keys(t, {"bounds"}, "[[door]]")
            doors.append(_rect(t["bounds"], "door.bounds"))
        dynamic = []
        for t in doc.get("dynamic", []):
            _check_keys(t, {"radius", "speed", "waypoints"}, "[[dynamic]]")
            pts = tuple((float(p[0]), float(p[1])) for p in t["waypoints"])
            dynamic.append(DynamicObstacle(float(t["radius"]), float(t["speed"]), pts))
        goals = []
        for t in doc.get("goal", []):
            _check_keys(t, {"label", "region"}, "[[goal]]")
            goals.append(GoalSpec(str(t["label"]), _rect(t["region"], "goal.region")))
        scen = Scenario(
            name=str(doc.get("name", "unnamed")),
            world=_rect(doc["world"], "world"),
            spawn_region=_rect(doc["spawn_region"], "spawn_region"),
            goals=tuple(goals),
            rects=tuple(rects),
            circles=tuple(circles),
            doors=tuple(doors),
            dynamic=tuple(dynamic),
            rng_seed=int(doc.get("rng_seed", 0)),
            schema_version=int(doc.get("schema_version", -1)),
        )
    except KeyError as exc:
        raise ConfigError(f"missing scenario key {exc}") from None
    return scen.validate()


def loads_scenario(text):
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"scenario is not valid TOML: {exc}") from None
    return scenario_from_dict(doc)


def load_scenario(path):
    """Load a scenario file, or a bundled scenario by bare name (e.g. ``"cross_room"``)."""
    p = Path(path)
    if not p.suffix and not p.exists():
        return builtin_scenario(str(path))
    return loads_scenario(p.read_text())


def builtin_scenario(name):
    try:
        text = resources.files("aesmpfp.scenarios").joinpath(f"{name}.toml").read_text()
    except FileNotFoundError:
        raise ConfigError(f"no bundled scenario named {name!r}") from None
    return loads_scenario(text)


def _fmt(v):
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(a) for a in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps_scenario(s):
    lines = [f"schema_version = {s.schema_version}", f"name = {_fmt(s.name)}",
             f"rng_seed = {s.rng_seed}", f"world = {_fmt(s.world.as_list())}",
             f"spawn_region = {_fmt(s.spawn_region.as_list())}"]
    for r in s.rects:
        lines += ["", "[[rect]]", f"bounds = {_fmt(r.rect.as_list())}", f"jitter = {_fmt(r.jitter)}"]
    for c in s.circles:
        lines += ["", "[[circle]]", f"center = {_fmt([c.circle.cx, c.circle.cy])}",
                  f"radius = {_fmt(c.circle.r)}", f"jitter = {_fmt(c.jitter)}"]
    for d in s.doors:
        lines += ["", "[[door]]", f"bounds = {_fmt(d.as_list())}"]
    for d in s.dynamic:
        lines += ["", "[[dynamic]]", f"radius = {_fmt(d.radius)}", f"speed = {_fmt(d.speed)}",
                  f"waypoints = {_fmt([list(p) for p in d.waypoints])}"]
    for g in s.goals:
        lines += ["", "[[goal]]", f"label = {_fmt(g.label)}", f"region = {_fmt(g.region.as_list())}"]
    return "\n".join(lines) + "\n"
