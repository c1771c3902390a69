"""Dubins car driven by velocity increments, with obstacle-aware reward.

The transition ignores obstacles entirely; only the reward penalises
penetration, so collisions are possible and counted by the simulator.
"""

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from disprod.autodiff import cos, sin, smooth_min, softplus, sqrt
from disprod.envs.base import CONTINUOUS, EncapsulatedModel
from disprod.errors import ArgumentError

NO_OBSTACLE_MAPS = ("no-ob-1", "no-ob-2", "no-ob-3", "no-ob-4", "no-ob-5")
OBSTACLE_MAPS = ("ob-1", "ob-2", "ob-3", "ob-4", "ob-6", "ob-7", "ob-8", "ob-9", "ob-10", "ob-11", "cave-mini")
MAP_NAMES = NO_OBSTACLE_MAPS + OBSTACLE_MAPS

_MAP_KEYS = {"name", "start", "goal", "goal_radius", "bounds", "obstacles"}


@dataclass(frozen=True)
class Obstacle:
    kind: str
    center: tuple = ()
    radius: float = 0.0
    lower: tuple = ()
    upper: tuple = ()

    def penetration(self, x, y, margin):
        if self.kind == "circle":
            cx, cy = self.center
            dx, dy = x - cx, y - cy
            return self.radius + margin - sqrt(dx * dx + dy * dy + 1e-6)
        (x0, y0), (x1, y1) = self.lower, self.upper
        return smooth_min([x - x0 + margin, x1 - x + margin, y - y0 + margin, y1 - y + margin], 20.0)

    def contains(self, x, y, margin=0.0):
        if self.kind == "circle":
            return np.hypot(x - self.center[0], y - self.center[1]) < self.radius + margin
        (x0, y0), (x1, y1) = self.lower, self.upper
        return x0 - margin < x < x1 + margin and y0 - margin < y < y1 + margin


@dataclass(frozen=True)
class DubinsMap:
    name: str
    start: tuple
    goal: tuple
    goal_radius: float = 0.5
    bounds: tuple = (0.0, 10.0, 0.0, 10.0)
    obstacles: tuple = field(default_factory=tuple)


def parse_map(text, source="<map>"):
    """Parse a map document: start (x, y, heading), goal (x, y), goal radius, obstacle list."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ArgumentError(f"{source}: malformed map: {exc}") from exc
    if not isinstance(raw, dict):
        raise ArgumentError(f"{source}: map must be a mapping")
    unknown = set(raw) - _MAP_KEYS
    if unknown:
        raise ArgumentError(f"{source}: unknown map keys {sorted(unknown)}")
    for key in ("start", "goal"):
        if key not in raw:
            raise ArgumentError(f"{source}: missing '{key}'")
    start = tuple(float(v) for v in raw["start"])
    if len(start) == 2:
        start = start + (0.0,)
    obstacles = []
    for i, ob in enumerate(raw.get("obstacles") or []):
        kind = ob.get("type")
        if kind == "circle":
            obstacles.append(Obstacle("circle", center=tuple(map(float, ob["center"])), radius=float(ob["radius"])))
        elif kind == "rect":
            obstacles.append(Obstacle("rect", lower=tuple(map(float, ob["min"])), upper=tuple(map(float, ob["max"]))))
        else:
            raise ArgumentError(f"{source}: obstacle {i} has unknown type {kind!r}")
    return DubinsMap(
        name=str(raw.get("name", source)),
        start=start,
        goal=tuple(float(v) for v in raw["goal"]),
        goal_radius=float(raw.get("goal_radius", 0.5)),
        bounds=tuple(float(v) for v in raw.get("bounds", (0.0, 10.0, 0.0, 10.0))),
        obstacles=tuple(obstacles),
    )


def load_map(name_or_path):
    path = Path(str(name_or_path))
    if path.suffix in (".yaml", ".yml") and path.exists():
        return parse_map(path.read_text(), str(path))
    if name_or_path not in MAP_NAMES:
        raise ArgumentError(f"unknown map {name_or_path!r}; expected one of {', '.join(MAP_NAMES)} or a .yaml path")
    text = resources.files("disprod.envs").joinpath("maps", f"{name_or_path}.yaml").read_text()
    return parse_map(text, name_or_path)


def make_dubins(
    alpha=0.0,
    map="no-ob-1",
    dt=0.2,
    max_dv=0.1,
    max_dw=0.3,
    v_max=1.0,
    w_max=1.5,
    obstacle_penalty=10.0,
    robot_radius=0.2,
    horizon=50,
    episode_cap=400,
):
    """Dubins car with controls ``(dv, dw)``; position noise ``alpha * eps``."""
    world = map if isinstance(map, DubinsMap) else load_map(map)
    gx, gy = world.goal

    def transition(s, a, e):
        x, y, th, v, w = s
        v_new = v + a[0]
        w_new = w + a[1]
        nx = x + v_new * cos(th) * dt
        ny = y + v_new * sin(th) * dt
        if e:
            nx = nx + alpha * e[0]
            ny = ny + alpha * e[1]
        return [nx, ny, th + w_new * dt, v_new, w_new]

    def reward(s, a):
        x, y, _, v, w = s
        dx, dy = x - gx, y - gy
        r = -sqrt(dx * dx + dy * dy + 1e-4)
        # soft speed limits keep the increment model inside the vehicle envelope
        r = r - 10.0 * (softplus(20.0 * (v - v_max)) + softplus(-20.0 * v)) / 20.0
        r = r - 10.0 * (softplus(20.0 * (w - w_max)) + softplus(-20.0 * (w + w_max))) / 20.0
        for ob in world.obstacles:
            r = r - obstacle_penalty * softplus(20.0 * ob.penetration(x, y, robot_radius)) / 20.0
        return r

    def init(rng):
        return np.array([world.start[0], world.start[1], world.start[2], 0.0, 0.0])

    def success(state):
        return np.hypot(state[0] - gx, state[1] - gy) <= world.goal_radius

    return EncapsulatedModel(
        name="dubins",
        state_names=("x", "y", "theta", "v", "omega"),
        action_names=("dv", "domega"),
        kinds=(CONTINUOUS,) * 5,
        action_low=[-max_dv, -max_dw],
        action_high=[max_dv, max_dw],
        n_eps=2,
        transition=transition,
        reward=reward,
        noise_scale=alpha,
        horizon_default=horizon,
        episode_cap=episode_cap,
        init_state=init,
        terminal=success,
        success=success,
        params={
            "alpha": alpha,
            "map": world,
            "dt": dt,
            "max_dv": max_dv,
            "max_dw": max_dw,
            "robot_radius": robot_radius,
        },
    )


def collides(model, state):
    world = model.params["map"]
    return any(ob.contains(state[0], state[1], model.params["robot_radius"]) for ob in world.obstacles)
