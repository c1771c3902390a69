"""Environment catalog: noisy encapsulated models and their simulators."""

import inspect

from disprod.envs.base import (
    BINARY,
    CONTINUOUS,
    EncapsulatedModel,
    EpisodeState,
    SimStep,
    apply_reward,
    apply_transition,
    smooth_ge,
    step_sim,
)
from disprod.envs.classic import (
    make_cartpole,
    make_cartpole_hybrid,
    make_mountain_car,
    make_pendulum,
    pendulum_analytic_partials,
)
from disprod.envs.dubins import MAP_NAMES, NO_OBSTACLE_MAPS, OBSTACLE_MAPS, collides, load_map, make_dubins
from disprod.envs.simple import make_simple_env
from disprod.errors import ArgumentError


def _mountain_car_sparse(beta=10.0, **kw):
    return make_mountain_car(beta=beta, name="mountain_car_sparse", **kw)


def _mountain_car_highdim(n_redundant=14, **kw):
    return make_mountain_car(n_redundant=n_redundant, name="mountain_car_highdim", **kw)


def _mountain_car(**kw):
    return make_mountain_car(name="mountain_car", **kw)


CATALOG = {
    "cartpole": make_cartpole,
    "pendulum": make_pendulum,
    "mountain_car": _mountain_car,
    "mountain_car_sparse": _mountain_car_sparse,
    "mountain_car_highdim": _mountain_car_highdim,
    "cartpole_hybrid": make_cartpole_hybrid,
    "dubins": make_dubins,
    "simple_env": make_simple_env,
}


def env_parameters(name):
    """Accepted parameter names and defaults for a catalog entry."""
    factory = CATALOG[name]
    params = {}
    for fn in (factory, make_mountain_car) if name.startswith("mountain_car") else (factory,):
        for p in inspect.signature(fn).parameters.values():
            if p.kind in (p.VAR_KEYWORD, p.VAR_POSITIONAL) or p.name == "name":
                continue
            params.setdefault(p.name, p.default)
    return params


def make_env(name, params=None, **overrides):
    """Build a catalog environment; unknown names or parameters are rejected."""
    if name not in CATALOG:
        raise ArgumentError(f"unknown environment {name!r}; expected one of {', '.join(CATALOG)}")
    params = {**(params or {}), **overrides}
    allowed = env_parameters(name)
    for key, value in params.items():
        if key not in allowed:
            raise ArgumentError(f"{name}: unknown parameter '{key}'")
        if key in ("alpha", "beta") and (not isinstance(value, (int, float)) or value < 0 or (key == "beta" and value == 0)):
            raise ArgumentError(f"{name}: invalid value for '{key}': {value!r}")
        if key in ("n_redundant", "horizon", "episode_cap") and (not isinstance(value, int) or value < 0):
            raise ArgumentError(f"{name}: invalid value for '{key}': {value!r}")
    return CATALOG[name](**params)


__all__ = [
    "BINARY",
    "CATALOG",
    "CONTINUOUS",
    "EncapsulatedModel",
    "EpisodeState",
    "MAP_NAMES",
    "NO_OBSTACLE_MAPS",
    "OBSTACLE_MAPS",
    "SimStep",
    "apply_reward",
    "apply_transition",
    "collides",
    "env_parameters",
    "load_map",
    "make_env",
    "pendulum_analytic_partials",
    "smooth_ge",
    "step_sim",
]
