"""Sampling-based shooting planners: cross-entropy method and MPPI.

Both evaluate candidate action sequences by rolling them through the
simulator with live noise, so each return is a single sampled trajectory
rather than an expectation.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from functools import partial
from typing import NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np

from disprod.errors import ArgumentError
from disprod.optimizer import simulate_episode

log = logging.getLogger(__name__)

STD_FLOOR = 1e-3
# picked by a coarse sweep on deterministic mountain car, then frozen; the
# cart-pole sweep it replaced could not separate settings (all near the cap)
MPPI_LAMBDA = 30.0
# default sampling std as a fraction of the action range
CEM_STD_FRACTION = 0.5
MPPI_STD_FRACTION = 0.1


@dataclass(frozen=True)
class ShootingConfig:
    depth: Optional[int] = None
    population: int = 200
    iterations: int = 10
    elite_count: Optional[int] = None
    temperature: float = MPPI_LAMBDA
    init_std: Optional[float] = None
    save_actions: Optional[bool] = None
    rng_seed: int = 0
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.population < 2:
            raise ArgumentError("population must be at least 2")
        if self.iterations < 1:
            raise ArgumentError("iterations must be at least 1")
        if self.elite_count is not None and not 1 <= self.elite_count <= self.population:
            raise ArgumentError("elite_count must lie in [1, population]")
        if not self.temperature > 0:
            raise ArgumentError("temperature must be positive")
        if self.init_std is not None and self.init_std <= 0:
            raise ArgumentError("init_std must be positive")
        if self.depth is not None and self.depth < 1:
            raise ArgumentError("depth must be at least 1")

    def resolve(self, model):
        return replace(
            self,
            depth=self.depth or model.horizon_default,
            elite_count=self.elite_count or max(1, round(0.1 * self.population)),
            save_actions=(model.name != "dubins") if self.save_actions is None else self.save_actions,
            gamma=model.discount if self.gamma is None else self.gamma,
        )


@dataclass
class ShootingDiagnostics:
    best_return: float
    iterations: int
    wall_ms: float
    fallback: bool = False
    degraded: bool = False
    return_history: list = field(default_factory=list)

    def to_dict(self):
        return {
            "best_return": float(self.best_return),
            "iterations": int(self.iterations),
            "wall_ms": float(self.wall_ms),
            "fallback": bool(self.fallback),
        }


@dataclass(frozen=True)
class ShootingSaved:
    """Nominal action sequence carried to the next call."""

    mean: np.ndarray


class ShootingResult(NamedTuple):
    action: np.ndarray
    saved: Optional[ShootingSaved]
    diagnostics: ShootingDiagnostics


@partial(jax.jit, static_argnums=(0, 1))
def _returns(model, gamma, s0, actions, eps):
    """Sampled discounted returns; ``actions`` (N, D, n_a), ``eps`` (N, D, n_eps)."""
    fn = model.sim_transition or model.transition
    s = jnp.broadcast_to(s0, (actions.shape[0], model.n_s))

    def body(carry, xs):
        state, disc = carry
        a, e = xs
        sc = [state[:, k] for k in range(model.n_s)]
        ac = [a[:, k] for k in range(model.n_a)]
        ec = [e[:, k] for k in range(model.n_eps)]
        r = jnp.broadcast_to(model.reward(sc, ac), (state.shape[0],))
        nxt = jnp.stack([jnp.broadcast_to(c, (state.shape[0],)) for c in fn(sc, ac, ec)], axis=-1)
        return (nxt, disc * gamma), disc * r

    xs = (jnp.swapaxes(actions, 0, 1), jnp.swapaxes(eps, 0, 1))
    _, rs = jax.lax.scan(body, (s, jnp.ones(())), xs)
    return rs.sum(0)


def rollout_returns(model, state, actions, rng, gamma=1.0):
    """Roll each action sequence once through the simulator with fresh noise."""
    actions = np.clip(np.asarray(actions, dtype=float), model.action_low, model.action_high)
    eps = rng.standard_normal(actions.shape[:2] + (model.n_eps,))
    out = _returns(model, float(gamma), jnp.asarray(state, dtype=float), jnp.asarray(actions), jnp.asarray(eps))
    return np.asarray(out)


def _initial_mean(model, cfg, saved):
    mid = 0.5 * (model.action_low + model.action_high)
    mean = np.tile(mid, (cfg.depth, 1))
    if cfg.save_actions and saved is not None:
        keep = min(len(saved.mean), cfg.depth)
        mean[:keep] = saved.mean[:keep]
    return mean


def _shift(model, mean):
    mid = 0.5 * (model.action_low + model.action_high)
    return ShootingSaved(np.concatenate([mean[1:], mid[None]], axis=0))


def _init_std(model, cfg, fraction):
    span = model.action_high - model.action_low
    return np.full((cfg.depth, model.n_a), 1.0) * (cfg.init_std if cfg.init_std is not None else fraction * span)


def refit_elites(samples, returns, elite_count):
    """Per-step mean and floored std of the ``elite_count`` highest-return samples."""
    order = np.argsort(-returns, kind="stable")[:elite_count]
    elites = samples[order]
    return elites.mean(axis=0), np.maximum(elites.std(axis=0), STD_FLOOR)


def cem_plan(model, state, cfg, saved=None, rng=None):
    """Cross-entropy method over open-loop sequences; returns the first mean action."""
    started = time.perf_counter()
    cfg = cfg.resolve(model)
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    mean = _initial_mean(model, cfg, saved)
    std = _init_std(model, cfg, CEM_STD_FRACTION)
    history = []
    best = -np.inf
    for _ in range(cfg.iterations):
        samples = mean + std * rng.standard_normal((cfg.population,) + mean.shape)
        samples = np.clip(samples, model.action_low, model.action_high)
        returns = rollout_returns(model, state, samples, rng, cfg.gamma)
        mean, std = refit_elites(samples, returns, cfg.elite_count)
        best = max(best, float(returns.max()))
        history.append(float(returns.max()))
    action = np.clip(mean[0], model.action_low, model.action_high)
    diag = ShootingDiagnostics(best, cfg.iterations, (time.perf_counter() - started) * 1000.0, return_history=history)
    return ShootingResult(action, _shift(model, mean) if cfg.save_actions else None, diag)


def mppi_weights(returns, lam):
    """Softmax weights ``exp(lam * (R - max R) / (max R - min R))``.

    Returns are rescaled to unit range first so one ``lam`` serves reward
    scales that differ by orders of magnitude.  Identical returns give
    uniform weights.  ``None`` signals that weights cannot be formed.
    """
    returns = np.asarray(returns, dtype=float)
    if not math.isfinite(lam) or not np.isfinite(returns).all():
        return None
    spread = returns.max() - returns.min()
    scaled = (returns - returns.max()) / spread if spread > 0 else np.zeros_like(returns)
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        w = np.exp(lam * scaled)
        total = w.sum()
    if not np.isfinite(total) or total <= 0:
        return None
    return w / total


def mppi_plan(model, state, cfg, saved=None, rng=None):
    """Model predictive path integral control around a nominal sequence.

    The nominal is replaced by the return-weighted average of perturbed
    sequences each iteration.  If the weights cannot be formed (infinite
    ``temperature`` or non-finite returns) the best sample is used instead and
    the diagnostics are flagged.
    """
    started = time.perf_counter()
    cfg = cfg.resolve(model)
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    nominal = _initial_mean(model, cfg, saved)
    std = _init_std(model, cfg, MPPI_STD_FRACTION)
    history = []
    best = -np.inf
    fallback = False
    for _ in range(cfg.iterations):
        samples = nominal + std * rng.standard_normal((cfg.population,) + nominal.shape)
        samples = np.clip(samples, model.action_low, model.action_high)
        returns = rollout_returns(model, state, samples, rng, cfg.gamma)
        weights = mppi_weights(returns, cfg.temperature)
        if weights is None:
            fallback = True
            finite = np.where(np.isfinite(returns), returns, -np.inf)
            nominal = samples[int(np.argmax(finite))]
        else:
            nominal = np.tensordot(weights, samples, axes=1)
        best = max(best, float(np.nanmax(returns)))
        history.append(float(np.nanmax(returns)))
    if fallback:
        log.debug("mppi weights underflowed; used the best sample")
    action = np.clip(nominal[0], model.action_low, model.action_high)
    diag = ShootingDiagnostics(best, cfg.iterations, (time.perf_counter() - started) * 1000.0, fallback, return_history=history)
    return ShootingResult(action, _shift(model, nominal) if cfg.save_actions else None, diag)


PLANNERS = {"cem": cem_plan, "mppi": mppi_plan}


def shooting_planner(model, kind, cfg):
    if kind not in PLANNERS:
        raise ArgumentError(f"unknown shooting planner {kind!r}")
    plan = PLANNERS[kind]
    cfg = cfg.resolve(model)

    def planner(state, saved, rng):
        return plan(model, state, cfg, saved, rng)

    return planner


def run_shooting_episode(model, kind, cfg, episode_cap=None, rng=None, stop_on_success=False):
    return simulate_episode(model, shooting_planner(model, kind, cfg), episode_cap, rng, stop_on_success)
