"""Multi-restart gradient search over stochastic open-loop policies.

Every restart is one row of a policy matrix holding a (mean, variance) pair
per step and action dimension.  All rows are pushed through the propagation
graph as a single batch; because the loss is the negated sum of per-row
Q-estimates, its gradient is the per-row gradient stacked.

Optimization happens in normalized coordinates: means are mapped to [0, 1]
over the action range and variances are divided by the squared range.  In
those units the feasible set for a variance is ``[0, min(1/12, d**2/12)]``
where ``d`` is the distance of its mean to the nearer bound, i.e. the
variance of the widest uniform distribution that fits inside the bounds.
"""

import json
import logging
import time
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np

from disprod.envs.base import BINARY, step_sim
from disprod.errors import ArgumentError
from disprod.propagate import Mode, _trace_core, rollout_q

log = logging.getLogger(__name__)

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8
VAR_SCALE = 12.0  # variance of U(0, 1) is 1/12


def _var_cap(u):
    return np.minimum(1.0 / VAR_SCALE, np.minimum(u, 1.0 - u) ** 2 / VAR_SCALE)


@jax.tree_util.register_pytree_node_class
class PolicyParams:
    """Per-restart, per-step action marginals in natural units.

    ``mean`` and ``var`` are shaped ``(n_r, D, n_a)``.  :attr:`data` exposes
    the flat ``n_r x 2*D*n_a`` layout with (mean, var) interleaved per
    action dimension.
    """

    def __init__(self, mean, var, low, high):
        self.mean = mean
        self.var = var
        self.low = tuple(float(v) for v in np.ravel(low))
        self.high = tuple(float(v) for v in np.ravel(high))

    def tree_flatten(self):
        return (self.mean, self.var), (self.low, self.high)

    @classmethod
    def tree_unflatten(cls, aux, children):
        obj = object.__new__(cls)
        obj.mean, obj.var = children
        obj.low, obj.high = aux
        return obj

    @property
    def shape(self):
        return tuple(np.shape(self.mean))

    @property
    def restarts(self):
        return self.shape[0]

    @property
    def depth(self):
        return self.shape[1]

    @property
    def data(self):
        n_r, depth, n_a = self.shape
        return np.stack([np.asarray(self.mean), np.asarray(self.var)], axis=-1).reshape(n_r, 2 * depth * n_a)

    @classmethod
    def from_data(cls, data, depth, low, high):
        data = np.asarray(data, dtype=float)
        n_a = len(np.ravel(low))
        if data.ndim != 2 or data.shape[1] != 2 * depth * n_a:
            raise ArgumentError(f"policy matrix must be n_r x {2 * depth * n_a}")
        cube = data.reshape(data.shape[0], depth, n_a, 2)
        return cls(cube[..., 0], cube[..., 1], low, high)

    def span(self):
        return np.asarray(self.high) - np.asarray(self.low)

    def normalized(self):
        low, span = np.asarray(self.low), self.span()
        safe = np.where(span > 0, span, 1.0)
        return (np.asarray(self.mean) - low) / safe, np.asarray(self.var) / safe**2

    @classmethod
    def from_normalized(cls, u, w, low, high):
        low = np.asarray(low, dtype=float)
        span = np.asarray(high, dtype=float) - low
        return cls(low + np.asarray(u) * span, np.asarray(w) * span**2, low, high)

    def validate(self, tol=1e-9):
        mean, var = np.asarray(self.mean, dtype=float), np.asarray(self.var, dtype=float)
        if mean.ndim != 3 or mean.shape != var.shape or mean.shape[2] != len(self.low):
            raise ArgumentError(f"policy arrays must share shape (n_r, D, {len(self.low)})")
        if not (np.isfinite(mean).all() and np.isfinite(var).all()):
            raise ArgumentError("policy parameters must be finite")
        u, w = self.normalized()
        if np.any(u < -tol) or np.any(u > 1 + tol):
            raise ArgumentError("policy mean outside action bounds")
        if np.any(w < -tol) or np.any(w > _var_cap(np.clip(u, 0, 1)) + tol):
            raise ArgumentError("policy variance outside its admissible range")
        return self

    def row(self, i):
        return PolicyParams(np.asarray(self.mean)[i : i + 1], np.asarray(self.var)[i : i + 1], self.low, self.high)

    def take(self, order):
        return PolicyParams(np.asarray(self.mean)[order], np.asarray(self.var)[order], self.low, self.high)


@dataclass(frozen=True)
class PlannerConfig:
    depth: Optional[int] = None
    restarts: int = 200
    max_steps: int = 10
    step_size: float = 0.1
    conv_tol: float = 0.1
    mode: Mode = Mode.COMPLETE
    gamma: Optional[float] = None
    rng_seed: int = 0
    save_actions: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if self.depth is not None and self.depth < 1:
            raise ArgumentError("depth must be at least 1")
        if self.restarts < 1:
            raise ArgumentError("restarts must be at least 1")
        if self.max_steps < 1:
            raise ArgumentError("max_steps must be at least 1")
        if self.conv_tol <= 0:
            raise ArgumentError("conv_tol must be positive")
        if self.step_size < 0:
            raise ArgumentError("step_size must be nonnegative")
        if self.gamma is not None and not 0.0 < self.gamma <= 1.0:
            raise ArgumentError("gamma must lie in (0, 1]")

    def resolve(self, model):
        return replace(
            self,
            depth=self.depth or model.horizon_default,
            gamma=model.discount if self.gamma is None else self.gamma,
        )


@dataclass(frozen=True)
class SavedActions:
    """Steps ``1..D-1`` of the last chosen restart, natural units."""

    mean: Optional[np.ndarray] = None
    var: Optional[np.ndarray] = None

    @property
    def is_empty(self):
        return self.mean is None or len(self.mean) == 0

    @classmethod
    def empty(cls):
        return cls()


@dataclass
class AdamState:
    """First/second moments for means and variances plus a per-row step count."""

    m: np.ndarray
    v: np.ndarray
    t: np.ndarray

    @classmethod
    def zeros(cls, shape):
        # moments stacked over (mean, var) on the leading axis
        return cls(np.zeros((2,) + shape), np.zeros((2,) + shape), np.zeros(shape[0], dtype=int))


def _random_rows(model, n_rows, depth, rng):
    n_a = model.n_a
    u = rng.uniform(0.0, 1.0, size=(n_rows, depth, n_a))
    binary = np.array([k == BINARY for k in model.action_kinds])
    if binary.any():
        bits = rng.integers(0, 2, size=(n_rows, n_a)).astype(float)
        u[:, 0, binary] = bits[:, binary]
    return u


def init_policy(model, config, saved=None, rng=None):
    """Random uniform action means with the widest admissible variances.

    Binary action dimensions start from random bits at step 0 and uniform
    probabilities afterwards.  When ``saved`` holds actions, row 0 is the
    saved sequence shifted by one step with a fresh final step.
    """
    config = config.resolve(model)
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng
    depth, n_r = config.depth, config.restarts
    u = _random_rows(model, n_r, depth, rng)
    w = _var_cap(u)
    low, high = model.action_low, model.action_high
    fixed = high - low <= 0
    u[..., fixed] = 0.0
    w[..., fixed] = 0.0
    params = PolicyParams.from_normalized(u, w, low, high)
    if saved is not None and not saved.is_empty:
        keep = min(len(saved.mean), depth)
        mean, var = np.array(params.mean), np.array(params.var)
        mean[0, :keep] = saved.mean[:keep]
        var[0, :keep] = saved.var[:keep]
        params = PolicyParams(mean, var, low, high)
    return params


@partial(jax.jit, static_argnums=(0, 1, 2))
def _objective(model, mode, gamma, s0, u, w, low, span):
    means = jnp.moveaxis(low + u * span, 0, -1)
    vars_ = jnp.moveaxis(w * span**2, 0, -1)
    q = _trace_core(model, mode, gamma, s0, means, vars_)[3]
    return -q.sum(), q


_objective_grad = jax.jit(jax.value_and_grad(_objective, argnums=(4, 5), has_aux=True), static_argnums=(0, 1, 2))


def _row_evaluator(model, state, config):
    """Returns ``f(u, w) -> (q, grad_u, grad_w)`` with loss gradients (of -sum Q)."""
    low = jnp.asarray(model.action_low)
    span = jnp.asarray(model.action_high - model.action_low)
    s0 = jnp.asarray(state, dtype=float)

    def evaluate(u, w):
        (_, q), (gu, gw) = _objective_grad(model, config.mode, float(config.gamma), s0, jnp.asarray(u), jnp.asarray(w), low, span)
        return np.asarray(q), np.asarray(gu), np.asarray(gw)

    return evaluate


def project(u, w, fixed=None):
    """Clip normalized means to [0, 1] and variances to their admissible range."""
    u = np.clip(u, 0.0, 1.0)
    w = np.clip(w, 0.0, _var_cap(u))
    if fixed is not None and np.any(fixed):
        u = np.where(fixed, 0.0, u)
        w = np.where(fixed, 0.0, w)
    return u, w


def adam_candidate(u, w, gu, gw, adam, step_size, fixed=None):
    """One projected Adam step for every row; returns candidates and the advanced state."""
    g = np.stack([gu, gw])
    t = adam.t + 1
    m = ADAM_B1 * adam.m + (1 - ADAM_B1) * g
    v = ADAM_B2 * adam.v + (1 - ADAM_B2) * g * g
    tt = t.reshape((1, -1) + (1,) * (g.ndim - 2))
    m_hat = m / (1 - ADAM_B1**tt)
    v_hat = v / (1 - ADAM_B2**tt)
    step = step_size * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    cu, cw = project(u - step[0], w - step[1], fixed)
    return cu, cw, AdamState(m, v, t)


def _as_normalized(params):
    u, w = params.normalized()
    return np.asarray(u, dtype=float), np.asarray(w, dtype=float)


class UpdateResult(NamedTuple):
    params: PolicyParams
    q_after: np.ndarray
    accepted: np.ndarray
    adam: AdamState
    grads: Optional[tuple]


def safe_update(params, grads, step_size, q_before, q_eval, adam=None, frozen=None):
    """Projected Adam step, kept row by row only where it raises Q.

    ``grads`` are loss gradients (of ``-sum Q``) with respect to the natural
    mean and variance arrays; ``q_eval(candidate)`` returns per-row Q or a
    ``(q, (grad_mean, grad_var))`` pair, in which case the gradients at the
    accepted rows are returned as well.  Rejected rows keep their
    parameters and their Adam state.
    """
    span = params.span()
    fixed = span <= 0
    safe = np.where(fixed, 1.0, span)
    u, w = _as_normalized(params)
    gu = np.asarray(grads[0], dtype=float) * safe
    gw = np.asarray(grads[1], dtype=float) * safe**2
    adam = AdamState.zeros(u.shape) if adam is None else adam
    frozen = np.zeros(u.shape[0], dtype=bool) if frozen is None else frozen
    cu, cw, cand_adam = adam_candidate(u, w, gu, gw, adam, step_size, fixed)
    candidate = PolicyParams.from_normalized(cu, cw, params.low, params.high)
    out = q_eval(candidate)
    cand_grads = None
    if isinstance(out, tuple):
        out, cand_grads = out
    q_cand = np.asarray(out, dtype=float)
    q_before = np.asarray(q_before, dtype=float)
    accepted = (q_cand > q_before) & np.isfinite(q_cand) & ~frozen
    pick = accepted.reshape((-1,) + (1,) * (u.ndim - 1))
    new_mean = np.where(pick, candidate.mean, params.mean)
    new_var = np.where(pick, candidate.var, params.var)
    pick2 = pick[None]
    new_adam = AdamState(
        np.where(pick2, cand_adam.m, adam.m),
        np.where(pick2, cand_adam.v, adam.v),
        np.where(accepted, cand_adam.t, adam.t),
    )
    new_grads = None
    if cand_grads is not None:
        new_grads = (np.where(pick, cand_grads[0], grads[0]), np.where(pick, cand_grads[1], grads[1]))
    return UpdateResult(
        PolicyParams(new_mean, new_var, params.low, params.high),
        np.where(accepted, q_cand, q_before),
        accepted,
        new_adam,
        new_grads,
    )


def converged(old_params, new_params, conv_tol):
    """Infinity-norm test on normalized means and variances (variances scaled by 12)."""
    fixed = old_params.span() <= 0
    u0, w0 = _as_normalized(old_params)
    u1, w1 = _as_normalized(new_params)
    du = np.abs(u1 - u0)
    dw = np.abs(w1 - w0) * VAR_SCALE
    if fixed.any():
        du = du[..., ~fixed]
        dw = dw[..., ~fixed]
    if du.size == 0:
        return True
    return bool(max(du.max(), dw.max()) <= conv_tol)


@dataclass
class PlanDiagnostics:
    q_history: np.ndarray
    best_row: int
    converged: bool
    iterations: int
    frozen_rows: int
    degraded: bool
    accepted_counts: np.ndarray
    wall_ms: float
    best_mean: np.ndarray = field(repr=False, default=None)
    best_var: np.ndarray = field(repr=False, default=None)
    _trace_fn: Callable = field(repr=False, default=None)
    _trace: object = field(repr=False, default=None)

    @property
    def best_q(self):
        return float(self.q_history[-1, self.best_row])

    @property
    def trace(self):
        """Propagated trace of the chosen restart (computed on first access)."""
        if self._trace is None and self._trace_fn is not None:
            self._trace = self._trace_fn()
        return self._trace

    def to_dict(self):
        return {
            "best_row": int(self.best_row),
            "best_q": self.best_q,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "frozen_rows": int(self.frozen_rows),
            "degraded": bool(self.degraded),
            "wall_ms": float(self.wall_ms),
            "q_history_best": [float(q) for q in self.q_history[:, self.best_row]],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


class OptimizeResult(NamedTuple):
    params: PolicyParams
    q: np.ndarray
    q_history: np.ndarray
    converged: bool
    iterations: int
    frozen: np.ndarray
    accepted_counts: np.ndarray


def optimize_policy(model, state, params, config):
    """Run the safe projected Adam loop on every row of ``params``.

    Deterministic given ``params``: rows never interact, so permuting the
    input rows permutes the output rows the same way.
    """
    config = config.resolve(model)
    evaluate = _row_evaluator(model, state, config)
    span = params.span()
    safe = np.where(span > 0, span, 1.0)

    def natural_grads(gu, gw):
        return gu / safe, gw / safe**2

    def q_eval(candidate):
        u, w = _as_normalized(candidate)
        q, gu, gw = evaluate(u, w)
        return q, natural_grads(gu, gw)

    q, grads = q_eval(params)
    frozen = ~np.isfinite(q) | ~_finite_rows(grads)
    q = np.where(np.isfinite(q), q, -np.inf)
    history = [q.copy()]
    adam = AdamState.zeros(params.shape)
    accepted_counts = np.zeros(params.restarts, dtype=int)
    done = False
    iterations = 0
    for _ in range(config.max_steps):
        if frozen.all():
            break
        iterations += 1
        safe_grads = tuple(np.where(frozen.reshape(-1, 1, 1), 0.0, g) for g in grads)
        res = safe_update(params, safe_grads, config.step_size, q, q_eval, adam, frozen)
        newly_bad = res.accepted & ~_finite_rows(res.grads)
        if newly_bad.any():
            log.debug("freezing %d rows with non-finite gradients", int(newly_bad.sum()))
        frozen = frozen | newly_bad
        done = converged(params, res.params, config.conv_tol)
        params, q, adam, grads = res.params, res.q_after, res.adam, res.grads
        accepted_counts += res.accepted
        history.append(q.copy())
        if done:
            break
    return OptimizeResult(params, q, np.stack(history), done, iterations, frozen, accepted_counts)


def _finite_rows(grads):
    gu, gw = grads
    return np.isfinite(gu).all(axis=(1, 2)) & np.isfinite(gw).all(axis=(1, 2))


class PlanResult(NamedTuple):
    action: np.ndarray
    saved: SavedActions
    diagnostics: PlanDiagnostics


def _pick_best(q, rng):
    top = np.flatnonzero(q == q.max())
    return int(top[0] if len(top) == 1 else rng.choice(top))


def plan_one_step(model, state, config, saved=None, rng=None):
    """One planning call: initialize, optimize all restarts, pick the best row.

    Returns the mean of the best row's first action, the saved suffix of that
    row for warm-starting the next call, and diagnostics.
    """
    started = time.perf_counter()
    config = config.resolve(model)
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng
    state = np.asarray(state, dtype=float)
    if state.shape != (model.n_s,):
        raise ArgumentError(f"state must have shape ({model.n_s},)")
    params = init_policy(model, config, saved if config.save_actions else None, rng)
    result = optimize_policy(model, state, params, config)
    q = result.q
    degraded = bool(result.frozen.all())
    if not np.isfinite(q).any():
        q = np.zeros_like(q)
    best = _pick_best(q, rng)
    if degraded:
        log.warning("all restarts frozen; returning best initial row")
    best_mean = np.asarray(result.params.mean)[best]
    best_var = np.asarray(result.params.var)[best]
    new_saved = SavedActions(best_mean[1:].copy(), best_var[1:].copy()) if config.save_actions else SavedActions.empty()

    def trace():
        return rollout_q(model, state, (best_mean, best_var), gamma=config.gamma, mode=config.mode)

    diag = PlanDiagnostics(
        q_history=result.q_history,
        best_row=best,
        converged=result.converged,
        iterations=result.iterations,
        frozen_rows=int(result.frozen.sum()),
        degraded=degraded,
        accepted_counts=result.accepted_counts,
        wall_ms=(time.perf_counter() - started) * 1000.0,
        best_mean=best_mean,
        best_var=best_var,
        _trace_fn=trace,
    )
    return PlanResult(model.clip_action(best_mean[0].copy()), new_saved, diag)


@dataclass
class EpisodeResult:
    total_reward: float
    steps: int
    success: bool
    trajectory: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    first_success_step: Optional[int] = None
    degraded_plans: int = 0
    clamped_actions: int = 0
    plan_ms: list = field(default_factory=list)

    @property
    def mean_plan_ms(self):
        return float(np.mean(self.plan_ms)) if self.plan_ms else 0.0


def simulate_episode(model, planner, episode_cap=None, rng=None, stop_on_success=False):
    """Closed MPC loop around any planner ``planner(state, saved, rng) -> (action, saved, diag)``.

    Planner randomness and simulator noise come from independent child
    streams of ``rng`` so planners compared on one seed face the same
    initial state and the same noise sequence.
    """
    cap = model.episode_cap if episode_cap is None else episode_cap
    if cap < 0:
        raise ArgumentError("episode_cap must be nonnegative")
    rng = np.random.default_rng(0) if rng is None else rng
    init_rng, sim_rng, plan_rng = rng.spawn(3)
    state = model.initial_state(init_rng)
    states, actions, rewards, plan_ms = [state], [], [], []
    saved, degraded, clamped = None, 0, 0
    first_success = 0 if model.is_success(state) and model.success is not None else None
    terminated = False
    for t in range(cap):
        if stop_on_success and first_success is not None:
            break
        action, saved, diag = planner(state, saved, plan_rng)
        degraded += int(getattr(diag, "degraded", False))
        plan_ms.append(getattr(diag, "wall_ms", 0.0))
        step = step_sim(model, state, action, sim_rng)
        clamped += int(step.clamped)
        state = step.next_state
        states.append(state)
        actions.append(model.clip_action(np.asarray(action, dtype=float)))
        rewards.append(float(step.reward))
        if first_success is None and model.is_success(state):
            first_success = t + 1
        if model.is_terminal(state):
            terminated = True
            break
    steps = len(actions)
    if model.success is None:
        # survival tasks succeed by lasting to the cap
        success = model.terminal is not None and not terminated and steps == cap
    else:
        success = first_success is not None
    return EpisodeResult(
        total_reward=float(np.sum(rewards)),
        steps=steps,
        success=bool(success),
        trajectory=np.asarray(states),
        actions=np.asarray(actions).reshape(steps, model.n_a),
        rewards=np.asarray(rewards),
        first_success_step=first_success,
        degraded_plans=degraded,
        clamped_actions=clamped,
        plan_ms=plan_ms,
    )


def disprod_planner(model, config):
    config = config.resolve(model)

    def planner(state, saved, rng):
        return plan_one_step(model, state, config, saved, rng)

    return planner


def run_episode(model, config, episode_cap=None, rng=None, stop_on_success=False):
    """Plan, execute the first action, repeat until done or the cap."""
    return simulate_episode(model, disprod_planner(model, config), episode_cap, rng, stop_on_success)
