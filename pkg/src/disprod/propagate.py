"""Moment propagation of product-form marginals through the encapsulated model.

Each step evaluates the transition, its Jacobians and its pure second
partials at the current means (noise mean 0) and updates

    mean' = T(mean) + 0.5 * (H_s v_s + H_a v_a + H_eps v_eps)
    var'  = (J_s*J_s) v_s + (J_a*J_a) v_a + (J_eps*J_eps) v_eps

with noise variance fixed at 1.  The expected reward uses the same
second-order mean correction.  All functions work on numpy or jax arrays
with optional trailing batch dimensions, and the jitted rollout is
differentiable end to end.
"""

import csv
import enum
from dataclasses import dataclass
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np

from disprod.autodiff import eval_partials
from disprod.autodiff.hyperdual import _xp
from disprod.envs.base import BINARY, apply_transition
from disprod.errors import ArgumentError, PropagationError


class Mode(str, enum.Enum):
    COMPLETE = "complete"
    NO_VARIANCE = "no_variance"
    STATE_VARIANCE = "state_variance"

    @classmethod
    def parse(cls, value):
        try:
            return cls(value)
        except ValueError:
            raise ArgumentError(f"unknown propagation mode {value!r}") from None

    def weights(self):
        """Multipliers applied to (state, action, noise) variances."""
        return {
            Mode.COMPLETE: (1.0, 1.0, 1.0),
            Mode.NO_VARIANCE: (0.0, 0.0, 0.0),
            Mode.STATE_VARIANCE: (1.0, 0.0, 1.0),
        }[self]


@dataclass(frozen=True)
class MarginalState:
    mean: object
    var: object
    kinds: tuple = None

    @classmethod
    def point(cls, state, kinds=None):
        """Exactly known state: zero variance (binary variables keep p(1-p))."""
        state = np.asarray(state, dtype=float)
        var = np.zeros_like(state)
        if kinds is not None:
            mask = np.array([k == BINARY for k in kinds])
            var = np.where(mask, state * (1.0 - state), var)
        return cls(state, var, tuple(kinds) if kinds is not None else None)

    def validate(self):
        var = np.asarray(self.var)
        if np.any(var < 0):
            raise ArgumentError("negative variance in marginal state")
        if self.kinds is not None:
            mean = np.asarray(self.mean)
            for k, kind in enumerate(self.kinds):
                if kind == BINARY:
                    if np.any((mean[k] < 0) | (mean[k] > 1)):
                        raise ArgumentError(f"binary variable {k} has mean outside [0, 1]")
                    if not np.allclose(var[k], mean[k] * (1 - mean[k]), atol=1e-12):
                        raise ArgumentError(f"binary variable {k} variance is not p(1-p)")
        return self


@dataclass(frozen=True)
class ActionMarginal:
    mean: object
    var: object


@dataclass(frozen=True)
class Trace:
    """Propagated means/variances for depths ``0..D`` and expected rewards for ``0..D-1``."""

    means: np.ndarray
    vars: np.ndarray
    expected_rewards: np.ndarray
    q_value: float
    gamma: float = 1.0
    state_names: tuple = ()

    @property
    def depth(self):
        return len(self.expected_rewards)

    @property
    def marginals(self):
        return [MarginalState(self.means[t], self.vars[t]) for t in range(self.depth + 1)]

    def rows(self):
        names = self.state_names or tuple(f"s{k}" for k in range(self.means.shape[1]))
        for t in range(self.depth + 1):
            for k, name in enumerate(names):
                yield t, name, float(self.means[t, k]), float(self.vars[t, k])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "var_name", "mean", "var"])
            for row in self.rows():
                writer.writerow([row[0], row[1], repr(row[2]), repr(row[3])])


def _weighted(mode, v_s, v_a, v_e):
    ws, wa, we = Mode.parse(mode).weights()
    return v_s * ws, v_a * wa, v_e * we


def _reward_fn(model):
    def fn(s, a, e):
        return [model.reward(s, a)]

    return fn


def propagate_step(model, provider, s, a, mode=Mode.COMPLETE):
    """Next-step marginals from current state and action marginals.

    ``provider(fn, s, a, e)`` returns a :class:`PartialsBundle`; the default
    choice is :func:`disprod.autodiff.eval_partials`.  Means and variances may
    carry trailing batch dimensions.
    """
    provider = provider or eval_partials
    mean_s, var_s = s.mean, s.var
    xp = _xp(mean_s, var_s, a.mean, a.var)
    batch = xp.shape(mean_s)[1:]
    e_mean = [xp.zeros(batch)] * model.n_eps
    v_e = xp.ones((model.n_eps,) + tuple(batch))
    v_s, v_a, v_e = _weighted(mode, var_s, a.var, v_e)

    b = provider(model.transition, list(mean_s), list(a.mean), e_mean)
    mean = b.value + 0.5 * (
        (b.h_s * v_s[None]).sum(1) + (b.h_a * v_a[None]).sum(1) + (b.h_eps * v_e[None]).sum(1)
    )
    var = (
        (b.j_s * b.j_s * v_s[None]).sum(1)
        + (b.j_a * b.j_a * v_a[None]).sum(1)
        + (b.j_eps * b.j_eps * v_e[None]).sum(1)
    )
    var = xp.maximum(var, 0.0)
    binary = np.array([k == BINARY for k in model.kinds])
    if binary.any():
        mask = binary.reshape((-1,) + (1,) * len(batch))
        mean = xp.where(mask, xp.clip(mean, 0.0, 1.0), mean)
        var = xp.where(mask, mean * (1.0 - mean), var)
    return MarginalState(mean, var, tuple(model.kinds))


def expected_reward(model, provider, s, a, mode=Mode.COMPLETE):
    """Second-order estimate ``R(mean) + 0.5 * (H_s v_s + H_a v_a)``."""
    provider = provider or eval_partials
    v_s, v_a, _ = _weighted(mode, s.var, a.var, 0.0)
    b = provider(_reward_fn(model), list(s.mean), list(a.mean), [])
    return b.value[0] + 0.5 * ((b.h_s[0] * v_s).sum(0) + (b.h_a[0] * v_a).sum(0))


@partial(jax.jit, static_argnums=(0, 1, 2))
def _trace_core(model, mode, gamma, s0, means, vars_):
    """Batched rollout.  ``s0``: (n_s,); ``means``/``vars_``: (D, n_a, B)."""
    batch = means.shape[2:]
    s0 = jnp.broadcast_to(s0.reshape((model.n_s,) + (1,) * len(batch)), (model.n_s,) + batch)
    binary = np.array([k == BINARY for k in model.kinds]).reshape((-1,) + (1,) * len(batch))
    v0 = jnp.where(binary, s0 * (1.0 - s0), 0.0)

    def body(carry, xs):
        ms, vs = carry
        ma, va = xs
        st = MarginalState(ms, vs)
        act = ActionMarginal(ma, va)
        r = expected_reward(model, eval_partials, st, act, mode)
        nxt = propagate_step(model, eval_partials, st, act, mode)
        return (nxt.mean, nxt.var), (nxt.mean, nxt.var, r)

    _, (ms, vs, rs) = jax.lax.scan(body, (s0, v0), (means, vars_))
    ms = jnp.concatenate([s0[None], ms])
    vs = jnp.concatenate([v0[None], vs])
    discounts = gamma ** jnp.arange(rs.shape[0], dtype=float)
    q = (discounts.reshape((-1,) + (1,) * len(batch)) * rs).sum(0)
    return ms, vs, rs, q


def q_values(model, s0, means, vars_, gamma=1.0, mode=Mode.COMPLETE):
    """Q-estimates for a batch of policies; ``means``/``vars_`` shaped (B, D, n_a)."""
    means = jnp.moveaxis(jnp.asarray(means, dtype=float), 0, -1)
    vars_ = jnp.moveaxis(jnp.asarray(vars_, dtype=float), 0, -1)
    return _trace_core(model, Mode.parse(mode), float(gamma), jnp.asarray(s0, dtype=float), means, vars_)[3]


def _policy_arrays(policy, n_a):
    if isinstance(policy, tuple) and len(policy) == 2 and not isinstance(policy[0], ActionMarginal):
        means, vars_ = policy
    else:
        means = [np.asarray(p.mean, dtype=float) for p in policy]
        vars_ = [np.asarray(p.var, dtype=float) for p in policy]
    means = np.asarray(means, dtype=float).reshape(-1, n_a)
    vars_ = np.asarray(vars_, dtype=float).reshape(-1, n_a)
    if means.shape != vars_.shape or len(means) == 0:
        raise ArgumentError("policy needs matching, nonempty mean and variance sequences")
    if np.any(vars_ < 0):
        raise ArgumentError("policy variances must be nonnegative")
    return means, vars_


def rollout_q(model, s0, policy, gamma=None, mode=Mode.COMPLETE):
    """Propagate an exactly known start state through a ``D``-step policy.

    ``policy`` is a sequence of :class:`ActionMarginal` or a ``(means, vars)``
    pair of (D, n_a) arrays.  The returned trace's ``q_value`` is the
    discounted sum of expected rewards.
    """
    gamma = model.discount if gamma is None else gamma
    means, vars_ = _policy_arrays(policy, model.n_a)
    s0 = np.asarray(s0, dtype=float)
    if s0.shape != (model.n_s,):
        raise ArgumentError(f"start state must have shape ({model.n_s},)")
    ms, vs, rs, q = _trace_core(model, Mode.parse(mode), float(gamma), jnp.asarray(s0), jnp.asarray(means)[..., None], jnp.asarray(vars_)[..., None])
    ms, vs, rs = np.asarray(ms[..., 0]), np.asarray(vs[..., 0]), np.asarray(rs[..., 0])
    bad = ~(np.isfinite(ms).all(1) & np.isfinite(vs).all(1))
    if bad.any() or not np.isfinite(rs).all():
        depth = int(np.argmax(bad)) if bad.any() else int(np.argmax(~np.isfinite(rs)))
        raise PropagationError(f"propagation became non-finite at depth {depth}", step=depth)
    return Trace(ms, vs, rs, float(q[0]), float(gamma), tuple(model.state_names))


@dataclass(frozen=True)
class EmpiricalReport:
    """Per-step moments: propagated (complete and no-variance) against Monte Carlo."""

    empirical_mean: np.ndarray
    empirical_var: np.ndarray
    complete: Trace
    no_variance: Trace
    n_samples: int

    @property
    def complete_mean_error(self):
        return np.abs(self.complete.means - self.empirical_mean)

    @property
    def no_variance_mean_error(self):
        return np.abs(self.no_variance.means - self.empirical_mean)

    @property
    def complete_var_error(self):
        return np.abs(self.complete.vars - self.empirical_var)

    @property
    def no_variance_var_error(self):
        return np.abs(self.no_variance.vars - self.empirical_var)

    def rows(self, state_names):
        for t in range(self.empirical_mean.shape[0]):
            for k, name in enumerate(state_names):
                yield {
                    "step": t,
                    "var_name": name,
                    "empirical_mean": float(self.empirical_mean[t, k]),
                    "empirical_var": float(self.empirical_var[t, k]),
                    "complete_mean": float(self.complete.means[t, k]),
                    "complete_var": float(self.complete.vars[t, k]),
                    "nv_mean": float(self.no_variance.means[t, k]),
                    "nv_var": float(self.no_variance.vars[t, k]),
                }


def sample_policy_actions(means, vars_, low, high, rng, n_samples):
    """Draw actions uniformly on ``mean +/- sqrt(3 var)``, the interval with the given moments."""
    half = np.sqrt(3.0 * np.maximum(vars_, 0.0))
    u = rng.uniform(-1.0, 1.0, size=(n_samples,) + np.shape(means))
    return np.clip(means + half * u, low, high)


def compare_to_empirical(model, s0, policy, depth, n_samples, rng, chunk=20000):
    """Monte-Carlo check of the propagated marginals for a fixed policy."""
    if n_samples < 100:
        raise ArgumentError("n_samples must be at least 100")
    means, vars_ = _policy_arrays(policy, model.n_a)
    if len(means) < depth:
        raise ArgumentError(f"policy has {len(means)} steps, depth {depth} requested")
    means, vars_ = means[:depth], vars_[:depth]
    complete = rollout_q(model, s0, (means, vars_), mode=Mode.COMPLETE)
    nv = rollout_q(model, s0, (means, vars_), mode=Mode.NO_VARIANCE)

    total = np.zeros((depth + 1, model.n_s))
    total_sq = np.zeros((depth + 1, model.n_s))
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        acts = sample_policy_actions(means, vars_, model.action_low, model.action_high, rng, n)
        state = np.broadcast_to(np.asarray(s0, dtype=float), (n, model.n_s)).copy()
        total[0] += state.sum(0)
        total_sq[0] += (state**2).sum(0)
        for t in range(depth):
            eps = rng.standard_normal((n, model.n_eps))
            state = apply_transition(model, state, acts[:, t], eps, exact=True)
            total[t + 1] += state.sum(0)
            total_sq[t + 1] += (state**2).sum(0)
        done += n
    mean = total / n_samples
    var = np.maximum(total_sq / n_samples - mean**2, 0.0) * n_samples / (n_samples - 1)
    return EmpiricalReport(mean, var, complete, nv, n_samples)
