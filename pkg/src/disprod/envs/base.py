from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from disprod.autodiff import sigmoid
from disprod.errors import ArgumentError

CONTINUOUS = "continuous"
BINARY = "binary"


def smooth_ge(x, target, beta=1.0):
    """Smooth ``x >= target``: ``sigmoid(10 * beta * (x - target))``."""
    if np.any(np.asarray(beta) <= 0):
        raise ArgumentError("beta must be positive")
    return sigmoid(10.0 * beta * (x - target))


@dataclass(frozen=True, eq=False)
class EncapsulatedModel:
    """Deterministic transition ``T(s, a, eps)`` plus everything a planner needs.

    ``transition`` and ``reward`` take sequences of per-variable components
    (arrays or hyper-duals) and are written with the elementary functions of
    :mod:`disprod.autodiff`, so they serve simulation, propagation and
    differentiation alike.  ``sim_transition`` overrides the simulator step
    for environments whose exact dynamics are non-smooth.
    """

    name: str
    state_names: tuple
    action_names: tuple
    kinds: tuple
    action_low: np.ndarray
    action_high: np.ndarray
    n_eps: int
    transition: Callable
    reward: Callable
    noise_scale: float = 0.0
    discount: float = 1.0
    horizon_default: int = 25
    episode_cap: int = 200
    init_state: Callable = None
    terminal: Callable = None
    success: Callable = None
    sim_transition: Callable = None
    action_kinds: tuple = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        low = np.asarray(self.action_low, dtype=float)
        high = np.asarray(self.action_high, dtype=float)
        object.__setattr__(self, "action_low", low)
        object.__setattr__(self, "action_high", high)
        if self.action_kinds is None:
            object.__setattr__(self, "action_kinds", (CONTINUOUS,) * len(low))
        if np.any(low > high):
            raise ArgumentError(f"{self.name}: action_low exceeds action_high")
        if not 0.0 < self.discount <= 1.0:
            raise ArgumentError("discount must lie in (0, 1]")
        if self.noise_scale < 0:
            raise ArgumentError("noise_scale must be nonnegative")
        if len(self.kinds) != len(self.state_names):
            raise ArgumentError("kinds must tag every state variable")

    @property
    def n_s(self):
        return len(self.state_names)

    @property
    def n_a(self):
        return len(self.action_names)

    @property
    def binary_mask(self):
        return np.array([k == BINARY for k in self.kinds])

    def initial_state(self, rng):
        if self.init_state is None:
            return np.zeros(self.n_s)
        return np.asarray(self.init_state(rng), dtype=float)

    def is_terminal(self, state):
        return bool(self.terminal(np.asarray(state))) if self.terminal else False

    def is_success(self, state):
        return bool(self.success(np.asarray(state))) if self.success else False

    def clip_action(self, action):
        return np.clip(action, self.action_low, self.action_high)


def _components(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise ArgumentError(f"expected trailing dimension {n}, got shape {x.shape}")
    return [x[..., k] for k in range(n)]


def apply_transition(model, state, action, eps, exact=True):
    """Evaluate the transition on numpy arrays with components on the last axis."""
    fn = model.sim_transition if exact and model.sim_transition is not None else model.transition
    s = _components(state, model.n_s)
    a = _components(action, model.n_a)
    e = _components(eps, model.n_eps) if model.n_eps else []
    shape = np.broadcast_shapes(np.shape(state)[:-1], np.shape(action)[:-1])
    return np.stack([np.broadcast_to(np.asarray(c, dtype=float), shape) for c in fn(s, a, e)], axis=-1)


def apply_reward(model, state, action):
    s = _components(state, model.n_s)
    a = _components(action, model.n_a)
    shape = np.broadcast_shapes(np.shape(state)[:-1], np.shape(action)[:-1])
    return np.broadcast_to(np.asarray(model.reward(s, a), dtype=float), shape)


class SimStep(NamedTuple):
    next_state: np.ndarray
    reward: np.ndarray
    clamped: bool


def step_sim(model, state, action, rng, eps=None):
    """Sample one simulator step.

    Noise is drawn i.i.d. standard normal (unless ``eps`` is injected) and
    scaled inside the transition.  Out-of-bounds actions are clipped and
    reported through ``clamped``.  Works on single states or batches.
    """
    action = np.asarray(action, dtype=float)
    clipped = model.clip_action(action)
    clamped = bool(np.any(clipped != action))
    state = np.asarray(state, dtype=float)
    batch = np.broadcast_shapes(state.shape[:-1], action.shape[:-1])
    if eps is None:
        eps = rng.standard_normal(batch + (model.n_eps,))
    nxt = apply_transition(model, state, clipped, eps, exact=True)
    reward = apply_reward(model, state, clipped)
    return SimStep(nxt, reward, clamped)


@dataclass
class EpisodeState:
    state: np.ndarray
    step_count: int = 0
    cumulative_reward: float = 0.0
    done: bool = False
    cap: int = 200

    def advance(self, next_state, reward, terminal):
        if self.done:
            raise ArgumentError("episode already finished")
        self.state = next_state
        self.step_count += 1
        self.cumulative_reward += float(reward)
        self.done = bool(terminal) or self.step_count >= self.cap
