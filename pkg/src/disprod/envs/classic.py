"""Noisy, smoothed versions of the Gym classic-control tasks.

Physical constants follow the Gym defaults.  Clipping and termination tests
inside the dynamics are replaced by smooth surrogates so the transition is
twice differentiable everywhere; exact termination is applied by the
simulator only.
"""

import math

import numpy as np

from disprod.autodiff import cos, exp, sin, smooth_clamp, where
from disprod.autodiff.partials import PartialsBundle
from disprod.envs.base import BINARY, CONTINUOUS, EncapsulatedModel, smooth_ge

# cart-pole
GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
TOTAL_MASS = MASS_CART + MASS_POLE
POLE_HALF_LENGTH = 0.5
POLEMASS_LENGTH = MASS_POLE * POLE_HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
X_LIMIT = 2.4
THETA_LIMIT = 12 * 2 * math.pi / 360

# pendulum
PENDULUM_G = 9.81
PENDULUM_M = 1.0
PENDULUM_L = 1.0
PENDULUM_DT = 0.05
PENDULUM_MAX_TORQUE = 2.0

# mountain car
MC_POWER = 0.0015
MC_MIN_POS = -1.2
MC_MAX_POS = 0.6
MC_MAX_SPEED = 0.07
MC_GOAL = 0.45


def _cartpole_dynamics(s, force):
    x, x_dot, theta, theta_dot = s[0], s[1], s[2], s[3]
    costh, sinth = cos(theta), sin(theta)
    temp = (force + POLEMASS_LENGTH * theta_dot * theta_dot * sinth) / TOTAL_MASS
    theta_acc = (GRAVITY * sinth - costh * temp) / (
        POLE_HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * costh * costh / TOTAL_MASS)
    )
    x_acc = temp - POLEMASS_LENGTH * theta_acc * costh / TOTAL_MASS
    return [x + TAU * x_dot, x_dot + TAU * x_acc, theta + TAU * theta_dot, theta_dot + TAU * theta_acc]


def _survival(s, sharpness):
    # product of smooth within-bounds gates on x and theta
    x, theta = s[0], s[2]
    return smooth_ge(X_LIMIT**2, x * x, sharpness / X_LIMIT**2) * smooth_ge(
        THETA_LIMIT**2, theta * theta, sharpness / THETA_LIMIT**2
    )


def _cartpole_init(rng):
    return rng.uniform(-0.05, 0.05, size=4)


def _cartpole_terminal(state):
    return abs(state[0]) > X_LIMIT or abs(state[2]) > THETA_LIMIT


def make_cartpole(alpha=0.0, gate_sharpness=1.0, horizon=25, episode_cap=200):
    """Continuous cart-pole; force noise ``force + alpha * eps``.

    Reward is the smoothed survival indicator.  ``gate_sharpness`` is the
    logistic slope in units of the squared limits, so 1.0 puts the gate at
    ``sigmoid(10 * (1 - (x / X_LIMIT)**2))``.
    """

    def transition(s, a, e):
        return _cartpole_dynamics(s, FORCE_MAG * a[0] + alpha * e[0])

    def reward(s, a):
        return _survival(s, gate_sharpness)

    return EncapsulatedModel(
        name="cartpole",
        state_names=("x", "x_dot", "theta", "theta_dot"),
        action_names=("force",),
        kinds=(CONTINUOUS,) * 4,
        action_low=[-1.0],
        action_high=[1.0],
        n_eps=1,
        transition=transition,
        reward=reward,
        noise_scale=alpha,
        horizon_default=horizon,
        episode_cap=episode_cap,
        init_state=_cartpole_init,
        terminal=_cartpole_terminal,
        params={"alpha": alpha, "gate_sharpness": gate_sharpness},
    )


def make_cartpole_hybrid(alpha=0.0, marker=0.5, marker_beta=5.0, gate_sharpness=1.0, horizon=25, episode_cap=200):
    """Cart-pole with a binary ``right_of_marker`` state variable.

    Reward is 3 while the flag is set and 1 otherwise, times the survival
    gate.  The simulator sets the flag with the exact indicator; the planning
    model uses ``smooth_ge`` so the propagated flag stays a probability.
    """

    def transition(s, a, e):
        nxt = _cartpole_dynamics(s, FORCE_MAG * a[0] + alpha * e[0])
        return nxt + [smooth_ge(nxt[0], marker, marker_beta)]

    def sim_transition(s, a, e):
        nxt = _cartpole_dynamics(s, FORCE_MAG * a[0] + alpha * e[0])
        return nxt + [where(nxt[0] >= marker, 1.0, 0.0)]

    def reward(s, a):
        return _survival(s, gate_sharpness) * (1.0 + 2.0 * s[4])

    def init(rng):
        return np.concatenate([_cartpole_init(rng), [0.0]])

    return EncapsulatedModel(
        name="cartpole_hybrid",
        state_names=("x", "x_dot", "theta", "theta_dot", "right_of_marker"),
        action_names=("force",),
        kinds=(CONTINUOUS,) * 4 + (BINARY,),
        action_low=[-1.0],
        action_high=[1.0],
        n_eps=1,
        transition=transition,
        sim_transition=sim_transition,
        reward=reward,
        noise_scale=alpha,
        horizon_default=horizon,
        episode_cap=episode_cap,
        init_state=init,
        terminal=_cartpole_terminal,
        params={"alpha": alpha, "marker": marker, "marker_beta": marker_beta, "gate_sharpness": gate_sharpness},
    )


def pendulum_constants(g=PENDULUM_G, m=PENDULUM_M, length=PENDULUM_L):
    return 3.0 * g / (2.0 * length), 3.0 / (m * length**2)


def make_pendulum(alpha=0.0, noise="exp", dt=PENDULUM_DT, horizon=25, episode_cap=200):
    """Pendulum with ``theta = 0`` upright.

    ``noise="exp"`` perturbs the angle update by ``alpha * exp(eps)``;
    ``noise="additive"`` uses ``alpha * eps`` instead (the form whose
    closed-form partials are given by :func:`pendulum_analytic_partials`
    with vanishing noise Hessian).  The velocity is not clipped.
    """
    c1, c2 = pendulum_constants()

    def transition(s, a, e):
        theta, theta_dot = s[0], s[1]
        new_dot = theta_dot + (-c1 * sin(theta + math.pi) + c2 * a[0]) * dt
        kick = alpha * exp(e[0]) if noise == "exp" else alpha * e[0]
        return [theta + (new_dot + kick) * dt, new_dot]

    def reward(s, a):
        theta, theta_dot = s[0], s[1]
        return -(2.0 * (1.0 - cos(theta)) + 0.1 * theta_dot * theta_dot + 0.001 * a[0] * a[0])

    def init(rng):
        return np.array([rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)])

    return EncapsulatedModel(
        name="pendulum",
        state_names=("theta", "theta_dot"),
        action_names=("torque",),
        kinds=(CONTINUOUS, CONTINUOUS),
        action_low=[-PENDULUM_MAX_TORQUE],
        action_high=[PENDULUM_MAX_TORQUE],
        n_eps=1,
        transition=transition,
        reward=reward,
        noise_scale=alpha,
        horizon_default=horizon,
        episode_cap=episode_cap,
        init_state=init,
        params={"alpha": alpha, "noise": noise, "dt": dt, "c1": c1, "c2": c2},
    )


def pendulum_analytic_partials(state, action, eps=0.0, alpha=1.0, noise="additive", dt=PENDULUM_DT):
    """Closed-form Jacobians and pure second partials of the pendulum step."""
    c1, c2 = pendulum_constants()
    theta = np.asarray(state[0], dtype=float)
    theta_dot = np.asarray(state[1], dtype=float)
    a = np.asarray(action[0], dtype=float)
    e = np.asarray(eps, dtype=float)
    shape = np.broadcast_shapes(theta.shape, theta_dot.shape, a.shape, e.shape)
    z = np.zeros(shape)
    one = np.ones(shape)
    cth = np.cos(theta + math.pi)
    sth = np.sin(theta + math.pi)
    new_dot = theta_dot + (-c1 * sth + c2 * a) * dt
    if noise == "exp":
        kick, dkick, d2kick = alpha * np.exp(e), alpha * np.exp(e), alpha * np.exp(e)
    else:
        kick, dkick, d2kick = alpha * e, alpha * one, z
    value = np.stack([theta + (new_dot + kick) * dt, new_dot])
    j_s = np.array([[1.0 - c1 * cth * dt**2, dt * one], [-c1 * cth * dt, one]])
    j_a = np.array([[c2 * dt**2 * one], [c2 * dt * one]])
    j_eps = np.array([[dkick * dt], [z]])
    h_s = np.array([[c1 * sth * dt**2, z], [c1 * sth * dt, z]])
    h_a = np.array([[z], [z]])
    h_eps = np.array([[d2kick * dt], [z]])
    return PartialsBundle(value=value, j_s=j_s, j_a=j_a, j_eps=j_eps, h_s=h_s, h_a=h_a, h_eps=h_eps)


def _mc_step(s, a, e, alpha):
    x, v = s[0], s[1]
    v_new = smooth_clamp(v + a[0] * MC_POWER - 0.0025 * cos(3.0 * x), -MC_MAX_SPEED, MC_MAX_SPEED, 2000.0)
    v_new = v_new + alpha * e[0]
    x_new = smooth_clamp(x + v_new, MC_MIN_POS, MC_MAX_POS, 200.0)
    return [x_new, v_new]


def _mc_init(rng):
    return np.array([rng.uniform(-0.6, -0.4), 0.0])


def make_mountain_car(
    alpha=0.0, beta=1.0, goal_reward=100.0, n_redundant=0, redundant_penalty=0.1, horizon=100, episode_cap=200, name=None
):
    """Continuous mountain car with a smooth goal gate.

    Per-step reward ``goal_reward * smooth_ge(x, goal, beta) - 0.1 * u**2`` minus
    ``redundant_penalty * sum(r**2)`` over the redundant actions, which do not
    enter the dynamics.  The episode does not stop at the goal; success is
    recorded the first time ``x >= goal``.
    """
    if name is None:
        name = "mountain_car_highdim" if n_redundant else ("mountain_car" if beta == 1.0 else "mountain_car_sparse")

    def transition(s, a, e):
        return _mc_step(s, a, e, alpha)

    def reward(s, a):
        r = goal_reward * smooth_ge(s[0], MC_GOAL, beta) - 0.1 * a[0] * a[0]
        for extra in a[1:]:
            r = r - redundant_penalty * extra * extra
        return r

    return EncapsulatedModel(
        name=name,
        state_names=("x", "v"),
        action_names=("force",) + tuple(f"redundant_{i}" for i in range(n_redundant)),
        kinds=(CONTINUOUS, CONTINUOUS),
        action_low=[-1.0] * (1 + n_redundant),
        action_high=[1.0] * (1 + n_redundant),
        n_eps=1,
        transition=transition,
        reward=reward,
        noise_scale=alpha,
        horizon_default=horizon,
        episode_cap=episode_cap,
        init_state=_mc_init,
        success=lambda state: state[0] >= MC_GOAL,
        params={"alpha": alpha, "beta": beta, "goal_reward": goal_reward, "n_redundant": n_redundant, "redundant_penalty": redundant_penalty},
    )
