import numpy as np

from disprod.envs.base import CONTINUOUS, EncapsulatedModel, smooth_ge


def make_simple_env(alpha=0.0, goal=(2.0, 2.0), goal_radius=0.3, goal_beta=1.0, step_bound=0.2, horizon=20, episode_cap=50):
    """Point mass whose x-noise has a nonzero mean and nonzero second partials.

    ``x' = x + dx + alpha*(0.1*eps + eps**2)``, ``y' = y + dy``.  Reward is a
    smoothed 0-1 indicator of being within ``goal_radius`` of ``goal``.
    """
    gx, gy = goal

    def transition(s, a, e):
        eps = e[0]
        return [s[0] + a[0] + alpha * (0.1 * eps + eps * eps), s[1] + a[1]]

    def reward(s, a):
        dx, dy = s[0] - gx, s[1] - gy
        return smooth_ge(goal_radius**2, dx * dx + dy * dy, goal_beta)

    def success(state):
        return np.hypot(state[0] - gx, state[1] - gy) <= goal_radius

    return EncapsulatedModel(
        name="simple_env",
        state_names=("x", "y"),
        action_names=("dx", "dy"),
        kinds=(CONTINUOUS, CONTINUOUS),
        action_low=[-step_bound, -step_bound],
        action_high=[step_bound, step_bound],
        n_eps=1,
        transition=transition,
        reward=reward,
        noise_scale=alpha,
        horizon_default=horizon,
        episode_cap=episode_cap,
        init_state=lambda rng: np.zeros(2),
        success=success,
        params={"alpha": alpha, "goal": tuple(goal), "goal_radius": goal_radius, "goal_beta": goal_beta},
    )
