import json
from pathlib import Path

import numpy as np
import pytest

from disprod.envs.base import CONTINUOUS, EncapsulatedModel

ORACLES = json.loads((Path(__file__).parent / "oracles" / "oracles.json").read_text())


@pytest.fixture(scope="session")
def oracles():
    return ORACLES


def linear_model(a_diag, b_diag, c_diag, offset, q, r, low=-1.0, high=1.0, name="affine"):
    """Affine dynamics with diagonal couplings and a separable quadratic reward.

    State i is driven by action i and noise i only, so the product-form
    marginals are exact.
    """
    a_diag, b_diag, c_diag, offset = (np.asarray(v, dtype=float) for v in (a_diag, b_diag, c_diag, offset))
    q, r = np.asarray(q, dtype=float), np.asarray(r, dtype=float)
    n = len(a_diag)

    def transition(s, a, e):
        return [a_diag[i] * s[i] + b_diag[i] * a[i] + c_diag[i] * e[i] + offset[i] for i in range(n)]

    def reward(s, a):
        total = 0.0
        for i in range(n):
            total = total - q[i] * s[i] * s[i] - r[i] * a[i] * a[i] + 0.5 * s[i]
        return total

    return EncapsulatedModel(
        name=name,
        state_names=tuple(f"x{i}" for i in range(n)),
        action_names=tuple(f"u{i}" for i in range(n)),
        kinds=(CONTINUOUS,) * n,
        action_low=[low] * n,
        action_high=[high] * n,
        n_eps=n,
        transition=transition,
        reward=reward,
    )


def lq_model(oracle):
    a, b, q, r = oracle["a"], oracle["b"], oracle["q"], oracle["r"]
    return EncapsulatedModel(
        name="lq",
        state_names=("x",),
        action_names=("u",),
        kinds=(CONTINUOUS,),
        action_low=[-2.0],
        action_high=[2.0],
        n_eps=0,
        transition=lambda s, u, e: [a * s[0] + b * u[0]],
        reward=lambda s, u: -(q * s[0] * s[0] + r * u[0] * u[0]),
        horizon_default=oracle["depth"],
    )


def quadratic_bandit(target=0.3):
    """One-step, one-action model whose reward peaks at ``target``."""
    return EncapsulatedModel(
        name="bandit",
        state_names=("x",),
        action_names=("u",),
        kinds=(CONTINUOUS,),
        action_low=[-1.0],
        action_high=[1.0],
        n_eps=1,
        transition=lambda s, u, e: [s[0] + 0.0 * e[0]],
        reward=lambda s, u: -(u[0] - target) * (u[0] - target),
        horizon_default=1,
        episode_cap=1,
    )
