"""Regenerate oracles.json from independent numpy/scipy computations.

Nothing here imports the package under test; run it directly with
``python tests/oracles/build_oracles.py``.
"""

import json
import math
from pathlib import Path

import numpy as np
from scipy.special import expit

OUT = Path(__file__).with_name("oracles.json")

# pendulum constants (Gym defaults)
G, M, L, DT = 9.81, 1.0, 1.0, 0.05
C1, C2 = 3 * G / (2 * L), 3 / (M * L**2)


def pendulum_step(z, alpha=1.0):
    theta, theta_dot, a, e = z
    new_dot = theta_dot + (-C1 * math.sin(theta + math.pi) + C2 * a) * DT
    return np.array([theta + (new_dot + alpha * e) * DT, new_dot])


def central_partials(f, z, h):
    z = np.asarray(z, dtype=float)
    first, second = [], []
    f0 = f(z)
    for k in range(len(z)):
        dz = np.zeros_like(z)
        dz[k] = h
        fp, fm = f(z + dz), f(z - dz)
        first.append((fp - fm) / (2 * h))
        second.append((fp - 2 * f0 + fm) / h**2)
    return np.array(first).T, np.array(second).T


def lq_first_action(a, b, q, r, qf, depth, s0):
    """Finite-horizon discrete Riccati recursion for x' = a x + b u, reward -(q x^2 + r u^2)."""
    p = qf
    gains = []
    for _ in range(depth):
        k = (b * p * a) / (r + b * p * b)
        gains.append(k)
        p = q + a * p * a - a * p * b * k
    return -gains[-1] * s0


def main():
    out = {}
    out["sigmoid_5"] = float(expit(5.0))
    out["sigmoid_minus_10"] = float(expit(-10.0))

    z = [0.3, 0.1, 0.5, 0.0]
    first, second = central_partials(pendulum_step, z, 1e-4)
    out["pendulum_fd_point"] = z
    out["pendulum_fd_first"] = first.tolist()
    out["pendulum_fd_second"] = second.tolist()

    # gate reward 100*sigmoid(10(x-0.45)) under x ~ N(0.46, 0.001)
    rng = np.random.default_rng(12345)
    x = rng.normal(0.46, math.sqrt(0.001), size=100_000)
    g = 100 * expit(10 * (x - 0.45))
    out["gate_mc"] = {"mean_x": 0.46, "var_x": 0.001, "estimate": float(g.mean()), "stderr": float(g.std(ddof=1) / math.sqrt(len(g)))}

    # scalar LQ: x' = x + 0.5 u, reward -(x^2 + 0.1 u^2) over 30 steps, terminal weight 0
    # the reward at step t sees (x_t, u_t), so the last state x_D is unpenalised
    lq = {"a": 1.0, "b": 0.5, "q": 1.0, "r": 0.1, "depth": 30, "s0": 1.0}
    # reward uses x_t for t < D, so the recursion starts with terminal weight 0
    lq["u_star"] = float(lq_first_action(lq["a"], lq["b"], lq["q"], lq["r"], 0.0, lq["depth"], lq["s0"]))
    # brute-force check on a grid of first actions with the rest optimal
    out["lq"] = lq

    out["init_var_mu_0_9"] = (1.0 - 0.9) ** 2 / 12.0
    OUT.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
