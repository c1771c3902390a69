"""Propagated versus Monte-Carlo state distributions for a fixed policy."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from disprod.envs import make_env
from disprod.errors import ArgumentError
from disprod.optimizer import PlannerConfig, init_policy, plan_one_step
from disprod.propagate import compare_to_empirical

STUDY_ENVS = ("simple_env", "pendulum")
STUDY_COLUMNS = (
    "alpha",
    "step",
    "var_name",
    "empirical_mean",
    "empirical_var",
    "complete_mean",
    "complete_var",
    "nv_mean",
    "nv_var",
)


@dataclass
class StudyResult:
    alpha: float
    report: object
    state_names: tuple

    def terminal_mean_errors(self):
        """(complete, no-variance) absolute mean errors at the final step, per variable."""
        return self.report.complete_mean_error[-1], self.report.no_variance_mean_error[-1]

    def rows(self):
        return [{"alpha": self.alpha, **row} for row in self.report.rows(self.state_names)]


def study_policy(model, depth, source, rng, start=None):
    """A fixed sequence of action marginals.

    ``random`` is one fresh restart, ``deterministic`` the same means with
    zero variance, ``planner`` the best row of one planning call.
    """
    if source in ("random", "deterministic"):
        params = init_policy(model, PlannerConfig(depth=depth, restarts=1), None, rng)
        mean, var = np.asarray(params.mean)[0], np.asarray(params.var)[0]
        return (mean, np.zeros_like(var)) if source == "deterministic" else (mean, var)
    if source == "planner":
        s0 = model.initial_state(rng) if start is None else start
        _, _, diag = plan_one_step(model, s0, PlannerConfig(depth=depth, restarts=50), None, rng)
        return diag.best_mean, diag.best_var
    raise ArgumentError(f"unknown policy source {source!r}; expected 'random', 'deterministic' or 'planner'")


def run_distribution_study(env, alphas, depth, policy_source="random", n_samples=100_000, seed=0, start=None, env_params=None):
    """Compare both propagation modes against sampling, once per noise level.

    The start state and action marginals are fixed across noise levels so
    only the noise changes between rows.
    """
    if env not in STUDY_ENVS:
        raise ArgumentError(f"distribution study supports {', '.join(STUDY_ENVS)}, not {env!r}")
    if n_samples < 100:
        raise ArgumentError("n_samples must be at least 100")
    rng = np.random.default_rng(seed)
    base = make_env(env, {**(env_params or {}), "alpha": 0.0})
    s0 = base.initial_state(rng) if start is None else np.asarray(start, dtype=float)
    policy = study_policy(base, depth, policy_source, rng, s0)
    results = []
    for alpha in alphas:
        model = make_env(env, {**(env_params or {}), "alpha": float(alpha)})
        report = compare_to_empirical(model, s0, policy, depth, n_samples, np.random.default_rng([seed, len(results)]))
        results.append(StudyResult(float(alpha), report, tuple(model.state_names)))
    return results


def write_study(results, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, STUDY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for res in results:
            writer.writerows(res.rows())
    return path
