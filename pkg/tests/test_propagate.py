import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import linear_model
from disprod.autodiff import eval_partials
from disprod.envs import CATALOG, apply_reward, apply_transition, make_env
from disprod.errors import ArgumentError, PropagationError
from disprod.propagate import (
    ActionMarginal,
    MarginalState,
    Mode,
    compare_to_empirical,
    expected_reward,
    propagate_step,
    q_values,
    rollout_q,
    sample_policy_actions,
)

# frozen on first build: pendulum alpha=1, s0=(0.5, -0.3), policy from default_rng(2024)
PENDULUM_Q_D25 = -73.22624305760952


def linear_moments(a, b, c, offset, q, r, s0, means, vars_):
    """Closed-form moment recursion for the diagonal affine system of ``linear_model``."""
    m, v = np.asarray(s0, float), np.zeros(len(s0))
    ms, vs, rs = [m], [v], []
    for mu, va in zip(means, vars_):
        rs.append(np.sum(-q * (m**2 + v) - r * (mu**2 + va) + 0.5 * m))
        m, v = a * m + b * mu + offset, a**2 * v + b**2 * va + c**2
        ms.append(m)
        vs.append(v)
    return np.array(ms), np.array(vs), np.array(rs)


def _random_policy(model, depth, rng, var_scale=1.0):
    span = model.action_high - model.action_low
    u = rng.uniform(0.1, 0.9, (depth, model.n_a))
    means = model.action_low + u * span
    w = var_scale * rng.uniform(0, 1, (depth, model.n_a)) * np.minimum(u, 1 - u) ** 2 / 12
    return means, w * span**2


LINEAR = dict(
    a_diag=[0.9, 1.05], b_diag=[0.5, -0.3], c_diag=[0.2, 0.05], offset=[0.01, -0.02], q=[1.0, 0.5], r=[0.1, 0.2]
)


class TestPropagateStep:
    def test_linear_map_is_exact(self):
        m = linear_model(**LINEAR)
        s = MarginalState(np.array([0.3, -0.7]), np.array([0.04, 0.01]))
        a = ActionMarginal(np.array([0.2, 0.1]), np.array([0.05, 0.02]))
        out = propagate_step(m, eval_partials, s, a)
        A, B, C = (np.asarray(LINEAR[k]) for k in ("a_diag", "b_diag", "c_diag"))
        np.testing.assert_allclose(out.mean, A * s.mean + B * a.mean + LINEAR["offset"], atol=1e-15)
        np.testing.assert_allclose(out.var, A**2 * s.var + B**2 * a.var + C**2, atol=1e-15)

    def test_no_variance_is_deterministic_step(self):
        m = make_env("pendulum", alpha=2.0)
        s = MarginalState(np.array([0.4, 1.0]), np.array([0.3, 0.2]))
        a = ActionMarginal(np.array([0.5]), np.array([0.1]))
        out = propagate_step(m, None, s, a, Mode.NO_VARIANCE)
        np.testing.assert_allclose(out.mean, apply_transition(m, s.mean, a.mean, [0.0], exact=False), rtol=1e-14)
        np.testing.assert_array_equal(out.var, [0.0, 0.0])

    def test_simple_env_noise_mean_correction(self):
        alpha = 0.2
        m = make_env("simple_env", alpha=alpha)
        s = MarginalState(np.array([0.5, 0.5]), np.zeros(2))
        a = ActionMarginal(np.array([0.1, -0.1]), np.array([0.003, 0.003]))
        out = propagate_step(m, None, s, a, Mode.STATE_VARIANCE)
        assert out.mean[0] == pytest.approx(0.5 + 0.1 + alpha, rel=1e-14)
        assert out.mean[1] == pytest.approx(0.4, rel=1e-14)
        assert out.var[0] == pytest.approx((0.1 * alpha) ** 2, rel=1e-12)
        assert out.var[1] == 0.0

    def test_binary_output_stays_probability(self):
        m = make_env("cartpole_hybrid", alpha=3.0)
        s = MarginalState(np.array([0.5, 0.2, 0.0, 0.0, 0.6]), np.array([0.5, 0.5, 0.01, 0.01, 0.24]))
        a = ActionMarginal(np.array([0.5]), np.array([0.08]))
        out = propagate_step(m, None, s, a)
        assert 0.0 <= out.mean[4] <= 1.0
        assert out.var[4] == pytest.approx(out.mean[4] * (1 - out.mean[4]), abs=1e-12)
        out.validate()

    def test_batched_columns_match(self):
        m = make_env("cartpole", alpha=1.0)
        rng = np.random.default_rng(0)
        means = rng.normal(0, 0.1, (4, 5))
        vars_ = rng.uniform(0, 0.01, (4, 5))
        am, av = rng.uniform(-1, 1, (1, 5)), rng.uniform(0, 0.05, (1, 5))
        batch = propagate_step(m, None, MarginalState(means, vars_), ActionMarginal(am, av))
        for i in range(5):
            one = propagate_step(
                m, None, MarginalState(means[:, i], vars_[:, i]), ActionMarginal(am[:, i], av[:, i])
            )
            np.testing.assert_allclose(batch.mean[:, i], one.mean, rtol=1e-14)
            np.testing.assert_allclose(batch.var[:, i], one.var, rtol=1e-14)

    def test_bad_mode(self):
        m = make_env("pendulum")
        with pytest.raises(ArgumentError):
            propagate_step(m, None, MarginalState(np.zeros(2), np.zeros(2)), ActionMarginal([0.0], [0.0]), "full")


class TestExpectedReward:
    def test_linear_reward_needs_no_correction(self):
        m = make_env("pendulum")

        class Linear:
            n_eps = 0
            reward = staticmethod(lambda s, a: 2.0 * s[0] - 3.0 * s[1] + a[0])

        s = MarginalState(np.array([0.2, 0.4]), np.array([0.5, 0.5]))
        a = ActionMarginal(np.array([0.1]), np.array([0.3]))
        assert float(expected_reward(Linear, None, s, a)) == pytest.approx(0.4 - 1.2 + 0.1, rel=1e-14)
        assert m is not None

    def test_quadratic_reward_is_exact(self):
        class Square:
            reward = staticmethod(lambda s, a: s[0] * s[0])

        s = MarginalState(np.array([1.0]), np.array([0.25]))
        a = ActionMarginal(np.array([0.0]), np.array([0.0]))
        assert float(expected_reward(Square, None, s, a)) == pytest.approx(1.25, rel=1e-15)

    def test_goal_gate_against_monte_carlo(self, oracles):
        ref = oracles["gate_mc"]
        m = make_env("mountain_car")
        s = MarginalState(np.array([ref["mean_x"], 0.0]), np.array([ref["var_x"], 0.0]))
        a = ActionMarginal(np.array([0.0]), np.array([0.0]))
        est = float(expected_reward(m, None, s, a))
        assert abs(est - ref["estimate"]) < 3 * ref["stderr"]

    def test_mode_zeroing(self):
        m = make_env("pendulum")
        s = MarginalState(np.array([0.3, 0.5]), np.array([0.2, 0.3]))
        a = ActionMarginal(np.array([1.0]), np.array([0.4]))
        nv = float(expected_reward(m, None, s, a, Mode.NO_VARIANCE))
        assert nv == pytest.approx(float(apply_reward(m, s.mean, a.mean)), rel=1e-14)
        sv = float(expected_reward(m, None, s, a, Mode.STATE_VARIANCE))
        full = float(expected_reward(m, None, s, a, Mode.COMPLETE))
        # action curvature of -0.001 a^2 is the only difference
        assert full - sv == pytest.approx(-0.001 * 0.4, rel=1e-12)


class TestRolloutQ:
    def test_linear_gaussian_depth_50(self):
        m = linear_model(**LINEAR)
        rng = np.random.default_rng(7)
        means, vars_ = _random_policy(m, 50, rng)
        s0 = np.array([0.4, -0.2])
        trace = rollout_q(m, s0, (means, vars_))
        ms, vs, rs = linear_moments(*(np.asarray(LINEAR[k]) for k in LINEAR), s0, means, vars_)
        np.testing.assert_allclose(trace.means, ms, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(trace.vars, vs, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(trace.expected_rewards, rs, rtol=1e-10, atol=1e-10)

    def test_depth_one_is_expected_reward(self):
        m = make_env("pendulum", alpha=1.0)
        s0 = np.array([0.3, -0.4])
        trace = rollout_q(m, s0, [ActionMarginal(np.array([0.7]), np.array([0.2]))])
        er = expected_reward(m, None, MarginalState.point(s0), ActionMarginal(np.array([0.7]), np.array([0.2])))
        assert trace.q_value == pytest.approx(float(er), rel=1e-14)

    def test_no_variance_equals_deterministic_rollout(self):
        m = linear_model(**LINEAR)
        rng = np.random.default_rng(1)
        means, vars_ = _random_policy(m, 30, rng)
        s = np.array([0.1, 0.2])
        total = 0.0
        for t in range(30):
            total += float(apply_reward(m, s, means[t]))
            s = apply_transition(m, s, means[t], np.zeros(2))
        assert rollout_q(m, [0.1, 0.2], (means, vars_), mode=Mode.NO_VARIANCE).q_value == pytest.approx(total, rel=1e-12)

    def test_pendulum_regression_value(self):
        m = make_env("pendulum", alpha=1.0)
        rng = np.random.default_rng(2024)
        means, var = rng.uniform(-2, 2, (25, 1)), rng.uniform(0, 0.3, (25, 1))
        first = rollout_q(m, [0.5, -0.3], (means, var)).q_value
        second = rollout_q(m, [0.5, -0.3], (means, var)).q_value
        assert first == second == PENDULUM_Q_D25

    def test_discounting(self):
        m = make_env("pendulum", alpha=0.5)
        rng = np.random.default_rng(3)
        means, vars_ = _random_policy(m, 10, rng)
        trace = rollout_q(m, [0.2, 0.1], (means, vars_), gamma=0.9)
        assert trace.q_value == pytest.approx(float(np.sum(0.9 ** np.arange(10) * trace.expected_rewards)), rel=1e-13)

    def test_batch_matches_single(self):
        m = make_env("cartpole", alpha=2.0)
        rng = np.random.default_rng(4)
        batch = [_random_policy(m, 12, rng) for _ in range(6)]
        q = q_values(m, np.zeros(4), np.stack([b[0] for b in batch]), np.stack([b[1] for b in batch]))
        for i, (mu, v) in enumerate(batch):
            assert float(q[i]) == pytest.approx(rollout_q(m, np.zeros(4), (mu, v)).q_value, rel=1e-13)

    def test_argument_errors(self):
        m = make_env("pendulum")
        with pytest.raises(ArgumentError):
            rollout_q(m, [0.0], (np.zeros((3, 1)), np.zeros((3, 1))))
        with pytest.raises(ArgumentError):
            rollout_q(m, [0.0, 0.0], (np.zeros((3, 1)), -np.ones((3, 1))))
        with pytest.raises(ArgumentError):
            rollout_q(m, [0.0, 0.0], (np.zeros((0, 1)), np.zeros((0, 1))))

    def test_non_finite_reports_depth(self):
        m = linear_model([1e200, 1.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [0.0, 0.0])
        with pytest.raises(PropagationError) as info:
            rollout_q(m, [1.0, 1.0], (np.zeros((5, 2)), np.zeros((5, 2))))
        assert info.value.step is not None

    def test_csv_export(self, tmp_path):
        m = make_env("pendulum", alpha=1.0)
        trace = rollout_q(m, [0.1, 0.0], (np.zeros((3, 1)), np.full((3, 1), 0.1)))
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        rows = list(csv.DictReader(path.open()))
        assert [r["var_name"] for r in rows[:2]] == ["theta", "theta_dot"]
        assert len(rows) == 4 * 2
        assert float(rows[-1]["var"]) == trace.vars[-1, 1]


@pytest.mark.parametrize("name", sorted(CATALOG))
@pytest.mark.parametrize("mode", list(Mode))
def test_variances_stay_nonnegative(name, mode):
    m = make_env(name, alpha=0.5 if not name.startswith("mountain") else 0.002)
    rng = np.random.default_rng(9)
    means, vars_ = _random_policy(m, 15, rng)
    trace = rollout_q(m, m.initial_state(rng), (means, vars_), mode=mode)
    assert np.all(trace.vars >= 0)
    if mode is Mode.NO_VARIANCE:
        binary = m.binary_mask
        assert np.all(trace.vars[1:, ~binary] == 0)
    for k in np.flatnonzero(m.binary_mask):
        p = trace.means[:, k]
        np.testing.assert_allclose(trace.vars[:, k], p * (1 - p), atol=1e-12)


@pytest.mark.parametrize("name", ["cartpole", "pendulum", "simple_env"])
def test_state_variance_matches_complete_without_action_variance(name):
    m = make_env(name, alpha=0.5)
    rng = np.random.default_rng(2)
    means, _ = _random_policy(m, 10, rng)
    zero = np.zeros_like(means)
    a = rollout_q(m, m.initial_state(rng), (means, zero), mode=Mode.COMPLETE)
    b = rollout_q(m, a.means[0], (means, zero), mode=Mode.STATE_VARIANCE)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.vars, b.vars)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(-2, 2),
    st.floats(0, 1),
    st.floats(-1, 1),
    st.floats(-1, 1),
    st.floats(-1, 1),
)
def test_quadratic_in_one_coordinate_is_exact(mean, var, c0, c1, c2):
    class Quad:
        n_s, n_a, n_eps = 1, 1, 0
        kinds = ("continuous",)
        transition = staticmethod(lambda s, a, e: [c0 + c1 * s[0] + c2 * s[0] * s[0] + 0.0 * a[0]])

    out = propagate_step(Quad, None, MarginalState(np.array([mean]), np.array([var])), ActionMarginal(np.array([0.3]), np.array([0.0])))
    assert float(out.mean[0]) == pytest.approx(c0 + c1 * mean + c2 * (mean**2 + var), abs=1e-12)


class TestCompareToEmpirical:
    def test_deterministic_case_is_exact(self):
        m = make_env("simple_env", alpha=0.0)
        rng = np.random.default_rng(0)
        means = rng.uniform(-0.2, 0.2, (10, 2))
        rep = compare_to_empirical(m, [0.0, 0.0], (means, np.zeros_like(means)), 10, 200, rng)
        np.testing.assert_allclose(rep.complete_mean_error, 0.0, atol=1e-12)

    def test_simple_env_complete_beats_no_variance(self):
        m = make_env("simple_env", alpha=0.2)
        rng = np.random.default_rng(1)
        means, vars_ = _random_policy(m, 20, rng)
        rep = compare_to_empirical(m, [0.0, 0.0], (means, vars_), 20, 20000, rng)
        assert rep.complete_mean_error[-1, 0] < rep.no_variance_mean_error[-1, 0]

    def test_pendulum_first_step_variance_is_linearized_lognormal(self):
        # linearizing alpha*exp(eps) at eps=0 keeps alpha^2 of its alpha^2 (e^2 - e) variance
        alpha = 2.0
        m = make_env("pendulum", alpha=alpha)
        means = np.full((1, 1), 0.5)
        rep = compare_to_empirical(m, [0.1, 0.0], (means, np.zeros_like(means)), 1, 200000, np.random.default_rng(5))
        ratio = rep.complete.vars[1, 0] / rep.empirical_var[1, 0]
        assert ratio == pytest.approx(1.0 / (np.e**2 - np.e), rel=0.02)

    @pytest.mark.xfail(strict=True, reason="linearized lognormal kick caps the variance ratio near 0.21 before dynamics shrink it")
    def test_pendulum_variance_within_factor_five(self):
        m = make_env("pendulum", alpha=2.0)
        rng = np.random.default_rng(5)
        means, vars_ = _random_policy(m, 25, rng, var_scale=0.0)
        rep = compare_to_empirical(m, [0.1, 0.0], (means, vars_), 25, 20000, rng)
        # noise reaches the velocity one step after the angle
        emp, prop = rep.empirical_var[2:], rep.complete.vars[2:]
        assert np.all(prop > 0)
        assert np.all(rep.no_variance.vars == 0)
        ratio = prop / emp
        assert np.all((ratio > 0.2) & (ratio < 5.0))

    def test_rows(self):
        m = make_env("simple_env", alpha=0.1)
        rep = compare_to_empirical(m, [0.0, 0.0], (np.zeros((2, 2)), np.zeros((2, 2))), 2, 100, np.random.default_rng(0))
        rows = list(rep.rows(m.state_names))
        assert len(rows) == 6
        assert set(rows[0]) == {"step", "var_name", "empirical_mean", "empirical_var", "complete_mean", "complete_var", "nv_mean", "nv_var"}

    def test_minimum_samples(self):
        m = make_env("simple_env")
        with pytest.raises(ArgumentError):
            compare_to_empirical(m, [0, 0], (np.zeros((2, 2)), np.zeros((2, 2))), 2, 99, np.random.default_rng(0))

    def test_uniform_action_moments(self):
        rng = np.random.default_rng(0)
        draws = sample_policy_actions(np.array([0.2]), np.array([0.01]), -1.0, 1.0, rng, 200000)
        assert draws.mean() == pytest.approx(0.2, abs=1e-3)
        assert draws.var() == pytest.approx(0.01, rel=1e-2)
