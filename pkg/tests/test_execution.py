import numpy as np
import pytest

from beliefplan.belief import GaussianBelief, Layout
from beliefplan.cli import DOMAINS
from beliefplan.ddp import continuation_solve, rollout_actions, solve
from beliefplan.domains import make_hand_eye, make_lqg_test, make_planar_nav, room_constraint
from beliefplan.domains.hand_eye import OBSTACLES, element
from beliefplan.execution import (
    LinearPolicy,
    enforce_constraint,
    policy_action,
    replay_deviation,
    rollout,
    rollout_many,
)


def open_loop_policy(domain, actions, gain_scale=0.0, rng=None):
    """Nominal trajectory of ``actions`` with (optionally random) feedback gains."""
    traj = rollout_actions(domain.to_mdp(), actions)
    T, m = traj.actions.shape
    L = np.zeros((T, m, domain.belief_dim))
    if gain_scale:
        L = gain_scale * rng.standard_normal(L.shape)
    return LinearPolicy(traj.beliefs, traj.actions, L, domain.layout)


class TestPolicyAction:
    # 1-D state with a diagonal layout: belief vectors are [mean, variance].
    def make(self, L=2.0):
        return LinearPolicy(np.array([[0.0, 1.0]] * 3), np.array([[1.0], [1.0]]),
                            np.tile([[[L, 0.0]]], (2, 1, 1)), Layout(1, "diagonal"))

    def test_zero_deviation(self):
        p = self.make()
        np.testing.assert_array_equal(policy_action(p, np.array([0.0, 1.0]), 0), [1.0])

    def test_zero_gain_is_open_loop(self):
        p = self.make(L=0.0)
        np.testing.assert_array_equal(policy_action(p, np.array([123.0, 7.0]), 1), [1.0])

    def test_linear_law(self):
        assert policy_action(self.make(), np.array([0.5, 1.0]), 1)[0] == pytest.approx(2.0)

    def test_belief_object_input(self):
        assert policy_action(self.make(), GaussianBelief([0.5], [[1.0]]), 1)[0] == pytest.approx(2.0)

    def test_index_range(self):
        p = self.make()
        with pytest.raises(IndexError):
            policy_action(p, np.array([0.0, 1.0]), 2)
        with pytest.raises(IndexError):
            policy_action(p, np.array([0.0, 1.0]), -1)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            LinearPolicy(np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1, 1)), Layout(1, "diagonal"))


class TestRollout:
    def test_noiseless_replay_lqg(self):
        d = make_lqg_test(n=3, m=2, horizon=25, seed=2)
        report = solve(d.to_mdp())
        p = LinearPolicy.from_report(report, d.layout)
        rec = rollout(p, d, seed=0, process_noise=False, observation_noise=False)
        assert not rec.failed
        assert replay_deviation(p, d, rec) < 1e-6
        np.testing.assert_allclose(rec.beliefs, report.nominal_beliefs, atol=1e-9)

    def test_noiseless_replay_hand_eye(self, rng):
        d = make_hand_eye(0.3, dict(horizon=20))
        p = open_loop_policy(d, 0.3 * rng.standard_normal((19, 6)), gain_scale=0.1, rng=rng)
        rec = rollout(p, d, seed=5, process_noise=False, observation_noise=False)
        assert replay_deviation(p, d, rec) < 1e-6

    def test_noiseless_replay_planar_without_contact(self, rng):
        d = make_planar_nav(dict(start=(5.0, 5.0), start_var=0.05, horizon=15))
        p = open_loop_policy(d, 0.5 * rng.standard_normal((14, 2)), gain_scale=0.1, rng=rng)
        rec = rollout(p, d, seed=1, process_noise=False, observation_noise=False)
        assert replay_deviation(p, d, rec) < 1e-6

    def test_seeded_determinism(self, rng):
        d = make_planar_nav(dict(start=(1.0, 5.0), horizon=20))
        p = open_loop_policy(d, np.tile([-1.0, 0.2], (19, 1)), gain_scale=0.05, rng=rng)
        a = rollout(p, d, seed=11)
        b = rollout(p, d, seed=11)
        c = rollout(p, d, seed=12)
        for field in ("true_states", "observations", "beliefs", "actions"):
            np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
        assert a.realized_reward == b.realized_reward
        assert not np.array_equal(a.true_states, c.true_states)

    def test_ground_truth_stays_feasible(self, rng):
        d = make_planar_nav(dict(start=(0.5, 5.0), horizon=20))
        p = open_loop_policy(d, np.tile([-2.0, 0.0], (19, 1)))
        rec = rollout(p, d, seed=3)
        assert np.all(d.constraint.value(rec.true_states) >= 0.0)
        assert np.any(d.constraint.value(rec.true_states) == 0.0)

    def test_concurrent_matches_sequential(self, rng):
        d = make_lqg_test(n=2, m=1, horizon=10)
        p = LinearPolicy.from_report(solve(d.to_mdp()), d.layout)
        many = rollout_many(p, d, [4, 5, 6], max_workers=3)
        for seed, rec in zip([4, 5, 6], many):
            np.testing.assert_array_equal(rec.true_states, rollout(p, d, seed=seed).true_states)

    def test_divergence_is_flagged(self):
        d = make_lqg_test(n=2, m=1, horizon=10)
        p = LinearPolicy.from_report(solve(d.to_mdp()), d.layout)
        rec = rollout(p, d, true_init=np.array([np.nan, 0.0]), seed=0)
        assert rec.failed
        assert rec.true_states.shape[0] < d.horizon
        assert "step 0" in rec.message


class TestEstimatorConsistency:
    def test_normalized_error(self):
        d = make_lqg_test(n=3, m=1, horizon=30, seed=7)
        p = LinearPolicy.from_report(solve(d.to_mdp()), d.layout)
        b0 = d.initial_belief
        init_rng = np.random.default_rng(99)
        seeds = list(range(200))
        inits = init_rng.multivariate_normal(b0.mean, b0.cov, len(seeds))
        nees = []
        for rec in rollout_many(p, d, seeds, inits):
            assert not rec.failed
            for s, v in zip(rec.true_states, rec.beliefs):
                mean, cov = d.layout.unpack(v)
                e = s - mean
                nees.append(e @ np.linalg.solve(cov, e))
        assert 0.7 * d.n <= np.mean(nees) <= 1.3 * d.n


@pytest.mark.slow
class TestShiftedObstacles:
    """Feedback on a shifted scene against re-planning that knows the shift.

    A 30-step hand-eye scene keeps the two continuation solves to a few minutes.
    """

    SCENE = dict(horizon=30, tau=0.1)
    SCHEDULE = [10.0, 1.0, 0.3, 0.05]

    def plan(self, params):
        family = lambda eta: make_hand_eye(eta, params).to_mdp()
        return continuation_solve(family, self.SCHEDULE, options={"rel_tol": 1e-5})[-1]

    def test_feedback_close_to_replanning(self):
        d = make_hand_eye(self.SCHEDULE[-1], self.SCENE)
        policy = LinearPolicy.from_report(self.plan(self.SCENE), d.layout)
        x0 = d.initial_belief.mean
        shifted = DOMAINS["hand_eye"].shift_obstacles(x0, np.random.default_rng([1, 1]), 0.2)
        clearance = d.metrics["min_obstacle_clearance"]

        # The estimator starts from the training prior: the agent is not told about the shift.
        fb = rollout(policy, d, shifted, seed=0, process_noise=False, observation_noise=False)
        moved = [tuple(shifted[element(j)]) for j in OBSTACLES]
        replanned = self.plan(dict(self.SCENE, obstacles=moved))
        target = clearance(replanned.nominal_beliefs[:, :16], replanned.nominal_actions)
        assert fb.metrics["min_obstacle_clearance"] >= 0.8 * target

        open_loop = LinearPolicy(policy.nominal_beliefs, policy.nominal_actions, 0 * policy.gains, d.layout)
        ol = rollout(open_loop, d, shifted, seed=0, process_noise=False, observation_noise=False)
        assert ol.metrics["min_obstacle_clearance"] < fb.metrics["min_obstacle_clearance"]


class TestEnforceConstraint:
    def test_projects_onto_wall(self):
        cm = room_constraint(10.0, 10.0)
        np.testing.assert_allclose(enforce_constraint(np.array([-0.3, 4.0]), cm), [0.0, 4.0])
        np.testing.assert_array_equal(enforce_constraint(np.array([2.0, 4.0]), cm), [2.0, 4.0])

    def test_rounded_corner(self):
        cm = room_constraint(10.0, 10.0, radius=3.0)
        s = enforce_constraint(np.array([-1.0, -1.0]), cm)
        assert cm.value(s) >= 0.0
        assert cm.value(s) < 1e-12
        np.testing.assert_allclose(s, 3.0 - 3.0 / np.sqrt(2.0), atol=1e-12)

    def test_no_constraint(self):
        s = np.array([-5.0])
        assert enforce_constraint(s, None) is s
