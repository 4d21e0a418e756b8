import numpy as np
import pytest

from beliefplan.belief import ConstrainedBelief, GaussianBelief
from beliefplan.rewards import (
    ActionCost,
    GaussianBumpCost,
    QuadraticStateCost,
    StageReward,
    belief_reward,
    expected_reward,
    sigma_points,
)
from conftest import random_spd


def mc_check(term, mean, cov, rng, n=1_000_000):
    x = rng.multivariate_normal(mean, cov, n)
    v = term.value(x)
    return v.mean(), v.std() / np.sqrt(n)


class TestCostTerms:
    def test_quadratic_value(self):
        t = QuadraticStateCost(np.eye(2), [1.0, 2.0], weight=3.0)
        assert t.value(np.array([1.0, 0.0])) == pytest.approx(12.0)

    def test_quadratic_expectation_against_sampling(self, rng):
        D = rng.standard_normal((2, 3))
        t = QuadraticStateCost(D, [0.5, -1.0], weight=2.0)
        mean, cov = rng.standard_normal(3), random_spd(rng, 3)
        est, se = mc_check(t, mean, cov, rng)
        assert abs(t.expectation(mean, cov) - est) < 4 * se

    def test_bump_expectation_against_sampling(self, rng):
        for k in (2, 3):
            D = rng.standard_normal((k, 4))
            t = GaussianBumpCost(D, rng.standard_normal(k) * 0.3, height=5.0, width=0.8)
            mean, cov = 0.5 * rng.standard_normal(4), random_spd(rng, 4, scale=0.5)
            est, se = mc_check(t, mean, cov, rng)
            assert abs(t.expectation(mean, cov) - est) < 4 * se

    def test_bump_zero_covariance_is_value(self, rng):
        t = GaussianBumpCost(np.eye(2), [1.0, 1.0], height=2.0, width=0.5)
        s = rng.standard_normal(2)
        assert t.expectation(s, np.zeros((2, 2))) == pytest.approx(t.value(s), rel=1e-14)

    def test_variance_vector_matches_dense(self, rng):
        mean = rng.standard_normal((5, 4))
        var = rng.uniform(0.1, 2.0, (5, 4))
        dense = var[..., :, None] * np.eye(4)
        for t in (QuadraticStateCost(rng.standard_normal((2, 4)), [0.1, 0.2], 1.5),
                  GaussianBumpCost(rng.standard_normal((2, 4)), [0.0, 0.3], 2.0, 0.7)):
            np.testing.assert_allclose(t.expectation(mean, var), t.expectation(mean, dense), rtol=1e-13)

    def test_action_cost_forms(self, rng):
        a = rng.standard_normal((3, 2))
        diag = ActionCost([0.5, 2.0])
        full = ActionCost(np.diag([0.5, 2.0]))
        np.testing.assert_allclose(diag.value(None, a), full.value(None, a), rtol=1e-14)
        np.testing.assert_allclose(diag.value(None, a), 0.5 * a[:, 0] ** 2 + 2.0 * a[:, 1] ** 2)


class TestSigmaPoints:
    def test_weights_and_moments(self, rng):
        mean, cov = rng.standard_normal(3), random_spd(rng, 3)
        pts, w = sigma_points(mean, cov)
        assert pts.shape == (7, 3)
        assert w.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(w @ pts, mean, atol=1e-12)
        d = pts - mean
        np.testing.assert_allclose((w[:, None] * d).T @ d, cov, atol=1e-12)

    def test_exact_for_quadratic_callable(self, rng):
        D = rng.standard_normal((2, 3))
        t = QuadraticStateCost(D, [0.3, 0.1])
        mean, cov = rng.standard_normal(3), random_spd(rng, 3)

        def r(s, a, i=0):
            return -t.value(s)

        got = expected_reward(mean, cov, np.zeros(1), r)
        assert got == pytest.approx(-t.expectation(mean, cov), rel=1e-12)

    def test_variance_vector_input(self, rng):
        mean, var = rng.standard_normal(3), rng.uniform(0.1, 1.0, 3)
        p1, _ = sigma_points(mean, var)
        p2, _ = sigma_points(mean, np.diag(var))
        np.testing.assert_allclose(p1, p2, atol=1e-14)


class TestStageReward:
    def make(self):
        return StageReward(
            running=(GaussianBumpCost(np.eye(2), [1.0, 0.0], 3.0, 0.5), ActionCost([0.1, 0.1])),
            terminal=(QuadraticStateCost(np.eye(2), [2.0, 2.0], 4.0),),
        )

    def test_sign_and_batching(self, rng):
        r = self.make()
        s = rng.standard_normal((4, 2))
        a = rng.standard_normal((4, 2))
        vals = r(s, a)
        assert vals.shape == (4,)
        assert np.all(vals <= 0)
        np.testing.assert_allclose(vals[1], r(s[1], a[1]))

    def test_expected_of_point_belief_is_value(self, rng):
        r = self.make()
        s, a = rng.standard_normal(2), rng.standard_normal(2)
        assert r.expected(s, np.zeros((2, 2)), a) == pytest.approx(r(s, a), rel=1e-13)
        assert r.expected_terminal(s, np.zeros((2, 2))) == pytest.approx(r.terminal_value(s), rel=1e-13)

    def test_mixture_reward_is_weighted(self, rng):
        r = self.make()
        g1 = GaussianBelief(rng.standard_normal(2), random_spd(rng, 2))
        g2 = GaussianBelief(rng.standard_normal(2), random_spd(rng, 2))
        a = rng.standard_normal(2)
        cb = ConstrainedBelief(g1, g2, 0.3)
        want = 0.3 * belief_reward(g1, a, r) + 0.7 * belief_reward(g2, a, r)
        assert belief_reward(cb, a, r) == pytest.approx(want, rel=1e-14)
        assert belief_reward(cb, None, r, terminal=True) == pytest.approx(
            0.3 * belief_reward(g1, None, r, terminal=True) + 0.7 * belief_reward(g2, None, r, terminal=True))
