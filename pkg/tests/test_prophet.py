import math
import unittest

import numpy as np
import pytest

import prophet
from dist import RewardDistribution, exponential, uniform
from errors import DomainError

UNIFORM = RewardDistribution.from_values(uniform(0.0, 1.0))


class PolynomialTests(unittest.TestCase):
    def test_p_polynomial_examples(self) -> None:
        self.assertAlmostEqual(1.0, prophet.p_polynomial(1, 0.37), places=12)
        self.assertAlmostEqual(1.0, prophet.p_polynomial(5, 1.0), places=12)
        self.assertAlmostEqual(0.75, prophet.p_polynomial(2, 0.5), places=12)

    def test_p_polynomial_rejects_bad_arguments(self) -> None:
        with self.assertRaises(DomainError):
            prophet.p_polynomial(0, 0.5)
        with self.assertRaises(DomainError):
            prophet.p_polynomial(3, 1.5)

    def test_selection_polynomial_examples(self) -> None:
        a_value, b_value = prophet.selection_polynomials(3, 1, 0.5)
        self.assertAlmostEqual(0.875, a_value, places=12)
        self.assertAlmostEqual(0.583333, b_value, places=6)

        a_value, b_value = prophet.selection_polynomials(2, 2, 0.3)
        self.assertAlmostEqual(0.7, a_value, places=12)
        self.assertEqual(1.0, b_value)

        _, b_value = prophet.selection_polynomials(4, 10, 0.6)
        self.assertEqual(1.0, b_value)

    def test_guarantees(self) -> None:
        self.assertAlmostEqual(0.632121, prophet.guarantee_single(1), places=6)
        self.assertAlmostEqual(0.981684, prophet.guarantee_single(4), places=6)
        self.assertEqual(1.0, prophet.guarantee_single(math.inf))
        self.assertAlmostEqual(0.632121, prophet.guarantee_multi(1, 1), places=6)
        self.assertAlmostEqual(0.729329, prophet.guarantee_multi(1, 2), places=6)
        self.assertAlmostEqual(0.864665, prophet.guarantee_multi(2, 1), places=6)


@pytest.mark.parametrize("n, m, x", [(7, 3, 0.2), (20, 4, 0.85), (50, 1, 0.97), (12, 11, 0.5)])
def test_selection_identity(n: int, m: int, x: float) -> None:
    """Every passer is equally likely to be selected: ``B = m A / (n (1 - x))``."""

    a_value, b_value = prophet.selection_polynomials(n, m, x)
    assert b_value == pytest.approx(m * a_value / (n * (1.0 - x)), abs=1e-10)


@pytest.mark.parametrize("n", [1, 2, 10, 200])
def test_balanced_single_threshold_floor(n: int) -> None:
    """At ``x = e^{-1/n}`` both selection terms stay above ``1 - 1/e``."""

    x = math.exp(-1.0 / n)
    assert min(1.0 - x**n, prophet.p_polynomial(n, x)) >= 1.0 - math.exp(-1.0) - 1e-12


class ThresholdTests(unittest.TestCase):
    def test_balanced_single_thresholds(self) -> None:
        policy = prophet.balanced_thresholds_single(UNIFORM, 1, 1)
        self.assertAlmostEqual(0.367879, policy.thresholds[0], places=6)
        policy = prophet.balanced_thresholds_single(UNIFORM, 10, 2)
        np.testing.assert_allclose(policy.thresholds, [0.904837, 0.818731], atol=1e-6)

    def test_balanced_multi_thresholds(self) -> None:
        policy = prophet.balanced_thresholds_multi(UNIFORM, 10, 2, 3)
        np.testing.assert_allclose(policy.thresholds, [0.8, 0.64, 0.512], atol=1e-12)
        with self.assertRaises(DomainError):
            prophet.balanced_thresholds_multi(UNIFORM, 2, 2, 1)

    def test_policy_must_decrease(self) -> None:
        with self.assertRaises(DomainError):
            prophet.ThresholdPolicy((0.5, 0.5))
        self.assertEqual([(1.0, 0.6), (0.6, 0.2)], prophet.ThresholdPolicy((0.6, 0.2)).stages(1.0))


class ExactValueTests(unittest.TestCase):
    def test_uniform_warmup_reproduced(self) -> None:
        policy = prophet.balanced_thresholds_single(UNIFORM, 10, 5)
        value = prophet.exact_alg_single(UNIFORM, 10, policy)
        self.assertAlmostEqual(0.898753, value, delta=5e-6)
        self.assertAlmostEqual(prophet.uniform_warmup_value(10, 5), value, delta=1e-9)

    def test_offline_benchmarks(self) -> None:
        self.assertAlmostEqual(10.0 / 11.0, prophet.opt_offline(UNIFORM, 10), places=9)
        self.assertAlmostEqual(1.0, prophet.opt_offline(UNIFORM, 2, 2), places=9)
        exp_rewards = RewardDistribution.from_values(exponential(1.0))
        self.assertAlmostEqual(1.5, prophet.opt_offline(exp_rewards, 2), places=6)

    def test_splus_single_unit(self) -> None:
        # E[(max(U1, U2) - 0.5)^+] = 5/24
        self.assertAlmostEqual(5.0 / 24.0, prophet.splus(UNIFORM, 2, 1, 0.5), places=9)
        self.assertEqual(0.0, prophet.splus(UNIFORM, 2, 1, 1.0))

    def test_multi_unit_evaluation_reduces_to_single(self) -> None:
        policy = prophet.balanced_thresholds_single(UNIFORM, 10, 3)
        self.assertAlmostEqual(
            prophet.exact_alg_single(UNIFORM, 10, policy), prophet.exact_alg_multi(UNIFORM, 10, 1, policy), delta=1e-10
        )

    def test_single_round_decomposition(self) -> None:
        n = 10
        tau = math.exp(-1.0 / n)
        x = tau
        expected = (1.0 - x**n) * tau + prophet.p_polynomial(n, x) * n * (1.0 - tau) ** 2 / 2.0
        policy = prophet.ThresholdPolicy((tau,))
        self.assertAlmostEqual(expected, prophet.exact_alg_multi(UNIFORM, n, 1, policy), delta=1e-9)

    def test_lower_bound_does_not_exceed_exact_value(self) -> None:
        for m, k in ((1, 2), (2, 1), (2, 3), (3, 2)):
            with self.subTest(m=m, k=k):
                policy = prophet.balanced_thresholds_multi(UNIFORM, 20, m, k)
                inst = prophet.ProphetInstance(UNIFORM, 20, m)
                bound = prophet.alg_lower_bound_multi(inst, policy)
                exact = prophet.exact_alg_multi(UNIFORM, 20, m, policy)
                self.assertGreater(bound, 0.0)
                self.assertLessEqual(bound, exact + 1e-9)

    def test_negative_last_threshold_rejected(self) -> None:
        signed = RewardDistribution.from_values(uniform(-1.0, 1.0))
        with self.assertRaises(DomainError):
            prophet.exact_alg_single(signed, 4, prophet.ThresholdPolicy((0.5, -0.2)))


class ReplayTests(unittest.TestCase):
    def test_play_rounds_without_ties(self) -> None:
        outcomes = prophet.play_rounds(
            [0.9, 0.6, 0.3], prophet.ThresholdPolicy((0.8, 0.5)), 2, np.random.default_rng(0)
        )
        self.assertEqual([(0.9,), (0.6,)], [o.collected for o in outcomes])
        self.assertEqual([False, True], [o.game_over for o in outcomes])

    def test_play_rounds_breaks_ties_within_capacity(self) -> None:
        outcomes = prophet.play_rounds(
            [0.9, 0.85, 0.2], prophet.ThresholdPolicy((0.8,)), 1, np.random.default_rng(5)
        )
        self.assertEqual(1, len(outcomes))
        self.assertEqual(1, len(outcomes[0].collected))
        self.assertIn(outcomes[0].collected[0], (0.9, 0.85))

    def test_simulate_policy_respects_capacity(self) -> None:
        inst = prophet.ProphetInstance(UNIFORM, 12, 3)
        policy = prophet.balanced_thresholds_multi(UNIFORM, 12, 3, 4)
        outcomes = prophet.simulate_policy(inst, policy, np.random.default_rng(2))
        collected = [value for outcome in outcomes for value in outcome.collected]
        self.assertLessEqual(len(collected), 3)
        self.assertLessEqual(len(outcomes), policy.k)
        self.assertTrue(all(value >= policy.thresholds[-1] for value in collected))
        again = prophet.simulate_policy(inst, policy, np.random.default_rng(2))
        self.assertEqual(outcomes, again)

    def test_expected_collection_averages_ties(self) -> None:
        policy = prophet.ThresholdPolicy((0.8, 0.5))
        self.assertAlmostEqual(0.875, prophet.expected_collection([0.9, 0.85, 0.6], policy, 1), places=12)
        self.assertAlmostEqual(1.75, prophet.expected_collection([0.9, 0.85, 0.6], policy, 2), places=12)
        self.assertAlmostEqual(0.6 + 0.55, prophet.expected_collection([0.6, 0.55, 0.1], policy, 3), places=12)

    def test_batch_selection_orders_by_round(self) -> None:
        rewards = np.array([[0.3, 0.9, 0.6], [0.1, 0.2, 0.4]])
        best, rounds = prophet.batch_selection(rewards, (0.8, 0.5), 1, np.random.default_rng(1))
        self.assertEqual(1, int(best[0, 0]))
        np.testing.assert_array_equal([[0], [2]], rounds)
        totals = prophet.batch_collection(rewards, (0.8, 0.5), 1, np.random.default_rng(1))
        np.testing.assert_allclose([0.9, 0.0], totals)


class MonteCarloTests(unittest.TestCase):
    def test_estimate_brackets_exact_value(self) -> None:
        inst = prophet.ProphetInstance(UNIFORM, 10)
        policy = prophet.balanced_thresholds_single(UNIFORM, 10, 5)
        estimate = prophet.expected_reward_mc(inst, policy, 200_000, 11)
        self.assertLessEqual(abs(estimate.mean - 0.898753), 4.0 * estimate.std_error)

    def test_estimate_independent_of_threads(self) -> None:
        inst = prophet.ProphetInstance(UNIFORM, 10, 2)
        policy = prophet.balanced_thresholds_multi(UNIFORM, 10, 2, 2)
        single = prophet.expected_reward_mc(inst, policy, 150_000, 4, threads=1)
        pooled = prophet.expected_reward_mc(inst, policy, 150_000, 4, threads=3)
        self.assertEqual(single, pooled)

    def test_multi_unit_estimate_matches_exact_value(self) -> None:
        inst = prophet.ProphetInstance(UNIFORM, 20, 3)
        policy = prophet.balanced_thresholds_multi(UNIFORM, 20, 3, 2)
        estimate = prophet.expected_reward_mc(inst, policy, 100_000, 8)
        exact = prophet.exact_alg_multi(UNIFORM, 20, 3, policy)
        self.assertLessEqual(abs(estimate.mean - exact), 4.0 * estimate.std_error)

    def test_lower_bound_stays_below_estimate(self) -> None:
        inst = prophet.ProphetInstance(UNIFORM, 20, 2)
        policy = prophet.balanced_thresholds_multi(UNIFORM, 20, 2, 3)
        estimate = prophet.expected_reward_mc(inst, policy, 100_000, 5)
        bound = prophet.alg_lower_bound_multi(inst, policy)
        self.assertLessEqual(bound, estimate.mean + 3.0 * estimate.std_error)

    def test_needs_a_trial(self) -> None:
        inst = prophet.ProphetInstance(UNIFORM, 4)
        with self.assertRaises(DomainError):
            prophet.expected_reward_mc(inst, prophet.ThresholdPolicy((0.5,)), 0, 1)


class BellmanTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.solution = prophet.dp_solve(UNIFORM, 10, 3, 400)

    def test_dominates_balanced_thresholds(self) -> None:
        for k in range(1, 4):
            balanced = prophet.exact_alg_single(UNIFORM, 10, prophet.balanced_thresholds_single(UNIFORM, 10, k))
            self.assertGreaterEqual(self.solution.layer_values[k] + self.solution.grid_error, balanced)

    def test_layers_increase_and_stay_below_offline_optimum(self) -> None:
        layers = self.solution.layer_values
        self.assertEqual(0.0, layers[0])
        self.assertTrue(all(b >= a for a, b in zip(layers, layers[1:])))
        self.assertLessEqual(self.solution.value, 10.0 / 11.0 + 1e-6)

    def test_policy_achieves_reported_value(self) -> None:
        policy = self.solution.thresholds
        self.assertGreaterEqual(policy.k, 1)
        achieved = prophet.exact_alg_single(UNIFORM, 10, policy)
        self.assertAlmostEqual(self.solution.value, achieved, delta=1e-3)

    def test_argument_checks(self) -> None:
        with self.assertRaises(DomainError):
            prophet.dp_solve(UNIFORM, 10, 2, 400, m=2)
        with self.assertRaises(DomainError):
            prophet.dp_solve(UNIFORM, 10, 2, 4)
        self.assertEqual(0.0, prophet.dp_solve(UNIFORM, 10, 0, 100).value)

    def test_single_reward_single_threshold(self) -> None:
        solution = prophet.dp_solve(UNIFORM, 1, 1, 400)
        self.assertAlmostEqual(0.5, solution.value, places=6)
        self.assertEqual(1, solution.thresholds.k)
        self.assertAlmostEqual(0.0, solution.thresholds.thresholds[0], delta=1e-2)


if __name__ == "__main__":  # pragma: no cover
    unittest.main()
