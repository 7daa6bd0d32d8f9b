import math
import unittest

import numpy as np

import auction
from dist import RewardDistribution, VirtualValueTransform, exponential, uniform
from equilibrium import best_response_audit, indifference_residual, profile_from_quantiles
from errors import DegenerateCompetition, DomainError
from prophet import ThresholdPolicy, exact_alg_single

UNIFORM = uniform(0.0, 1.0)


class ScheduleTests(unittest.TestCase):
    def test_revenue_schedule_small_markets(self) -> None:
        self.assertAlmostEqual(0.683940, auction.revenue_prices(UNIFORM, 1, 1).prices.prices[0], delta=5e-6)
        self.assertAlmostEqual(0.803265, auction.revenue_prices(UNIFORM, 2, 1).prices.prices[0], delta=5e-6)

    def test_revenue_schedule_is_an_equilibrium(self) -> None:
        for G in (UNIFORM, exponential(1.0)):
            with self.subTest(dist=G.name):
                profile = auction.revenue_prices(G, 10, 5)
                prices = profile.prices.prices
                self.assertTrue(all(a > b for a, b in zip(prices, prices[1:])))
                for j in range(1, profile.k):
                    self.assertLessEqual(abs(indifference_residual(G, 10, j, profile)), 1e-9)

    def test_revenue_thresholds_sit_above_reserve(self) -> None:
        profile = auction.revenue_prices(exponential(1.0), 10, 3)
        self.assertGreater(profile.thresholds[-1], 1.0)

    def test_welfare_schedule_matches_closed_form(self) -> None:
        profile = auction.welfare_prices(UNIFORM, 10, 5)
        prices = profile.prices.prices
        self.assertAlmostEqual(0.606531, prices[4], delta=5e-6)
        self.assertAlmostEqual(0.644387, prices[3], delta=5e-6)
        np.testing.assert_allclose(prices, auction.uniform_welfare_prices(10, 5), atol=1e-10)
        np.testing.assert_allclose(profile.thresholds, np.exp(-np.arange(1, 6) / 10.0), atol=1e-12)

    def test_welfare_schedule_needs_competition(self) -> None:
        with self.assertRaises(DegenerateCompetition):
            auction.welfare_prices(UNIFORM, 1, 2)
        with self.assertRaises(DomainError):
            auction.welfare_prices(UNIFORM, 4, 0)

    def test_multi_unit_levels(self) -> None:
        np.testing.assert_allclose(auction.welfare_quantiles(10, 3, 2), [0.8, 0.64, 0.512], atol=1e-12)
        with self.assertRaises(DomainError):
            auction.welfare_quantiles(3, 2, 3)

    def test_multi_unit_revenue_schedule_passes_audit(self) -> None:
        profile = auction.revenue_prices(UNIFORM, 8, 3, 2)
        self.assertTrue(best_response_audit(UNIFORM, 8, 2, profile, 300).passed)


class BenchmarkTests(unittest.TestCase):
    def test_myerson_revenue(self) -> None:
        self.assertAlmostEqual(0.25, auction.myerson_opt_revenue(UNIFORM, 1), places=8)
        self.assertAlmostEqual(5.0 / 12.0, auction.myerson_opt_revenue(UNIFORM, 2), places=8)
        self.assertAlmostEqual(0.5, auction.myerson_opt_revenue(UNIFORM, 2, 2), places=8)
        self.assertAlmostEqual(math.exp(-1.0), auction.myerson_opt_revenue(exponential(1.0), 1), places=6)

    def test_max_welfare(self) -> None:
        self.assertAlmostEqual(10.0 / 11.0, auction.max_welfare(UNIFORM, 10), places=8)
        self.assertAlmostEqual(2.0 / 3.0, auction.max_welfare(UNIFORM, 2), places=8)
        self.assertAlmostEqual(1.0, auction.max_welfare(UNIFORM, 2, 2), places=8)


class AllocationTests(unittest.TestCase):
    def setUp(self) -> None:
        self.profile = profile_from_quantiles((0.8, 0.5), (0.8, 0.5), 2)
        self.transform = VirtualValueTransform.from_distribution(UNIFORM)
        self.rng = np.random.default_rng(0)

    def test_highest_round_wins(self) -> None:
        outcome = auction.allocate(np.array([0.9, 0.6]), self.profile, 1, self.rng, self.transform)
        self.assertEqual(1, len(outcome.winners))
        winner = outcome.winners[0]
        self.assertEqual((0, 1), (winner.buyer, winner.round))
        self.assertAlmostEqual(7.0 / 12.0, outcome.revenue, places=12)
        self.assertAlmostEqual(0.9, outcome.welfare, places=12)
        self.assertAlmostEqual(0.8, outcome.virtual_surplus, places=12)

    def test_ties_pay_the_round_price(self) -> None:
        outcome = auction.allocate(np.array([0.9, 0.85]), self.profile, 1, self.rng, self.transform)
        self.assertEqual(1, len(outcome.winners))
        self.assertIn(outcome.winners[0].buyer, (0, 1))
        self.assertAlmostEqual(7.0 / 12.0, outcome.revenue, places=12)

    def test_no_sale_below_last_threshold(self) -> None:
        outcome = auction.allocate(np.array([0.3, 0.2]), self.profile, 1, self.rng, self.transform)
        self.assertEqual((), outcome.winners)
        self.assertEqual(0.0, outcome.revenue)
        self.assertEqual(0.0, outcome.virtual_surplus)

    def test_two_units_go_to_two_rounds(self) -> None:
        profile = profile_from_quantiles((0.8, 0.5), (0.8, 0.5), 3, 2)
        outcome = auction.allocate(np.array([0.6, 0.9, 0.1]), profile, 2, self.rng, self.transform)
        self.assertEqual([(1, 1), (0, 2)], [(w.buyer, w.round) for w in outcome.winners])
        self.assertAlmostEqual(sum(profile.prices.prices), outcome.revenue, places=12)


class InstanceTests(unittest.TestCase):
    def test_instance_validation(self) -> None:
        with self.assertRaises(DomainError):
            auction.AuctionInstance(UNIFORM, n=1)
        with self.assertRaises(DomainError):
            auction.AuctionInstance(UNIFORM, n=3, m=4)
        with self.assertRaises(DomainError):
            auction.AuctionInstance(UNIFORM, n=3, k=0)

    def test_profile_length_must_match(self) -> None:
        inst = auction.AuctionInstance(UNIFORM, n=4, k=2)
        with self.assertRaises(DomainError):
            auction.simulate_kdpa(inst, auction.welfare_prices(UNIFORM, 4, 3), np.random.default_rng(0))

    def test_single_draw_is_seeded(self) -> None:
        inst = auction.AuctionInstance(UNIFORM, n=6, k=3)
        profile = auction.revenue_prices(UNIFORM, 6, 3)
        first = auction.simulate_kdpa(inst, profile, np.random.default_rng(9))
        second = auction.simulate_kdpa(inst, profile, np.random.default_rng(9))
        self.assertEqual(first, second)


class MonteCarloTests(unittest.TestCase):
    def test_revenue_equals_virtual_surplus(self) -> None:
        inst = auction.AuctionInstance(UNIFORM, n=10, k=3)
        estimate = auction.expected_outcome_mc(inst, auction.revenue_prices(UNIFORM, 10, 3), 200_000, 5)
        self.assertLessEqual(abs(estimate.revenue_minus_virtual.mean), 4.0 * estimate.revenue_minus_virtual.std_error)
        self.assertLessEqual(abs(estimate.revenue.mean - estimate.virtual_surplus.mean), 0.01)

    def test_welfare_matches_threshold_policy_value(self) -> None:
        inst = auction.AuctionInstance(UNIFORM, n=10, k=4)
        profile = auction.welfare_prices(UNIFORM, 10, 4)
        estimate = auction.expected_outcome_mc(inst, profile, 200_000, 6)
        exact = exact_alg_single(RewardDistribution.from_values(UNIFORM), 10, ThresholdPolicy(profile.thresholds))
        self.assertLessEqual(abs(estimate.welfare.mean - exact), 4.0 * estimate.welfare.std_error)


if __name__ == "__main__":  # pragma: no cover
    unittest.main()
