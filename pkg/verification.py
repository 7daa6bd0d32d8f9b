"""Property suites behind ``kdpa.py verify``.

Each check evaluates one family of identities or bounds and returns a
:class:`PropertyResult` whose margin is positive when the property holds
with room to spare.  The ``fast`` suite is exact arithmetic only; ``full``
adds the Monte Carlo campaigns and the Bellman recursion.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from auction import (
    AuctionInstance,
    expected_outcome_mc,
    myerson_opt_revenue,
    revenue_prices,
    uniform_welfare_prices,
    welfare_prices,
)
from dist import (
    RewardDistribution,
    VirtualValueTransform,
    ValueDistribution,
    conditional_mean,
    exponential,
    induced_reward_distribution,
    uniform,
    virtual_values,
)
from equilibrium import (
    EquilibriumProfile,
    best_response_audit,
    indifference_residual,
    prices_to_thresholds,
    profile_from_quantiles,
    round_utilities,
    thresholds_to_prices,
)
from errors import KdpaError
from oracle import (
    DiscreteDistribution,
    deviation_check_mc,
    exact_alg_enumeration,
    stage_decomposition,
)
from prophet import (
    ProphetInstance,
    ThresholdPolicy,
    balanced_thresholds_multi,
    balanced_thresholds_single,
    dp_solve,
    exact_alg_single,
    expected_reward_mc,
    guarantee_multi,
    opt_offline,
    p_polynomial,
    selection_polynomials,
    uniform_warmup_value,
)

__all__ = ["PropertyResult", "SUITES", "format_report", "oracle_fixtures", "run_suite", "suite_passed"]

LOG = logging.getLogger("kdpa.verification")

ONE_MINUS_INV_E = 1.0 - math.exp(-1.0)
MC_TRIALS = 10**6
MULTI_TRIALS = 10**5
ORACLE_TRIALS = 10**5
SIGMAS = 3.0
# worked examples are printed to six decimals
PRINTED_TOL = 5e-6
EXACT_TOL = 1e-9

ORACLE_LAWS: tuple[tuple[tuple[float, float], ...], ...] = (
    ((0.0, 0.5), (1.0, 0.5)),
    ((0.2, 0.25), (0.5, 0.25), (0.9, 0.5)),
    ((0.1, 0.1), (0.4, 0.2), (0.7, 0.3), (1.0, 0.4)),
    ((1.0, 0.6), (3.0, 0.4)),
    ((0.25, 0.5), (0.75, 0.25), (2.0, 0.25)),
)


@dataclass(frozen=True)
class PropertyResult:
    """Outcome of one property; ``required=False`` results are reported but never fail a suite."""

    name: str
    passed: bool
    margin: float
    required: bool = True
    detail: str = ""

    def as_dict(self) -> dict[str, object]:
        return {
            "name": self.name,
            "passed": self.passed,
            "margin": self.margin,
            "required": self.required,
            "detail": self.detail,
        }


Check = Callable[[int, int], PropertyResult]


def _result(name: str, margin: float, detail: str = "", *, required: bool = True) -> PropertyResult:
    return PropertyResult(name=name, passed=bool(margin >= 0.0), margin=float(margin), required=required, detail=detail)


def _uniform_rewards() -> RewardDistribution:
    return RewardDistribution.from_values(uniform(0.0, 1.0))


# ---------------------------------------------------------------------------
# Exact checks
# ---------------------------------------------------------------------------


def check_single_item_floor(seed: int, threads: int) -> PropertyResult:
    worst = math.inf
    for n in range(1, 201):
        x = math.exp(-1.0 / n)
        worst = min(worst, 1.0 - x**n, p_polynomial(n, x))
    return _result("single_item_polynomial_floor", worst - ONE_MINUS_INV_E + 1e-12, f"min={worst:.12f}")


def check_multi_unit_floor(seed: int, threads: int) -> PropertyResult:
    margin = math.inf
    for m in range(1, 6):
        bound = 1.0 - math.exp(-m) * m**m / math.factorial(m)
        for n in np.unique(np.linspace(10 * m, 2000, 40).astype(int)):
            a_value, b_value = selection_polynomials(int(n), m, 1.0 - m / n)
            margin = min(margin, min(a_value, b_value) - bound + 1e-9)
    return _result("multi_unit_polynomial_floor", margin)


def check_polynomial_identities(seed: int, threads: int) -> PropertyResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(2, 61))
        m = int(rng.integers(1, n))
        x = float(rng.uniform(0.01, 0.99))
        a_value, b_value = selection_polynomials(n, m, x)
        worst = max(worst, abs(b_value - m * a_value / (n * (1.0 - x))))
    for n in range(1, 41):
        for x in np.linspace(0.0, 1.0, 21):
            direct = math.fsum(
                math.comb(n - 1, i) * x ** (n - 1 - i) * (1.0 - x) ** i / (i + 1) for i in range(n)
            )
            worst = max(worst, abs(direct - p_polynomial(n, float(x))))
            a_value, b_value = selection_polynomials(n, 1, float(x))
            worst = max(worst, abs(a_value - (1.0 - x**n)), abs(b_value - p_polynomial(n, float(x))))
    return _result("polynomial_identities", 1e-10 - worst, f"max error {worst:.3g}")


def check_uniform_warmup(seed: int, threads: int) -> PropertyResult:
    rewards = _uniform_rewards()
    policy = balanced_thresholds_single(rewards, 10, 5)
    value = exact_alg_single(rewards, 10, policy)
    closed = uniform_warmup_value(10, 5)
    best = opt_offline(rewards, 10)
    printed = abs(value - 0.898753) - PRINTED_TOL
    exact = max(abs(value - closed), abs(best - 10.0 / 11.0)) - EXACT_TOL
    return _result("uniform_warmup", -max(printed, exact), f"ALG={value:.9f} OPT={best:.9f}")


def check_asymptotic_ratio(seed: int, threads: int) -> PropertyResult:
    rewards = _uniform_rewards()
    ratios = []
    for n in (10, 100, 1000, 5000):
        policy = balanced_thresholds_single(rewards, n, 5)
        ratios.append(exact_alg_single(rewards, n, policy) / opt_offline(rewards, n))
    monotone = min(b - a for a, b in zip(ratios, ratios[1:]))
    limit = ratios[-1] - (-math.expm1(-5.0) - 1e-3)
    finite = math.inf
    for k in range(1, 6):
        policy = balanced_thresholds_single(rewards, 10, k)
        ratio = exact_alg_single(rewards, 10, policy) / opt_offline(rewards, 10)
        finite = min(finite, ratio - (-math.expm1(-k) - 0.01))
    return _result("balanced_ratio_convergence", min(monotone, limit, finite), f"ratios {ratios}")


def _best_static_value(reward: RewardDistribution, n: int) -> float:
    levels = np.linspace(0.0, 1.0, 401)[1:-1]
    best = 0.0
    for u in levels:
        tau = float(reward.quantile(np.asarray(u)))
        best = max(best, (1.0 - u**n) * conditional_mean(reward, tau, reward.support_hi))
    return best


def check_static_threshold_floor(seed: int, threads: int) -> PropertyResult:
    margin = math.inf
    details = []
    for G in (uniform(0.0, 1.0), exponential(1.0)):
        rewards = RewardDistribution.from_values(G)
        for n in (10, 50):
            benchmark = opt_offline(rewards, n)
            balanced = exact_alg_single(rewards, n, balanced_thresholds_single(rewards, n, 1)) / benchmark
            best = _best_static_value(rewards, n) / benchmark
            margin = min(margin, best - ONE_MINUS_INV_E - 0.02, balanced - ONE_MINUS_INV_E + 1e-12)
            details.append(f"{G.name} n={n}: balanced {balanced:.6f} best {best:.6f}")
    return _result("static_threshold_floor", margin, "; ".join(details))


def _random_thresholds(G: ValueDistribution, k: int, rng: np.random.Generator) -> tuple[float, ...]:
    while True:
        levels = np.sort(rng.uniform(0.05, 0.98, size=k))[::-1]
        if k == 1 or np.min(-np.diff(levels)) >= 0.02:
            return tuple(float(t) for t in G.quantile(levels))


def check_equilibrium_round_trip(seed: int, threads: int) -> PropertyResult:
    rng = np.random.default_rng(seed)
    worst_trip = worst_residual = worst_gain = 0.0
    for index in range(50):
        G = uniform(0.0, 1.0) if index % 2 == 0 else exponential(1.0)
        n = int(rng.integers(2, 11))
        k = int(rng.integers(1, 7))
        thresholds = _random_thresholds(G, k, rng)
        schedule = thresholds_to_prices(G, n, thresholds)
        solved = prices_to_thresholds(G, n, schedule)
        repriced = thresholds_to_prices(G, n, solved.thresholds)
        worst_trip = max(
            worst_trip,
            float(np.max(np.abs(np.subtract(solved.thresholds, thresholds)))),
            float(np.max(np.abs(np.subtract(repriced.prices, schedule.prices)))),
        )
        for j in range(1, k):
            worst_residual = max(worst_residual, abs(indifference_residual(G, n, j, solved)))
        report = best_response_audit(G, n, 1, solved, 200)
        worst_gain = max(worst_gain, report.max_gain)
    margin = min(1e-8 - worst_trip, 1e-9 - worst_residual, 1e-8 - worst_gain)
    detail = f"trip {worst_trip:.3g} residual {worst_residual:.3g} gain {worst_gain:.3g}"
    return _result("equilibrium_round_trip", margin, detail)


def check_hand_solved_profile(seed: int, threads: int) -> PropertyResult:
    G = uniform(0.0, 1.0)
    schedule = thresholds_to_prices(G, 2, (0.8, 0.5))
    profile = profile_from_quantiles((0.8, 0.5), (0.8, 0.5), 2)
    utilities = round_utilities(0.8, profile)
    error = max(
        abs(schedule.prices[0] - 0.583333),
        abs(schedule.prices[1] - 0.5),
        abs(utilities[0] - 0.195),
        abs(utilities[1] - 0.195),
    )
    return _result("hand_solved_profile", PRINTED_TOL - error, f"prices {schedule.prices}")


def check_schedule_examples(seed: int, threads: int) -> PropertyResult:
    G = uniform(0.0, 1.0)
    welfare = welfare_prices(G, 10, 5)
    closed = uniform_welfare_prices(10, 5)
    revenue = revenue_prices(G, 10, 5)
    exact = [float(np.max(np.abs(np.subtract(welfare.prices.prices, closed))))]
    exact.extend(abs(indifference_residual(G, 10, j, revenue)) for j in range(1, 5))
    printed = [
        abs(welfare.prices.prices[4] - 0.606531),
        abs(welfare.prices.prices[3] - 0.644387),
        abs(revenue_prices(G, 1, 1).prices.prices[0] - 0.683940),
        abs(revenue_prices(G, 2, 1).prices.prices[0] - 0.803265),
        abs(myerson_opt_revenue(G, 1) - 0.25),
        abs(myerson_opt_revenue(G, 2) - 5.0 / 12.0),
        abs(myerson_opt_revenue(G, 2, 2) - 0.5),
        abs(guarantee_multi(1, 2) - (1.0 - 2.0 * math.exp(-2.0))),
    ]
    margin = min(EXACT_TOL - max(exact), PRINTED_TOL - max(printed))
    return _result("schedule_examples", margin, f"exact error {max(exact):.3g}, printed error {max(printed):.3g}")


def oracle_fixtures() -> list[tuple[DiscreteDistribution, int, int, ThresholdPolicy]]:
    """Small discrete instances with thresholds strictly between atoms."""

    fixtures = []
    for atoms in ORACLE_LAWS:
        law = DiscreteDistribution(atoms)
        values = law.values
        midpoints = tuple(float(x) for x in ((values[1:] + values[:-1]) / 2.0)[::-1])
        for n in (2, 4):
            for m in (1, 2):
                for k in sorted({1, min(3, len(midpoints))}):
                    fixtures.append((law, n, m, ThresholdPolicy(midpoints[:k])))
    return fixtures


def check_oracle_stage_sum(seed: int, threads: int) -> PropertyResult:
    worst = 0.0
    count = 0
    for law, n, m, policy in oracle_fixtures():
        if m != 1:
            continue
        count += 1
        worst = max(worst, abs(exact_alg_enumeration(law, n, m, policy) - stage_decomposition(law, n, policy)))
    return _result("oracle_stage_sum", 1e-12 - worst, f"{count} instances, max error {worst:.3g}")


# ---------------------------------------------------------------------------
# Monte Carlo and Bellman checks
# ---------------------------------------------------------------------------


def check_mc_consistency(seed: int, threads: int) -> PropertyResult:
    rng = np.random.default_rng(seed)
    margin = math.inf
    for index in range(10):
        G = uniform(0.0, float(rng.uniform(0.5, 2.0))) if index % 2 == 0 else exponential(float(rng.uniform(0.5, 2.0)))
        rewards = RewardDistribution.from_values(G)
        n = int(rng.integers(2, 31))
        k = int(rng.integers(1, 6))
        policy = balanced_thresholds_single(rewards, n, k)
        exact = exact_alg_single(rewards, n, policy)
        estimate = expected_reward_mc(ProphetInstance(rewards, n), policy, MC_TRIALS, seed + index, threads=threads)
        margin = min(margin, SIGMAS * estimate.std_error - abs(estimate.mean - exact))
    return _result("mc_matches_exact", margin)


def _profile_revenue(transform: VirtualValueTransform, profile: EquilibriumProfile, n: int) -> float:
    induced = induced_reward_distribution(transform, False)
    phi_thresholds = virtual_values(transform, np.asarray(profile.thresholds))
    return exact_alg_single(induced, n, ThresholdPolicy(tuple(float(x) for x in phi_thresholds)))


def check_revenue_equivalence(seed: int, threads: int) -> PropertyResult:
    margin = math.inf
    details = []
    for G in (uniform(0.0, 1.0), exponential(1.0)):
        benchmark = myerson_opt_revenue(G, 10)
        for k in (1, 2, 3, 5):
            inst = AuctionInstance(G, 10, 1, k)
            profile = revenue_prices(G, 10, k)
            estimate = expected_outcome_mc(inst, profile, MC_TRIALS, seed + k, threads=threads)
            gap = estimate.revenue_minus_virtual
            exact = _profile_revenue(inst.transform, profile, 10)
            margin = min(
                margin,
                SIGMAS * gap.std_error - abs(gap.mean),
                SIGMAS * estimate.virtual_surplus.std_error - abs(estimate.virtual_surplus.mean - exact),
            )
            details.append(f"{G.name} k={k}: revenue {estimate.revenue.mean:.6f} / {benchmark:.6f}")
    return _result("revenue_equivalence", margin, "; ".join(details))


def check_revenue_floor(seed: int, threads: int) -> PropertyResult:
    """Finite-n revenue against ``(1 - e^{-k})`` of the optimum; reported, not enforced."""

    margin = math.inf
    for G in (uniform(0.0, 1.0), exponential(1.0)):
        benchmark = myerson_opt_revenue(G, 10)
        transform = VirtualValueTransform.from_distribution(G)
        for k in (1, 2, 3, 5):
            revenue = _profile_revenue(transform, revenue_prices(G, 10, k), 10)
            margin = min(margin, revenue - (-math.expm1(-k) - 0.01) * benchmark)
    return _result("revenue_floor_n10", margin, "exact revenue of the reserve-conditioned schedule", required=False)


def check_dp_dominance(seed: int, threads: int) -> PropertyResult:
    rewards = _uniform_rewards()
    solution = dp_solve(rewards, 10, 5, 2000)
    margin = min(b - a for a, b in zip(solution.layer_values, solution.layer_values[1:]))
    for k in range(1, 6):
        balanced = exact_alg_single(rewards, 10, balanced_thresholds_single(rewards, 10, k))
        margin = min(margin, solution.layer_values[k] + solution.grid_error - balanced)
    return _result("dp_dominates_balanced", margin, f"layers {solution.layer_values}")


def _multi_unit_margin(k: int, seed: int, threads: int) -> tuple[float, float]:
    rewards = _uniform_rewards()
    n, m = 1000, 2
    benchmark = opt_offline(rewards, n, m)
    policy = balanced_thresholds_multi(rewards, n, m, k)
    estimate = expected_reward_mc(ProphetInstance(rewards, n, m), policy, MULTI_TRIALS, seed + k, threads=threads)
    ratio = estimate.mean / benchmark
    return ratio - (guarantee_multi(k, m) / 1.05 - SIGMAS * estimate.std_error / benchmark), ratio


def check_multi_unit_ratio(seed: int, threads: int) -> PropertyResult:
    margin, ratio = _multi_unit_margin(1, seed, threads)
    return _result("multi_unit_ratio", margin, f"ratio {ratio:.6f}")


def check_multi_unit_rounds(seed: int, threads: int) -> PropertyResult:
    """Second-round multi-unit bound; reported, not enforced."""

    margin, ratio = _multi_unit_margin(2, seed, threads)
    return _result("multi_unit_two_rounds", margin, f"ratio {ratio:.6f}", required=False)


def check_oracle_mc(seed: int, threads: int) -> PropertyResult:
    margin = math.inf
    for index, (law, n, m, policy) in enumerate(oracle_fixtures()):
        exact = exact_alg_enumeration(law, n, m, policy)
        inst = ProphetInstance(law.as_reward_distribution(), n, m)
        estimate = expected_reward_mc(inst, policy, ORACLE_TRIALS, seed + index, threads=threads)
        margin = min(margin, SIGMAS * estimate.std_error - abs(estimate.mean - exact) + 1e-12)
    return _result("oracle_matches_mc", margin)


def check_deviation_agreement(seed: int, threads: int) -> PropertyResult:
    G = uniform(0.0, 1.0)
    honest = profile_from_quantiles((0.8, 0.5), (0.8, 0.5), 2)
    lowered = honest.with_prices((honest.prices.prices[0] - 0.05, honest.prices.prices[1]))
    agree = 0.0
    for profile in (honest, lowered, revenue_prices(G, 5, 3)):
        closed = best_response_audit(G, profile.n, 1, profile, 100)
        simulated = deviation_check_mc(G, profile.n, 1, profile, 20, 10**4, seed)
        if closed.passed != simulated.passed:
            agree = -1.0
    return _result("audit_agreement", agree)


FAST_CHECKS: tuple[Check, ...] = (
    check_single_item_floor,
    check_multi_unit_floor,
    check_polynomial_identities,
    check_uniform_warmup,
    check_asymptotic_ratio,
    check_static_threshold_floor,
    check_equilibrium_round_trip,
    check_hand_solved_profile,
    check_schedule_examples,
    check_oracle_stage_sum,
)

FULL_CHECKS: tuple[Check, ...] = FAST_CHECKS + (
    check_mc_consistency,
    check_revenue_equivalence,
    check_revenue_floor,
    check_dp_dominance,
    check_multi_unit_ratio,
    check_multi_unit_rounds,
    check_oracle_mc,
    check_deviation_agreement,
)

SUITES: dict[str, tuple[Check, ...]] = {"fast": FAST_CHECKS, "full": FULL_CHECKS}


def run_suite(suite: str, *, seed: int = 7, threads: int = 1) -> list[PropertyResult]:
    """Run every check of *suite*; a check that raises counts as a failure."""

    results = []
    for check in SUITES[suite]:
        started = time.perf_counter()
        try:
            result = check(seed, threads)
        except KdpaError as exc:
            name = check.__name__.removeprefix("check_")
            result = PropertyResult(name=name, passed=False, margin=-math.inf, detail=str(exc))
        elapsed = time.perf_counter() - started
        LOG.info("%s %s (margin %.3g, %.1fs)", "PASS" if result.passed else "FAIL", result.name, result.margin, elapsed)
        results.append(result)
    return results


def suite_passed(results: list[PropertyResult]) -> bool:
    return all(result.passed for result in results if result.required)


def format_report(results: list[PropertyResult]) -> str:
    """One line per property: status, name, margin and detail."""

    lines = []
    for result in results:
        status = "PASS" if result.passed else ("FAIL" if result.required else "NOTE")
        lines.append(f"{status:4} {result.name:32} margin={result.margin:+.6g}  {result.detail}".rstrip())
    lines.append("OK" if suite_passed(results) else "FAILED")
    return "\n".join(lines) + "\n"
