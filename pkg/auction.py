"""k-level descending price auctions: price design, simulation and benchmarks.

Price schedules are built from target quantiles of the equilibrium
thresholds.  The revenue schedule conditions on values above the Myerson
reserve; the welfare schedule balances the values themselves.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from dist import (
    RewardDistribution,
    ValueDistribution,
    VirtualValueTransform,
    induced_reward_distribution,
    virtual_values,
)
from equilibrium import EquilibriumProfile, profile_from_quantiles
from errors import DegenerateCompetition, DomainError
from montecarlo import Estimate, run_trials
from prophet import batch_selection, opt_offline

__all__ = [
    "AuctionInstance",
    "Winner",
    "AuctionOutcome",
    "AuctionEstimate",
    "revenue_quantiles",
    "welfare_quantiles",
    "revenue_prices",
    "welfare_prices",
    "uniform_welfare_prices",
    "allocate",
    "simulate_kdpa",
    "myerson_opt_revenue",
    "max_welfare",
    "expected_outcome_mc",
]

LOG = logging.getLogger("kdpa.auction")


@dataclass(frozen=True)
class AuctionInstance:
    """``n`` unit-demand buyers with values from ``G``, ``m`` units, ``k`` price levels."""

    values_dist: ValueDistribution
    n: int
    m: int = 1
    k: int = 1

    def __post_init__(self) -> None:
        if self.n < 2:
            raise DomainError(f"an auction needs at least two buyers (got {self.n})")
        if not 1 <= self.m <= self.n:
            raise DomainError(f"units must satisfy 1 <= m <= n (got m={self.m}, n={self.n})")
        if self.k < 1:
            raise DomainError(f"k must be at least 1 (got {self.k})")

    @cached_property
    def transform(self) -> VirtualValueTransform:
        return VirtualValueTransform.from_distribution(self.values_dist)


@dataclass(frozen=True)
class Winner:
    buyer: int
    round: int
    price: float
    value: float


@dataclass(frozen=True)
class AuctionOutcome:
    """Winners of one auction together with its revenue, welfare and virtual surplus."""

    winners: tuple[Winner, ...]
    revenue: float
    welfare: float
    virtual_surplus: float


@dataclass(frozen=True)
class AuctionEstimate:
    revenue: Estimate
    welfare: Estimate
    virtual_surplus: Estimate
    revenue_minus_virtual: Estimate


def _levels(n: int, m: int, k: int) -> np.ndarray:
    if m == 1:
        return np.exp(-np.arange(1, k + 1) / n)
    if not 1 <= m < n:
        raise DomainError(f"multi-unit schedules need 1 <= m < n (got m={m}, n={n})")
    return (1.0 - m / n) ** np.arange(1, k + 1)


def revenue_quantiles(G: ValueDistribution, n: int, k: int, m: int = 1) -> tuple[VirtualValueTransform, np.ndarray]:
    """Reserve transform and target threshold quantiles ``G(ρ) + (1 - G(ρ)) α^j``."""

    transform = VirtualValueTransform.from_distribution(G)
    below = float(G.cdf(np.asarray(transform.reserve)))
    return transform, below + (1.0 - below) * _levels(n, m, k)


def welfare_quantiles(n: int, k: int, m: int = 1) -> np.ndarray:
    return _levels(n, m, k)


def _profile(G: ValueDistribution, levels: np.ndarray, n: int, m: int) -> EquilibriumProfile:
    thresholds = np.asarray(G.quantile(levels), dtype=float)
    return profile_from_quantiles(tuple(thresholds), tuple(levels), n, m)


def revenue_prices(G: ValueDistribution, n: int, k: int, m: int = 1) -> EquilibriumProfile:
    """Revenue schedule: balanced thresholds of the reserve-conditioned virtual values.

    With one buyer every weight equals one and all prices collapse onto the
    last threshold.
    """

    if k < 1 or n < 1:
        raise DomainError(f"need n >= 1 and k >= 1 (got n={n}, k={k})")
    transform, levels = revenue_quantiles(G, n, k, m)
    profile = _profile(G, levels, n, m)
    LOG.info("Revenue schedule (reserve %.6g): prices %s", transform.reserve, profile.prices.prices)
    return profile


def welfare_prices(G: ValueDistribution, n: int, k: int, m: int = 1) -> EquilibriumProfile:
    """Welfare schedule with thresholds ``G^{-1}(e^{-j/n})``."""

    if n < 2:
        raise DegenerateCompetition("the welfare schedule needs at least two buyers")
    if k < 1:
        raise DomainError(f"k must be at least 1 (got {k})")
    profile = _profile(G, welfare_quantiles(n, k, m), n, m)
    LOG.info("Welfare schedule: prices %s", profile.prices.prices)
    return profile


def uniform_welfare_prices(n: int, k: int) -> list[float]:
    """Closed-form welfare recursion for uniform[0, 1] values."""

    decay = math.exp(-(n - 1) / n)
    prices = [0.0] * k
    prices[-1] = math.exp(-k / n)
    for j in range(k - 1, 0, -1):
        prices[j - 1] = math.exp(-j / n) * (1.0 - decay) + decay * prices[j]
    return prices


def allocate(
    values: np.ndarray,
    profile: EquilibriumProfile,
    m: int,
    rng: np.random.Generator,
    transform: VirtualValueTransform,
) -> AuctionOutcome:
    """Run the clock on realised *values*: earlier rounds first, random ties."""

    values = np.asarray(values, dtype=float)
    best, rounds = batch_selection(values[None, :], profile.thresholds, m, rng)
    winners = tuple(
        Winner(buyer=int(b), round=int(r) + 1, price=profile.prices.prices[int(r)], value=float(values[b]))
        for b, r in sorted(zip(best[0], rounds[0]), key=lambda pair: (pair[1], pair[0]))
        if r < profile.k
    )
    won_values = np.asarray([w.value for w in winners])
    virtual = float(virtual_values(transform, won_values).sum()) if winners else 0.0
    return AuctionOutcome(
        winners=winners,
        revenue=float(sum(w.price for w in winners)),
        welfare=float(won_values.sum()) if winners else 0.0,
        virtual_surplus=virtual,
    )


def simulate_kdpa(inst: AuctionInstance, profile: EquilibriumProfile, rng: np.random.Generator) -> AuctionOutcome:
    """Draw values, let buyers bid by the profile and allocate the units."""

    if profile.k != inst.k:
        raise DomainError(f"profile has {profile.k} rounds but the instance expects {inst.k}")
    values = inst.values_dist.sample(rng, inst.n)
    return allocate(values, profile, inst.m, rng, inst.transform)


def myerson_opt_revenue(G: ValueDistribution, n: int, m: int = 1) -> float:
    """Optimal expected revenue: expected sum of the top ``m`` positive virtual values."""

    transform = VirtualValueTransform.from_distribution(G)
    return opt_offline(induced_reward_distribution(transform, False), n, m)


def max_welfare(G: ValueDistribution, n: int, m: int = 1) -> float:
    """Expected sum of the top ``m`` values."""

    return opt_offline(RewardDistribution.from_values(G), n, m)


def expected_outcome_mc(
    inst: AuctionInstance,
    profile: EquilibriumProfile,
    trials: int,
    seed: int,
    *,
    threads: int = 1,
) -> AuctionEstimate:
    """Monte Carlo revenue, welfare and virtual surplus with standard errors."""

    if profile.k != inst.k:
        raise DomainError(f"profile has {profile.k} rounds but the instance expects {inst.k}")
    transform = inst.transform
    thresholds = profile.thresholds
    prices = np.asarray(profile.prices.prices)
    k = profile.k

    def kernel(rng: np.random.Generator, count: int) -> np.ndarray:
        values = inst.values_dist.sample(rng, (count, inst.n))
        best, rounds = batch_selection(values, thresholds, inst.m, rng)
        picked = np.take_along_axis(values, best, axis=1)
        won = rounds < k
        paid = np.where(won, prices[np.minimum(rounds, k - 1)], 0.0)
        virtual = np.zeros_like(picked)
        virtual[won] = virtual_values(transform, picked[won])
        revenue = paid.sum(axis=1)
        surplus = virtual.sum(axis=1)
        welfare = np.where(won, picked, 0.0).sum(axis=1)
        return np.column_stack((revenue, welfare, surplus, revenue - surplus))

    revenue, welfare, surplus, gap = run_trials(kernel, trials, seed, width=inst.n, threads=threads)
    LOG.info(
        "MC revenue %.6f +/- %.6f, welfare %.6f +/- %.6f",
        revenue.mean,
        revenue.std_error,
        welfare.mean,
        welfare.std_error,
    )
    return AuctionEstimate(revenue=revenue, welfare=welfare, virtual_surplus=surplus, revenue_minus_virtual=gap)
