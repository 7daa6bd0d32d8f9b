"""Brute-force ground truth on small discrete instances.

Expectations are computed by enumerating value profiles, with the uniform
tie-break resolved combinatorially, so every figure here is deterministic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from dist import RewardDistribution, ValueDistribution
from equilibrium import AuditReport, EquilibriumProfile, round_of
from errors import DomainError, ThresholdOnAtom, TooLarge
from montecarlo import block_generator
from prophet import ThresholdPolicy, expected_collection

__all__ = [
    "DiscreteDistribution",
    "exact_alg_enumeration",
    "exact_opt_enumeration",
    "stage_decomposition",
    "deviation_check_mc",
]

LOG = logging.getLogger("kdpa.oracle")

ENUMERATION_CAP = 10**7
ATOM_TOL = 1e-12
MIN_DEVIATION_TRIALS = 10**4


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite law given as ``(value, probability)`` atoms with increasing values."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        atoms = tuple((float(v), float(p)) for v, p in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise DomainError("a discrete distribution needs at least one atom")
        if any(p < 0.0 for _, p in atoms):
            raise DomainError("atom probabilities must be non-negative")
        if abs(math.fsum(p for _, p in atoms) - 1.0) > 1e-12:
            raise DomainError("atom probabilities must sum to 1")
        if any(upper[0] <= lower[0] for lower, upper in zip(atoms, atoms[1:])):
            raise DomainError("atom values must be strictly increasing")

    @property
    def values(self) -> np.ndarray:
        return np.asarray([v for v, _ in self.atoms])

    @property
    def probabilities(self) -> np.ndarray:
        return np.asarray([p for _, p in self.atoms])

    def mean(self) -> float:
        return math.fsum(v * p for v, p in self.atoms)

    def mass_below(self, x: float) -> float:
        """``P(V < x)``."""

        return math.fsum(p for v, p in self.atoms if v < x)

    def as_reward_distribution(self) -> RewardDistribution:
        """Step-CDF reward law, sampled by inverse transform."""

        values = self.values
        cumulative = np.cumsum(self.probabilities)

        def cdf(x: np.ndarray) -> np.ndarray:
            index = np.searchsorted(values, np.asarray(x, dtype=float), side="right") - 1
            return np.where(index >= 0, cumulative[np.maximum(index, 0)], 0.0)

        def quantile(q: np.ndarray) -> np.ndarray:
            index = np.searchsorted(cumulative, np.asarray(q, dtype=float), side="left")
            return values[np.minimum(index, values.size - 1)]

        return RewardDistribution(
            name=f"discrete{self.atoms}",
            cdf=cdf,
            quantile=quantile,
            support_lo=float(values[0]),
            support_hi=float(values[-1]),
        )


def _check_size(d: DiscreteDistribution, n: int) -> None:
    if len(d.atoms) ** n > ENUMERATION_CAP:
        raise TooLarge(f"{len(d.atoms)}^{n} profiles exceed the enumeration cap of {ENUMERATION_CAP}")


def _check_thresholds(d: DiscreteDistribution, policy: ThresholdPolicy) -> None:
    for tau in policy.thresholds:
        for value, _ in d.atoms:
            if abs(tau - value) <= ATOM_TOL:
                raise ThresholdOnAtom(f"threshold {tau:.12g} coincides with atom {value:.12g}")


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first, *rest)


def _profiles(d: DiscreteDistribution, n: int) -> Iterator[tuple[float, np.ndarray]]:
    """Yield ``(probability, values)`` for every multiset of ``n`` draws."""

    values = d.values
    probabilities = d.probabilities
    for counts in _compositions(n, len(d.atoms)):
        ways = math.factorial(n)
        weight = 1.0
        for count, probability in zip(counts, probabilities):
            ways //= math.factorial(count)
            weight *= float(probability) ** count
        if weight == 0.0:
            continue
        yield ways * weight, np.repeat(values, counts)


def exact_alg_enumeration(d: DiscreteDistribution, n: int, m: int, policy: ThresholdPolicy) -> float:
    """Exact expected collection of *policy* with capacity *m*."""

    _check_size(d, n)
    _check_thresholds(d, policy)
    if not 1 <= m <= n:
        raise DomainError(f"need 1 <= m <= n (got m={m}, n={n})")
    terms = [weight * expected_collection(profile, policy, m) for weight, profile in _profiles(d, n)]
    return math.fsum(terms)


def exact_opt_enumeration(d: DiscreteDistribution, n: int, m: int) -> float:
    """Exact expected sum of the top ``m`` positive values."""

    _check_size(d, n)
    if not 1 <= m <= n:
        raise DomainError(f"need 1 <= m <= n (got m={m}, n={n})")
    terms = []
    for weight, profile in _profiles(d, n):
        top = np.sort(profile)[::-1][:m]
        terms.append(weight * math.fsum(float(v) for v in top if v > 0.0))
    return math.fsum(terms)


def stage_decomposition(d: DiscreteDistribution, n: int, policy: ThresholdPolicy) -> float:
    """Single-item stage sum with ``P(V < τ)`` in place of the continuous CDF."""

    _check_thresholds(d, policy)
    total = []
    for upper, lower in policy.stages(math.inf):
        inside = [(v, p) for v, p in d.atoms if lower <= v < upper]
        mass = math.fsum(p for _, p in inside)
        if mass == 0.0:
            continue
        mean = math.fsum(v * p for v, p in inside) / mass
        total.append((d.mass_below(upper) ** n - d.mass_below(lower) ** n) * mean)
    return math.fsum(total)


def deviation_check_mc(
    G: ValueDistribution,
    n: int,
    m: int,
    profile: EquilibriumProfile,
    deviations: int,
    trials: int,
    seed: int,
) -> AuditReport:
    """Simulated gain of the best unilateral deviation, minus three standard errors.

    Opponents are shared across candidate rounds for each fixed value, and
    the tie-break is averaged exactly given the opponents' rounds.
    """

    if trials < MIN_DEVIATION_TRIALS:
        raise DomainError(f"deviation checks need at least {MIN_DEVIATION_TRIALS} trials")
    taus = np.asarray(profile.thresholds)
    prices = np.asarray(profile.prices.prices)
    k = taus.size
    levels = (np.arange(deviations) + 0.5) / deviations
    values = np.asarray(G.quantile(levels), dtype=float)
    report = AuditReport(max_gain=-math.inf, worst_value=math.nan)
    for index, value in enumerate(values):
        rng = block_generator(seed, index)
        opponents = G.sample(rng, (trials, n - 1))
        rounds = np.searchsorted(-taus, -opponents, side="left")
        utilities = np.empty((trials, k + 1))
        utilities[:, k] = 0.0
        for j in range(k):
            ahead = (rounds < j).sum(axis=1)
            tied = (rounds == j).sum(axis=1)
            left = m - ahead
            chance = np.where(left > 0, np.minimum(1.0, left / (tied + 1.0)), 0.0)
            utilities[:, j] = chance * (value - prices[j])
        prescribed_round = round_of(float(value), profile)
        prescribed = utilities[:, prescribed_round - 1] if prescribed_round else utilities[:, k]
        for column in range(k + 1):
            diff = utilities[:, column] - prescribed
            std_error = float(diff.std(ddof=1)) / math.sqrt(trials)
            gain = float(diff.mean()) - 3.0 * std_error
            if gain > report.max_gain:
                report.max_gain, report.worst_value = gain, float(value)
            if gain > 0.0:
                report.violations.append((float(value), gain))
    report.passed = report.max_gain <= 0.0
    LOG.debug("Deviation check max gain %.3g at value %.6g", report.max_gain, report.worst_value)
    return report
