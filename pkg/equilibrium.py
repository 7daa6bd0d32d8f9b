"""Price schedules and symmetric equilibrium threshold profiles of the k-DPA.

A buyer with value in ``[τ̂_j, τ̂_{j-1})`` stops the clock at price ``p_j``.
The thresholds and prices are tied together by indifference at every
interior threshold; this module maps in both directions and audits
profiles against unilateral deviations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from dist import ValueDistribution
from errors import DegenerateCompetition, DomainError, NoBracket, NonMinimal
from prophet import selection_polynomials

__all__ = [
    "PriceSchedule",
    "EquilibriumProfile",
    "AuditReport",
    "winning_weight",
    "multi_unit_weight",
    "indifference_residual",
    "profile_from_quantiles",
    "thresholds_to_prices",
    "thresholds_to_prices_multi",
    "prices_to_thresholds",
    "bid_of",
    "round_of",
    "round_utilities",
    "best_response_audit",
]

LOG = logging.getLogger("kdpa.equilibrium")

TERMINAL_TOL = 1e-10
PRICE_TOL = 1e-9
INNER_XTOL = 1e-15
SHOOT_MAX_ITER = 200
SCAN_POINTS = 64
TOP_QUANTILE = 1.0 - 1e-12
COLLISION_TOL = 1e-10
AUDIT_TOL = 1e-8


@dataclass(frozen=True)
class PriceSchedule:
    """Announced prices ``p_1 > ... > p_k > 0`` for ``n`` buyers and ``m`` units."""

    prices: tuple[float, ...]
    n: int
    m: int = 1

    def __post_init__(self) -> None:
        values = tuple(float(p) for p in self.prices)
        object.__setattr__(self, "prices", values)
        if not values:
            raise DomainError("a price schedule needs at least one price")
        if self.n >= 2 and any(upper <= lower for upper, lower in zip(values, values[1:])):
            raise DomainError(f"prices must be strictly decreasing: {values}")
        if any(upper < lower for upper, lower in zip(values, values[1:])):
            raise DomainError(f"prices must not increase: {values}")
        if values[-1] <= 0.0:
            raise DomainError(f"prices must be positive: {values}")

    @property
    def k(self) -> int:
        return len(self.prices)


@dataclass(frozen=True)
class EquilibriumProfile:
    """Thresholds ``τ̂``, the schedule they answer, and quantiles ``β`` (with ``β_0 = 1``)."""

    thresholds: tuple[float, ...]
    prices: PriceSchedule
    quantiles: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        object.__setattr__(self, "quantiles", tuple(float(b) for b in self.quantiles))
        k = len(self.thresholds)
        if k != self.prices.k or len(self.quantiles) != k + 1:
            raise DomainError("thresholds, prices and quantiles disagree on the number of rounds")
        if any(upper < lower for upper, lower in zip(self.thresholds, self.thresholds[1:])):
            raise DomainError(f"thresholds must not increase: {self.thresholds}")

    @property
    def k(self) -> int:
        return len(self.thresholds)

    @property
    def n(self) -> int:
        return self.prices.n

    @property
    def m(self) -> int:
        return self.prices.m

    def with_prices(self, prices: Sequence[float]) -> "EquilibriumProfile":
        """Same thresholds with a different price vector (used to build deviations)."""

        return replace(self, prices=replace(self.prices, prices=tuple(prices)))


@dataclass
class AuditReport:
    """Outcome of a best-response check over a grid of values."""

    max_gain: float
    worst_value: float
    interior_gaps: list[float] = field(default_factory=list)
    violations: list[tuple[float, float]] = field(default_factory=list)
    passed: bool = True


def _geometric_sum(a: float, b: float, n: int) -> float:
    powers = np.arange(n)
    return float(np.sum(np.power(a, powers) * np.power(b, n - 1 - powers)))


def multi_unit_weight(beta_prev: float, beta_cur: float, n: int, m: int) -> float:
    """``n`` times the win probability of a round with quantile bounds ``[β_cur, β_prev)``.

    Sums over the ``r`` opponents that stopped earlier and the ``ℓ`` that tie
    in the same round, each tie winning ``min(1, (m - r) / (ℓ + 1))``.
    """

    ratio = beta_cur / beta_prev if beta_prev > 0.0 else 1.0
    total = 0.0
    for earlier in range(min(m, n)):
        weight = float(stats.binom.pmf(earlier, n - 1, 1.0 - beta_prev))
        if weight == 0.0:
            continue
        _, share = selection_polynomials(n - earlier, m - earlier, min(max(ratio, 0.0), 1.0))
        total += weight * share
    return n * total


def winning_weight(beta_prev: float, beta_cur: float, n: int, m: int = 1) -> float:
    """``n`` times the probability that a buyer stopping in this round wins."""

    if m == 1:
        return _geometric_sum(beta_prev, beta_cur, n)
    return multi_unit_weight(beta_prev, beta_cur, n, m)


def _weights(quantiles: Sequence[float], n: int, m: int) -> list[float]:
    return [winning_weight(quantiles[j - 1], quantiles[j], n, m) for j in range(1, len(quantiles))]


def indifference_residual(G: ValueDistribution, n: int, j: int, profile: EquilibriumProfile) -> float:
    """Utility gap between rounds ``j`` and ``j + 1`` for the buyer at ``τ̂_j`` (1-based ``j``)."""

    if not 1 <= j <= profile.k - 1:
        raise DomainError(f"interior round index must lie in [1, {profile.k - 1}] (got {j})")
    beta = profile.quantiles
    tau = profile.thresholds[j - 1]
    prices = profile.prices.prices
    left = winning_weight(beta[j - 1], beta[j], n, profile.m) * (tau - prices[j - 1])
    right = winning_weight(beta[j], beta[j + 1], n, profile.m) * (tau - prices[j])
    return left - right


def _backward_prices(thresholds: Sequence[float], quantiles: Sequence[float], n: int, m: int) -> list[float]:
    weights = _weights(quantiles, n, m)
    prices = [0.0] * len(thresholds)
    prices[-1] = thresholds[-1]
    for j in range(len(thresholds) - 2, -1, -1):
        tau = thresholds[j]
        prices[j] = tau - weights[j + 1] * (tau - prices[j + 1]) / weights[j]
    return prices


def profile_from_quantiles(
    thresholds: Sequence[float], quantiles: Sequence[float], n: int, m: int = 1
) -> EquilibriumProfile:
    """Build the profile whose prices make every interior threshold indifferent.

    *quantiles* lists ``β_1 .. β_k``; ``β_0 = 1`` is prepended.
    """

    betas = (1.0, *quantiles)
    prices = _backward_prices(thresholds, betas, n, m)
    return EquilibriumProfile(
        thresholds=tuple(thresholds), prices=PriceSchedule(tuple(prices), n=n, m=m), quantiles=betas
    )


def _validate_thresholds(thresholds: Sequence[float]) -> tuple[float, ...]:
    values = tuple(float(t) for t in thresholds)
    if not values:
        raise DomainError("at least one threshold is required")
    if any(upper <= lower for upper, lower in zip(values, values[1:])):
        raise DomainError(f"thresholds must be strictly decreasing: {values}")
    if values[-1] <= 0.0:
        raise DomainError(f"thresholds must be positive: {values}")
    return values


def thresholds_to_prices(G: ValueDistribution, n: int, thresholds: Sequence[float]) -> PriceSchedule:
    """Prices under which *thresholds* form a symmetric equilibrium (one unit)."""

    values = _validate_thresholds(thresholds)
    if n < 2:
        raise DegenerateCompetition("a single buyer cannot sustain strictly decreasing prices")
    quantiles = np.asarray(G.cdf(np.asarray(values)), dtype=float)
    return profile_from_quantiles(values, quantiles, n).prices


def thresholds_to_prices_multi(G: ValueDistribution, n: int, m: int, thresholds: Sequence[float]) -> PriceSchedule:
    """Multi-unit analogue of :func:`thresholds_to_prices` with ``p_k = τ_k``."""

    values = _validate_thresholds(thresholds)
    if n < 2:
        raise DegenerateCompetition("a single buyer cannot sustain strictly decreasing prices")
    if not 1 <= m < n:
        raise DomainError(f"need 1 <= m < n (got m={m}, n={n})")
    quantiles = np.asarray(G.cdf(np.asarray(values)), dtype=float)
    return profile_from_quantiles(values, quantiles, n, m).prices


def _shoot(beta_first: float, prices: Sequence[float], n: int, G: ValueDistribution) -> tuple[int, list[float]]:
    """Propagate the indifference chain from ``β_1``; return (sign of ``τ̂_k - p_k``, betas)."""

    betas = [1.0, beta_first]
    taus = [float(G.quantile(np.asarray(beta_first)))]
    k = len(prices)
    for j in range(1, k):
        tau, beta_prev, beta_cur = taus[-1], betas[-2], betas[-1]
        if tau <= prices[j]:
            return -1, betas
        target = winning_weight(beta_prev, beta_cur, n) * (tau - prices[j - 1]) / (tau - prices[j])
        floor, ceiling = beta_cur ** (n - 1), n * beta_cur ** (n - 1)
        if target < floor:
            return -1, betas
        if target >= ceiling:
            return 1, betas
        if target == floor:
            beta_next = 0.0
        else:
            beta_next = optimize.brentq(
                lambda b: _geometric_sum(beta_cur, b, n) - target,
                0.0,
                beta_cur,
                xtol=INNER_XTOL,
                maxiter=SHOOT_MAX_ITER,
            )
        tau_next = float(G.quantile(np.asarray(beta_next)))
        betas.append(beta_next)
        taus.append(tau_next)
        if j < k - 1 and tau_next < prices[j]:
            return -1, betas
    gap = taus[-1] - prices[-1]
    if abs(gap) <= TERMINAL_TOL * 1e-2:
        return 0, betas
    return (1 if gap > 0 else -1), betas


def _price_gaps(G: ValueDistribution, n: int, p: Sequence[float], interior: np.ndarray) -> np.ndarray:
    """Backward-map prices of ``(*interior, p_k)`` minus the announced prices."""

    taus = (*(float(t) for t in interior), p[-1])
    betas = (1.0, *(float(b) for b in G.cdf(np.asarray(taus))))
    try:
        implied = _backward_prices(taus, betas, n, 1)
    except ZeroDivisionError:
        return np.full(len(p) - 1, math.inf)
    return np.asarray(implied[:-1]) - np.asarray(p[:-1])


def _polish(G: ValueDistribution, n: int, p: Sequence[float], taus: list[float]) -> tuple[list[float], float]:
    """Refine the interior thresholds of a shot so the backward map reproduces *p*."""

    start = np.asarray(taus[:-1], dtype=float)
    start_gap = float(np.max(np.abs(_price_gaps(G, n, p, start))))
    solution = optimize.root(
        lambda x: _price_gaps(G, n, p, x), start, method="hybr", options={"xtol": INNER_XTOL}
    )
    candidate = np.asarray(solution.x, dtype=float)
    chain = np.append(candidate, p[-1])
    if np.all(np.isfinite(candidate)) and np.all(np.diff(chain) < 0.0):
        gap = float(np.max(np.abs(_price_gaps(G, n, p, candidate))))
        if gap <= start_gap:
            return [*map(float, candidate), p[-1]], gap
    return [*taus[:-1], p[-1]], start_gap


def prices_to_thresholds(G: ValueDistribution, n: int, prices: PriceSchedule) -> EquilibriumProfile:
    """Solve the equilibrium thresholds of a one-unit schedule by shooting on ``β_1``.

    The shot closest to ``τ̂_k = p_k`` fixes the interior thresholds, which a
    root finder on the backward price map then polishes; the last threshold is
    ``p_k`` itself.
    """

    p = prices.prices
    if n < 2:
        raise DegenerateCompetition("a single buyer cannot sustain strictly decreasing prices")
    if prices.m != 1:
        raise DomainError("the forward price-to-threshold map is available for a single unit only")
    if prices.k == 1:
        beta = float(G.cdf(np.asarray(p[0])))
        return EquilibriumProfile(thresholds=(p[0],), prices=prices, quantiles=(1.0, beta))

    best: list[float] = []
    best_gap = math.inf

    def shoot(beta_first: float) -> int:
        nonlocal best, best_gap
        sign, betas = _shoot(beta_first, p, n, G)
        if len(betas) == prices.k + 1:
            gap = abs(float(G.quantile(np.asarray(betas[-1]))) - p[-1])
            if gap < best_gap:
                best, best_gap = list(betas), gap
        return sign

    lo = float(G.cdf(np.asarray(p[0])))
    hi = 1.0 if math.isfinite(G.support_hi) else TOP_QUANTILE
    sign_lo = shoot(lo)
    sign_hi = shoot(hi)
    if sign_hi != 0 and (sign_lo >= 0 or sign_hi <= 0):
        diagnostics: list[tuple[float, int]] = []
        found = False
        grid = lo + (hi - lo) * (np.arange(1, SCAN_POINTS + 1) / (SCAN_POINTS + 1))
        previous_beta, previous_sign = lo, sign_lo
        for beta in grid:
            sign = shoot(float(beta))
            diagnostics.append((float(beta), sign))
            if previous_sign < 0 < sign or sign == 0:
                lo, hi, found = previous_beta, float(beta), True
                sign_hi = sign
                break
            previous_beta, previous_sign = float(beta), sign
        if not found and not best:
            raise NoBracket(
                f"shooting could not bracket the terminal condition for prices {p}", diagnostics=diagnostics
            )
        if not found:
            sign_hi = 0
        LOG.warning("Shooting bracket for prices %s found only by scanning", p)

    if sign_hi != 0:
        for _ in range(SHOOT_MAX_ITER):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            sign = shoot(mid)
            if sign == 0:
                break
            if sign < 0:
                lo = mid
            else:
                hi = mid
    if not best:
        raise NoBracket(f"no shot completed the indifference chain for prices {p}")

    taus = [float(G.quantile(np.asarray(b))) for b in best[1:]]
    taus, residual = _polish(G, n, p, taus)
    if residual > PRICE_TOL:
        LOG.warning("Thresholds for prices %s reproduce them only to %.3g", p, residual)
    for upper, lower in zip(taus, taus[1:]):
        if upper - lower <= COLLISION_TOL * max(1.0, abs(upper)):
            raise NonMinimal(f"thresholds {upper:.12g} and {lower:.12g} collide for prices {p}")
    quantiles = (1.0, *(float(b) for b in G.cdf(np.asarray(taus))))
    LOG.debug("Solved thresholds %s for prices %s", taus, p)
    return EquilibriumProfile(thresholds=tuple(taus), prices=prices, quantiles=quantiles)


def round_of(value: float, profile: EquilibriumProfile) -> int:
    """1-based round in which a buyer with *value* stops; 0 if she never does."""

    for index, tau in enumerate(profile.thresholds, start=1):
        if value >= tau:
            return index
    return 0


def bid_of(value: float, profile: EquilibriumProfile) -> float:
    """Price at which a buyer with *value* stops the clock, or 0."""

    index = round_of(value, profile)
    return profile.prices.prices[index - 1] if index else 0.0


def round_utilities(value: float, profile: EquilibriumProfile) -> np.ndarray:
    """Expected utility ``U_j(value)`` of stopping in each round against equilibrium play."""

    weights = np.asarray(_weights(profile.quantiles, profile.n, profile.m)) / profile.n
    return weights * (value - np.asarray(profile.prices.prices))


def best_response_audit(
    G: ValueDistribution, n: int, m: int, profile: EquilibriumProfile, value_grid: int
) -> AuditReport:
    """Compare the prescribed round with every alternative on a quantile grid of values."""

    if n != profile.n or m != profile.m:
        raise DomainError("audit parameters disagree with the profile")
    levels = (np.arange(value_grid) + 0.5) / value_grid
    values = np.concatenate((np.asarray(G.quantile(levels), dtype=float), profile.thresholds))
    report = AuditReport(max_gain=-math.inf, worst_value=math.nan)
    for value in np.sort(values):
        utilities = round_utilities(float(value), profile)
        prescribed_round = round_of(float(value), profile)
        prescribed = utilities[prescribed_round - 1] if prescribed_round else 0.0
        gain = max(0.0, float(utilities.max())) - prescribed
        if gain > report.max_gain:
            report.max_gain, report.worst_value = gain, float(value)
        if gain > AUDIT_TOL:
            report.violations.append((float(value), gain))
    for j in range(1, profile.k):
        utilities = round_utilities(profile.thresholds[j - 1], profile)
        report.interior_gaps.append(abs(float(utilities[j - 1] - utilities[j])))
    report.passed = report.max_gain <= AUDIT_TOL and all(gap <= AUDIT_TOL for gap in report.interior_gaps)
    LOG.debug("Audit max gain %.3g at value %.6g", report.max_gain, report.worst_value)
    return report
