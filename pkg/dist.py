"""Value and reward distributions for the k-DPA library.

Buyer values follow an atomless law ``G`` (:class:`ValueDistribution`).  The
prophet side works with a reward law ``F`` (:class:`RewardDistribution`),
either given directly or induced from ``G`` through Myerson's virtual value
(:class:`VirtualValueTransform`).  All callables are vectorised over numpy
arrays and every object is immutable after construction.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy import integrate as sp_integrate
from scipy import stats

from errors import (
    ConfigError,
    DegenerateConditioning,
    EmptyInterval,
    IrregularDistribution,
    OutOfRange,
    OutOfSupport,
    QuadratureError,
    ZeroDensity,
)

__all__ = [
    "ValueDistribution",
    "VirtualValueTransform",
    "RewardDistribution",
    "uniform",
    "exponential",
    "quantile_table",
    "table_from_csv",
    "from_callbacks",
    "parse_distribution",
    "virtual_value",
    "virtual_values",
    "inverse_virtual_value",
    "check_regularity",
    "induced_reward_distribution",
    "conditional_mean",
    "integrate",
    "bisect_increasing",
]

LOG = logging.getLogger("kdpa.dist")

DENSITY_FLOOR = 1e-12
QUAD_TOL = 1e-10
QUAD_ABORT_ERROR = 1e-6
TAIL_QUANTILE = 1.0 - 1e-9
SEARCH_QUANTILE = 1.0 - 1e-11
SOLVER_TOL = 1e-12
SOLVER_MAX_ITER = 200
MASS_FLOOR = 1e-12
REGULARITY_SLACK = 1e-9
DEFAULT_REGULARITY_GRID = 1000
RANGE_TOL = 1e-9

ArrayFunc = Callable[[np.ndarray], np.ndarray]


def bisect_increasing(
    func: ArrayFunc,
    targets: np.ndarray | float,
    lo: float,
    hi: float,
    *,
    tol: float = SOLVER_TOL,
    max_iter: int = SOLVER_MAX_ITER,
) -> np.ndarray:
    """Return the smallest ``x`` in [*lo*, *hi*] with ``func(x) >= target``, elementwise.

    *func* must be non-decreasing.  Widths shrink to *tol* (relative above 1).
    """

    goal = np.asarray(targets, dtype=float)
    left = np.full(goal.shape, float(lo))
    right = np.full(goal.shape, float(hi))
    for _ in range(max_iter):
        mid = 0.5 * (left + right)
        below = np.asarray(func(mid)) < goal
        left = np.where(below, mid, left)
        right = np.where(below, right, mid)
        if np.all(right - left <= tol * np.maximum(1.0, np.abs(right))):
            break
    return 0.5 * (left + right)


def _upper_bracket(func: ArrayFunc, target: float, lo: float) -> float:
    step = max(1.0, abs(lo))
    hi = lo + step
    for _ in range(SOLVER_MAX_ITER):
        if float(func(np.asarray(hi))) >= target:
            return hi
        step *= 2.0
        hi = lo + step
    return hi


def integrate(func: Callable[[float], float], a: float, b: float, *, points: Iterable[float] = ()) -> float:
    """Integrate scalar *func* over [*a*, *b*] with ``scipy.integrate.quad``.

    The interval is split at every break point strictly inside it so sharp
    features (e.g. the top order statistic for large ``n``) are resolved.
    """

    if not b > a:
        return 0.0
    if not math.isfinite(b):
        raise QuadratureError("integration limits must be finite; cap infinite supports first")
    cuts = [a, *sorted({p for p in points if a < p < b}), b]
    total = 0.0
    for left, right in zip(cuts, cuts[1:]):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sp_integrate.IntegrationWarning)
            value, abserr = sp_integrate.quad(
                lambda z: float(func(z)), left, right, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200
            )
        if abserr > QUAD_ABORT_ERROR * max(1.0, abs(value)):
            raise QuadratureError(
                f"quadrature on [{left:.6g}, {right:.6g}] did not converge (error estimate {abserr:.3g})"
            )
        total += value
    return total


@dataclass(frozen=True)
class ValueDistribution:
    """Atomless buyer value law ``G`` with its density and quantile function."""

    name: str
    cdf: ArrayFunc = field(repr=False)
    pdf: ArrayFunc = field(repr=False)
    quantile: ArrayFunc = field(repr=False)
    support_lo: float = 0.0
    support_hi: float = math.inf
    sf: ArrayFunc | None = field(default=None, repr=False)

    def survival(self, v: np.ndarray | float) -> np.ndarray:
        """Return ``1 - G(v)``, using an accurate survival function when available."""

        if self.sf is not None:
            return np.asarray(self.sf(v), dtype=float)
        return 1.0 - np.asarray(self.cdf(v), dtype=float)

    @property
    def upper_cap(self) -> float:
        """Upper limit used by quadrature (``support_hi`` or the 1-1e-9 quantile)."""

        if math.isfinite(self.support_hi):
            return self.support_hi
        return float(self.quantile(TAIL_QUANTILE))

    @property
    def search_hi(self) -> float:
        if math.isfinite(self.support_hi):
            return self.support_hi
        return float(self.quantile(SEARCH_QUANTILE))

    def sample(self, rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
        return np.asarray(self.quantile(rng.random(size)), dtype=float)


@dataclass(frozen=True)
class RewardDistribution:
    """Reward law ``F`` of the batched prophet game."""

    name: str
    cdf: ArrayFunc = field(repr=False)
    quantile: ArrayFunc = field(repr=False)
    support_lo: float = 0.0
    support_hi: float = math.inf

    @classmethod
    def from_values(cls, base: ValueDistribution) -> "RewardDistribution":
        """View the value law *base* directly as a reward law."""

        return cls(
            name=base.name,
            cdf=base.cdf,
            quantile=base.quantile,
            support_lo=base.support_lo,
            support_hi=base.support_hi,
        )

    @property
    def upper_cap(self) -> float:
        if math.isfinite(self.support_hi):
            return self.support_hi
        return float(self.quantile(TAIL_QUANTILE))

    def cdf_at(self, x: float) -> float:
        """Scalar ``F(x)`` with exact values outside the support."""

        if x >= self.support_hi:
            return 1.0
        if x < self.support_lo:
            return 0.0
        return float(self.cdf(np.asarray(x, dtype=float)))

    def conditional_below(self, theta: float) -> "RewardDistribution":
        """Return the law of ``V`` given ``V < theta``."""

        mass = self.cdf_at(theta)
        if mass <= MASS_FLOOR:
            raise EmptyInterval(f"no mass below {theta:.6g} in {self.name}")
        if mass >= 1.0:
            return self
        parent = self

        def cdf(x: np.ndarray) -> np.ndarray:
            x = np.asarray(x, dtype=float)
            inner = np.asarray(parent.cdf(np.minimum(x, theta)), dtype=float) / mass
            return np.where(x >= theta, 1.0, np.clip(inner, 0.0, 1.0))

        def quantile(q: np.ndarray) -> np.ndarray:
            return parent.quantile(np.asarray(q, dtype=float) * mass)

        return RewardDistribution(
            name=f"{self.name}|<{theta:.6g}",
            cdf=cdf,
            quantile=quantile,
            support_lo=self.support_lo,
            support_hi=min(theta, self.support_hi),
        )

    def sample(self, rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
        return np.asarray(self.quantile(rng.random(size)), dtype=float)


# ---------------------------------------------------------------------------
# Built-in families
# ---------------------------------------------------------------------------


def uniform(a: float = 0.0, b: float = 1.0) -> ValueDistribution:
    """Uniform law on [*a*, *b*]."""

    if not (math.isfinite(a) and math.isfinite(b) and a < b):
        raise ConfigError(f"uniform bounds must be finite with a < b (got {a}, {b})")
    law = stats.uniform(loc=a, scale=b - a)
    return ValueDistribution(
        name=f"uniform:{a:g},{b:g}",
        cdf=law.cdf,
        pdf=law.pdf,
        quantile=law.ppf,
        support_lo=float(a),
        support_hi=float(b),
        sf=law.sf,
    )


def exponential(rate: float = 1.0) -> ValueDistribution:
    """Exponential law with the given *rate* on [0, inf)."""

    if not (math.isfinite(rate) and rate > 0):
        raise ConfigError(f"exponential rate must be positive (got {rate})")
    law = stats.expon(scale=1.0 / rate)
    return ValueDistribution(
        name=f"exp:{rate:g}",
        cdf=law.cdf,
        pdf=law.pdf,
        quantile=law.ppf,
        support_lo=0.0,
        support_hi=math.inf,
        sf=law.sf,
    )


def quantile_table(qs: Iterable[float], vs: Iterable[float], *, name: str = "table") -> ValueDistribution:
    """Piecewise-linear quantile function through the points ``(q_i, v_i)``."""

    q_points = np.asarray(list(qs), dtype=float)
    v_points = np.asarray(list(vs), dtype=float)
    if q_points.shape != v_points.shape or q_points.size < 2:
        raise ConfigError("quantile table needs at least two (q, v) rows")
    if not (math.isclose(q_points[0], 0.0, abs_tol=1e-12) and math.isclose(q_points[-1], 1.0, abs_tol=1e-12)):
        raise ConfigError("quantile table must start at q=0 and end at q=1")
    if np.any(np.diff(q_points) <= 0) or np.any(np.diff(v_points) <= 0):
        raise ConfigError("quantile table columns must be strictly increasing")
    if not np.all(np.isfinite(v_points)):
        raise ConfigError("quantile table values must be finite")
    slopes = np.diff(q_points) / np.diff(v_points)

    def cdf(v: np.ndarray) -> np.ndarray:
        return np.interp(v, v_points, q_points)

    def pdf(v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        idx = np.clip(np.searchsorted(v_points, v, side="right") - 1, 0, slopes.size - 1)
        inside = (v >= v_points[0]) & (v <= v_points[-1])
        return np.where(inside, slopes[idx], 0.0)

    def quantile(q: np.ndarray) -> np.ndarray:
        return np.interp(q, q_points, v_points)

    return ValueDistribution(
        name=name,
        cdf=cdf,
        pdf=pdf,
        quantile=quantile,
        support_lo=float(v_points[0]),
        support_hi=float(v_points[-1]),
    )


def table_from_csv(path: Path) -> ValueDistribution:
    """Load a quantile table from a CSV file with header ``q,v``."""

    try:
        with path.open(newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            if reader.fieldnames is None or {"q", "v"} - set(reader.fieldnames):
                raise ConfigError(f"{path}: expected CSV header 'q,v'")
            rows = [(float(row["q"]), float(row["v"])) for row in reader]
    except OSError as exc:
        raise ConfigError(f"cannot read quantile table {path}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed quantile table row ({exc})") from exc
    LOG.debug("Loaded %d quantile rows from %s", len(rows), path)
    return quantile_table((q for q, _ in rows), (v for _, v in rows), name=f"table:{path}")


def from_callbacks(
    cdf: ArrayFunc,
    pdf: ArrayFunc,
    support_lo: float,
    support_hi: float,
    *,
    sf: ArrayFunc | None = None,
    name: str = "callbacks",
) -> ValueDistribution:
    """Admit any atomless law given vectorised ``cdf``/``pdf`` callables.

    The quantile function falls back to bisection on the CDF.
    """

    if not support_lo < support_hi:
        raise ConfigError("support_lo must be below support_hi")

    def quantile(q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        hi = support_hi
        if not math.isfinite(hi):
            hi = _upper_bracket(cdf, float(np.max(q, initial=0.0)), support_lo)
        return bisect_increasing(cdf, q, support_lo, hi)

    return ValueDistribution(
        name=name,
        cdf=cdf,
        pdf=pdf,
        quantile=quantile,
        support_lo=float(support_lo),
        support_hi=float(support_hi),
        sf=sf,
    )


def _parse_floats(text: str, count: int, spec: str) -> list[float]:
    parts = [part.strip() for part in text.split(",")] if text else []
    if len(parts) != count:
        raise ConfigError(f"distribution spec '{spec}' expects {count} parameter(s)")
    try:
        return [float(part) for part in parts]
    except ValueError as exc:
        raise ConfigError(f"distribution spec '{spec}' has a non-numeric parameter") from exc


def parse_distribution(spec: str) -> ValueDistribution:
    """Parse ``uniform:a,b``, ``exp:rate`` or ``table:path.csv``."""

    kind, _, params = spec.partition(":")
    if kind == "uniform":
        a, b = _parse_floats(params, 2, spec)
        return uniform(a, b)
    if kind == "exp":
        (rate,) = _parse_floats(params, 1, spec)
        return exponential(rate)
    if kind == "table":
        if not params:
            raise ConfigError("table distribution needs a CSV path")
        return table_from_csv(Path(params))
    raise ConfigError(f"unknown distribution spec '{spec}' (use uniform:a,b, exp:rate or table:path.csv)")


# ---------------------------------------------------------------------------
# Virtual values
# ---------------------------------------------------------------------------


def _phi_unchecked(base: ValueDistribution, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return v - base.survival(v) / np.asarray(base.pdf(v), dtype=float)


@dataclass(frozen=True)
class VirtualValueTransform:
    """Myerson's virtual value of *base* together with its reserve ``ρ``."""

    base: ValueDistribution
    reserve: float

    @classmethod
    def from_distribution(
        cls, base: ValueDistribution, *, grid_size: int = DEFAULT_REGULARITY_GRID
    ) -> "VirtualValueTransform":
        """Check regularity of *base* and solve for the reserve."""

        unreserved = cls(base=base, reserve=math.nan)
        if not check_regularity(unreserved, grid_size):
            raise IrregularDistribution(f"{base.name} has a decreasing virtual value; ironing is not supported")
        lo = base.support_lo
        if _phi_unchecked(base, np.asarray(lo)) >= 0.0:
            reserve = lo
        else:
            reserve = float(_inverse_phi(unreserved, np.asarray(0.0)))
        LOG.debug("Reserve of %s is %.12g", base.name, reserve)
        return cls(base=base, reserve=reserve)

    @property
    def phi_range(self) -> tuple[float, float]:
        base = self.base
        lo = float(_phi_unchecked(base, np.asarray(base.support_lo)))
        hi = base.support_hi if math.isfinite(base.support_hi) else float(_phi_unchecked(base, np.asarray(base.search_hi)))
        return lo, hi


def virtual_values(t: VirtualValueTransform, v: np.ndarray) -> np.ndarray:
    """Vectorised ``φ(v) = v - (1 - G(v)) / g(v)``."""

    base = t.base
    v = np.asarray(v, dtype=float)
    if np.any((v < base.support_lo) | (v > base.support_hi)):
        raise OutOfSupport(f"value outside the support [{base.support_lo}, {base.support_hi}] of {base.name}")
    density = np.asarray(base.pdf(v), dtype=float)
    if np.any(density <= DENSITY_FLOOR):
        raise ZeroDensity(f"density of {base.name} below {DENSITY_FLOOR:g}")
    return v - base.survival(v) / density


def virtual_value(t: VirtualValueTransform, v: float) -> float:
    return float(virtual_values(t, np.asarray(v, dtype=float)))


def _inverse_phi(t: VirtualValueTransform, x: np.ndarray) -> np.ndarray:
    """Clamped inverse of the virtual value for arrays (no range checks)."""

    base = t.base
    lo, hi = base.support_lo, base.search_hi
    x = np.asarray(x, dtype=float)
    phi_lo = float(_phi_unchecked(base, np.asarray(lo)))
    phi_hi = float(_phi_unchecked(base, np.asarray(hi)))
    solved = bisect_increasing(lambda v: _phi_unchecked(base, v), np.clip(x, phi_lo, phi_hi), lo, hi)
    solved = np.where(x <= phi_lo, lo, solved)
    return np.where(x >= phi_hi, hi, solved)


def inverse_virtual_value(t: VirtualValueTransform, x: float) -> float:
    """Return the value whose virtual value is *x*."""

    lo, hi = t.phi_range
    if x < lo - RANGE_TOL or x > hi + RANGE_TOL:
        raise OutOfRange(f"virtual value {x:.6g} outside [{lo:.6g}, {hi:.6g}] for {t.base.name}")
    return float(_inverse_phi(t, np.asarray(x, dtype=float)))


def check_regularity(t: VirtualValueTransform, grid_size: int) -> bool:
    """True iff the virtual value is non-decreasing on a quantile-spaced grid."""

    if grid_size < 2:
        raise ConfigError("regularity grid needs at least two points")
    base = t.base
    levels = (np.arange(grid_size) + 0.5) / grid_size
    phi = _phi_unchecked(base, base.quantile(levels))
    if not np.all(np.isfinite(phi)):
        LOG.debug("Virtual value of %s is undefined somewhere on the grid", base.name)
        return False
    drops = np.diff(phi) < -REGULARITY_SLACK * np.maximum(1.0, np.abs(phi[1:]))
    if np.any(drops):
        first = int(np.argmax(drops))
        LOG.debug("Virtual value of %s decreases near quantile %.4f", base.name, levels[first])
        return False
    return True


def induced_reward_distribution(t: VirtualValueTransform, condition_nonnegative: bool) -> RewardDistribution:
    """Law of ``φ(v)`` (``F``), or of ``φ(v)`` given ``φ(v) >= 0`` (``F̄``)."""

    base = t.base
    phi_lo, phi_hi = t.phi_range
    top = math.inf if not math.isfinite(base.support_hi) else phi_hi

    def induced_cdf(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        values = np.asarray(base.cdf(_inverse_phi(t, x)), dtype=float)
        values = np.where(x < phi_lo, 0.0, values)
        return np.where(x >= top, 1.0, values)

    if not condition_nonnegative:

        def induced_quantile(q: np.ndarray) -> np.ndarray:
            return _phi_unchecked(base, base.quantile(q))

        return RewardDistribution(
            name=f"phi[{base.name}]",
            cdf=induced_cdf,
            quantile=induced_quantile,
            support_lo=phi_lo,
            support_hi=top,
        )

    below = float(base.cdf(np.asarray(t.reserve)))
    mass = 1.0 - below
    if mass <= MASS_FLOOR:
        raise DegenerateConditioning(f"all mass of {base.name} lies below the reserve {t.reserve:.6g}")

    def conditioned_cdf(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        values = np.clip((induced_cdf(np.maximum(x, 0.0)) - below) / mass, 0.0, 1.0)
        return np.where(x <= 0.0, 0.0, values)

    def conditioned_quantile(q: np.ndarray) -> np.ndarray:
        levels = below + mass * np.asarray(q, dtype=float)
        return np.maximum(_phi_unchecked(base, base.quantile(levels)), 0.0)

    return RewardDistribution(
        name=f"phi+[{base.name}]",
        cdf=conditioned_cdf,
        quantile=conditioned_quantile,
        support_lo=0.0,
        support_hi=top,
    )


def conditional_mean(d: RewardDistribution | ValueDistribution, a: float, b: float) -> float:
    """Return ``E[V | V in [a, b)]`` by quadrature of ``F(b) - F(z)``."""

    if not a < b:
        raise EmptyInterval(f"empty interval [{a:.6g}, {b:.6g})")
    upper_mass = 1.0 if b >= d.support_hi else float(d.cdf(np.asarray(b)))
    lower_mass = 0.0 if a <= d.support_lo else float(d.cdf(np.asarray(a)))
    mass = upper_mass - lower_mass
    if mass <= MASS_FLOOR:
        raise EmptyInterval(f"interval [{a:.6g}, {b:.6g}) carries mass {mass:.3g}")
    start = max(a, d.support_lo)
    stop = min(b, d.upper_cap)
    spread = integrate(lambda z: upper_mass - float(d.cdf(np.asarray(z))), start, stop)
    return start + spread / mass
