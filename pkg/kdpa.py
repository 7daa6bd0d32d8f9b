#!/usr/bin/env python3
"""Experiment runner for k-level descending price auctions.

Each experiment is exposed as a sub-command:

* ``thresholds`` – balanced thresholds and the price schedule that supports
  them (``reserve`` is reported for the revenue objective).
* ``prices`` – equilibrium thresholds of an announced price schedule, with a
  best-response audit.
* ``simulate`` – Monte Carlo campaign against the exact benchmark, with the
  ratio, the guarantee and a pass flag.
* ``dp`` – optimal single-item thresholds from the Bellman recursion.
* ``trajectory`` – CSV of prices and thresholds per round for the welfare and
  revenue schedules.
* ``verify`` – the ``fast`` or ``full`` property suite.

JSON and CSV payloads go to stdout (or ``--out``).  Log records go to stderr
at the level named by ``KDPA_LOG`` (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from auction import (
    AuctionInstance,
    expected_outcome_mc,
    max_welfare,
    myerson_opt_revenue,
    revenue_prices,
    welfare_prices,
)
from dist import (
    RewardDistribution,
    ValueDistribution,
    VirtualValueTransform,
    induced_reward_distribution,
    inverse_virtual_value,
    parse_distribution,
)
from equilibrium import EquilibriumProfile, PriceSchedule, best_response_audit, prices_to_thresholds
from errors import ConfigError, DomainError, NumericError
from montecarlo import Estimate
from prophet import (
    ProphetInstance,
    ThresholdPolicy,
    balanced_thresholds_multi,
    balanced_thresholds_single,
    dp_solve,
    exact_alg_multi,
    exact_alg_single,
    expected_reward_mc,
    guarantee_multi,
    guarantee_single,
    opt_offline,
)
from verification import SUITES, format_report, run_suite, suite_passed

LOG = logging.getLogger("kdpa.cli")

OBJECTIVES = ("revenue", "welfare", "prophet")
LOG_LEVELS = {"DEBUG": logging.DEBUG, "INFO": logging.INFO, "WARNING": logging.WARNING, "ERROR": logging.ERROR}
AUDIT_GRID = 1000
SIGMAS = 3.0

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings shared by every sub-command."""

    dist_spec: str = "uniform:0,1"
    n: int = 10
    m: int = 1
    k: int = 5
    objective: str = "revenue"
    trials: int = 100_000
    seed: int = 7
    epsilon: float = 0.05
    grid: int = 2000
    threads: int = 1
    out: Path | None = None
    prices: tuple[float, ...] | None = None
    suite: str = "fast"

    def __post_init__(self) -> None:
        for name in ("n", "m", "k", "trials", "grid", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"--{name} must be a positive integer (got {getattr(self, name)})")
        if self.m > self.n:
            raise ConfigError(f"--m cannot exceed --n (got m={self.m}, n={self.n})")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective '{self.objective}' (choose from {', '.join(OBJECTIVES)})")
        if not math.isfinite(self.epsilon) or self.epsilon < 0.0:
            raise ConfigError(f"--epsilon must be a non-negative number (got {self.epsilon})")
        if self.suite not in SUITES:
            raise ConfigError(f"unknown suite '{self.suite}' (choose from {', '.join(SUITES)})")

    def distribution(self) -> ValueDistribution:
        return parse_distribution(self.dist_spec)

    def inputs(self) -> dict[str, Any]:
        """Echo of the settings that determine the output (``threads`` and ``out`` do not)."""

        return {
            "dist": self.dist_spec,
            "n": self.n,
            "m": self.m,
            "k": self.k,
            "objective": self.objective,
            "trials": self.trials,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "grid": self.grid,
        }


def setup_logging() -> None:
    logger = logging.getLogger("kdpa")
    requested = os.environ.get("KDPA_LOG", "WARNING").strip().upper()
    level = LOG_LEVELS.get(requested)
    logger.setLevel(level if level is not None else logging.WARNING)
    logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(logging.Formatter("%(asctime)s [%(levelname)s] %(message)s"))
    logger.addHandler(console_handler)

    if level is None:
        LOG.warning("Unknown KDPA_LOG level '%s'; using WARNING", requested)


def _parse_prices(text: str | None) -> tuple[float, ...] | None:
    if text is None:
        return None
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"--prices must be a comma-separated list of numbers (got '{text}')") from exc


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig(
        dist_spec=args.dist,
        n=args.n,
        m=args.m,
        k=args.k,
        objective=args.objective,
        trials=args.trials,
        seed=args.seed,
        epsilon=args.epsilon,
        grid=args.grid,
        threads=args.threads,
        out=Path(args.out) if args.out else None,
        prices=_parse_prices(getattr(args, "prices", None)),
        suite=getattr(args, "suite", "fast"),
    )
    config.distribution()
    return config


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _emit(config: ExperimentConfig, text: str) -> None:
    if config.out is not None:
        config.out.parent.mkdir(parents=True, exist_ok=True)
        config.out.write_text(text, encoding="utf-8")
        LOG.info("Wrote %s", config.out)
    else:
        sys.stdout.write(text)


def _emit_json(config: ExperimentConfig, report: dict[str, Any]) -> None:
    _emit(config, json.dumps(report, sort_keys=True, indent=2) + "\n")


def _floats(values: Any) -> list[float]:
    return [float(v) for v in values]


def _estimate(estimate: Estimate) -> dict[str, float | int]:
    return estimate.as_dict()


def _schedule(G: ValueDistribution, config: ExperimentConfig) -> EquilibriumProfile:
    if config.objective == "revenue":
        return revenue_prices(G, config.n, config.k, config.m)
    return welfare_prices(G, config.n, config.k, config.m)


def _prophet_policy(reward: RewardDistribution, config: ExperimentConfig) -> ThresholdPolicy:
    if config.m == 1:
        return balanced_thresholds_single(reward, config.n, config.k)
    return balanced_thresholds_multi(reward, config.n, config.m, config.k)


def _guarantee(config: ExperimentConfig) -> float:
    return guarantee_single(config.k) if config.m == 1 else guarantee_multi(config.k, config.m)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def thresholds_report(config: ExperimentConfig) -> dict[str, Any]:
    G = config.distribution()
    report: dict[str, Any] = {"command": "thresholds", "inputs": config.inputs(), "reserve": None}
    if config.objective == "prophet":
        policy = _prophet_policy(RewardDistribution.from_values(G), config)
        report.update(thresholds=_floats(policy.thresholds), prices=None)
        return report
    profile = _schedule(G, config)
    report.update(thresholds=_floats(profile.thresholds), prices=_floats(profile.prices.prices))
    if config.objective == "revenue":
        report["reserve"] = VirtualValueTransform.from_distribution(G).reserve
    return report


def prices_report(config: ExperimentConfig) -> dict[str, Any]:
    if not config.prices:
        raise ConfigError("the prices command needs --prices p1,p2,...")
    G = config.distribution()
    schedule = PriceSchedule(config.prices, n=config.n, m=config.m)
    profile = prices_to_thresholds(G, config.n, schedule)
    audit = best_response_audit(G, config.n, config.m, profile, AUDIT_GRID)
    return {
        "command": "prices",
        "inputs": config.inputs(),
        "prices": _floats(schedule.prices),
        "thresholds": _floats(profile.thresholds),
        "quantiles": _floats(profile.quantiles),
        "audit": {
            "max_gain": audit.max_gain,
            "worst_value": audit.worst_value,
            "interior_gaps": _floats(audit.interior_gaps),
            "passed": audit.passed,
        },
    }


def simulate_report(config: ExperimentConfig) -> dict[str, Any]:
    G = config.distribution()
    report: dict[str, Any] = {"command": "simulate", "inputs": config.inputs()}
    if config.objective == "prophet":
        reward = RewardDistribution.from_values(G)
        policy = _prophet_policy(reward, config)
        inst = ProphetInstance(reward, config.n, config.m)
        primary = expected_reward_mc(inst, policy, config.trials, config.seed, threads=config.threads)
        benchmark = opt_offline(reward, config.n, config.m)
        if config.m == 1:
            exact = exact_alg_single(reward, config.n, policy)
        else:
            exact = exact_alg_multi(reward, config.n, config.m, policy)
        report.update(thresholds=_floats(policy.thresholds), prices=None, exact=exact)
        report["estimates"] = {"reward": _estimate(primary)}
    else:
        profile = _schedule(G, config)
        inst = AuctionInstance(G, config.n, config.m, config.k)
        outcome = expected_outcome_mc(inst, profile, config.trials, config.seed, threads=config.threads)
        if config.objective == "revenue":
            primary = outcome.revenue
            benchmark = myerson_opt_revenue(G, config.n, config.m)
        else:
            primary = outcome.welfare
            benchmark = max_welfare(G, config.n, config.m)
        report.update(thresholds=_floats(profile.thresholds), prices=_floats(profile.prices.prices))
        report["estimates"] = {
            "revenue": _estimate(outcome.revenue),
            "welfare": _estimate(outcome.welfare),
            "virtual_surplus": _estimate(outcome.virtual_surplus),
            "revenue_minus_virtual": _estimate(outcome.revenue_minus_virtual),
        }
    guarantee = _guarantee(config)
    ratio = primary.mean / benchmark
    ratio_error = primary.std_error / benchmark
    report.update(
        benchmark=benchmark,
        ratio=ratio,
        ratio_std_error=ratio_error,
        guarantee=guarantee,
        passed=bool(ratio >= guarantee / (1.0 + config.epsilon) - SIGMAS * ratio_error),
    )
    return report


def dp_report(config: ExperimentConfig) -> dict[str, Any]:
    G = config.distribution()
    transform = None
    if config.objective == "revenue":
        transform = VirtualValueTransform.from_distribution(G)
        reward = induced_reward_distribution(transform, True)
    else:
        reward = RewardDistribution.from_values(G)
    solution = dp_solve(reward, config.n, config.k, config.grid, config.m)
    balanced = exact_alg_single(reward, config.n, balanced_thresholds_single(reward, config.n, config.k))
    benchmark = opt_offline(reward, config.n)
    report: dict[str, Any] = {
        "command": "dp",
        "inputs": config.inputs(),
        "value": solution.value,
        "thresholds": _floats(solution.thresholds.thresholds),
        "grid_error": solution.grid_error,
        "layer_values": _floats(solution.layer_values),
        "balanced_value": balanced,
        "benchmark": benchmark,
        "ratio": solution.value / benchmark,
    }
    if transform is not None:
        report["value_thresholds"] = [inverse_virtual_value(transform, t) for t in solution.thresholds.thresholds]
    return report


def trajectory_rows(config: ExperimentConfig) -> list[tuple[str, int, float, float]]:
    """``(objective, round, price, threshold)`` for the welfare then the revenue schedule."""

    G = config.distribution()
    rows = []
    for objective, profile in (
        ("welfare", welfare_prices(G, config.n, config.k, config.m)),
        ("revenue", revenue_prices(G, config.n, config.k, config.m)),
    ):
        for index, (price, tau) in enumerate(zip(profile.prices.prices, profile.thresholds), start=1):
            rows.append((objective, index, price, tau))
    return rows


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_thresholds(config: ExperimentConfig) -> int:
    _emit_json(config, thresholds_report(config))
    return EXIT_OK


def cmd_prices(config: ExperimentConfig) -> int:
    _emit_json(config, prices_report(config))
    return EXIT_OK


def cmd_simulate(config: ExperimentConfig) -> int:
    report = simulate_report(config)
    LOG.info("Ratio %.6f against guarantee %.6f", report["ratio"], report["guarantee"])
    _emit_json(config, report)
    return EXIT_OK


def cmd_dp(config: ExperimentConfig) -> int:
    _emit_json(config, dp_report(config))
    return EXIT_OK


def cmd_trajectory(config: ExperimentConfig) -> int:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(("objective", "round", "price", "threshold"))
    for objective, index, price, tau in trajectory_rows(config):
        writer.writerow((objective, index, repr(float(price)), repr(float(tau))))
    _emit(config, buffer.getvalue())
    return EXIT_OK


def cmd_verify(config: ExperimentConfig) -> int:
    results = run_suite(config.suite, seed=config.seed, threads=config.threads)
    _emit(config, format_report(results))
    if not suite_passed(results):
        failed = [result.name for result in results if result.required and not result.passed]
        LOG.error("Verification failed: %s", ", ".join(failed))
        return EXIT_VERIFY_FAILED
    return EXIT_OK


COMMAND_EXECUTORS: dict[str, Callable[[ExperimentConfig], int]] = {
    "thresholds": cmd_thresholds,
    "prices": cmd_prices,
    "simulate": cmd_simulate,
    "dp": cmd_dp,
    "trajectory": cmd_trajectory,
    "verify": cmd_verify,
}


COMMAND_DESCRIPTIONS: dict[str, str] = {
    "thresholds": "Balanced thresholds and their supporting prices",
    "prices": "Equilibrium thresholds of an announced price schedule",
    "simulate": "Monte Carlo campaign against the exact benchmark",
    "dp": "Optimal single-item thresholds from the Bellman recursion",
    "trajectory": "CSV of prices and thresholds per round",
    "verify": "Run a property suite",
}


def _common_options() -> argparse.ArgumentParser:
    defaults = ExperimentConfig()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dist", default=defaults.dist_spec, help="uniform:a,b, exp:rate or table:path.csv")
    common.add_argument("--n", type=int, default=defaults.n, help="Number of buyers or rewards.")
    common.add_argument("--m", type=int, default=defaults.m, help="Number of units (capacity).")
    common.add_argument("--k", type=int, default=defaults.k, help="Number of price levels (rounds).")
    common.add_argument("--objective", choices=OBJECTIVES, default=defaults.objective)
    common.add_argument("--trials", type=int, default=defaults.trials, help="Monte Carlo trials.")
    common.add_argument("--seed", type=int, default=defaults.seed, help="Seed of every random stream.")
    common.add_argument("--epsilon", type=float, default=defaults.epsilon, help="Deflation of the guarantee.")
    common.add_argument("--grid", type=int, default=defaults.grid, help="Quantile cells of the Bellman grid.")
    common.add_argument("--threads", type=int, default=defaults.threads, help="Monte Carlo worker threads.")
    common.add_argument("--out", default=None, help="Write the payload to this file instead of stdout.")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Experiments on k-level descending price auctions")
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = _common_options()
    for command, description in COMMAND_DESCRIPTIONS.items():
        sub = subparsers.add_parser(command, help=description, parents=[common])
        sub.set_defaults(func=COMMAND_EXECUTORS[command])
        if command == "prices":
            sub.add_argument("--prices", required=True, help="Comma-separated prices p1 > ... > pk.")
        elif command == "verify":
            sub.add_argument("suite", nargs="?", choices=tuple(SUITES), default="fast")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        config = config_from_args(args)
        return args.func(config)
    except (ConfigError, DomainError) as exc:
        LOG.error("%s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        LOG.error("%s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
