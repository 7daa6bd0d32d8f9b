import contextlib
import io
import json
import logging
import math
import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import kdpa
from errors import ConfigError, NoBracket
from verification import PropertyResult

SCHEMA = json.loads(
    (Path(__file__).resolve().parents[1] / "schemas" / "run_report.schema.json").read_text(encoding="utf-8")
)


def _required(section: str) -> set[str]:
    return set(SCHEMA["$defs"][section]["required"])


def _run(argv: list[str]) -> tuple[int, str]:
    buffer = io.StringIO()
    with mock.patch("kdpa.setup_logging"), contextlib.redirect_stdout(buffer):
        code = kdpa.main(argv)
    return code, buffer.getvalue()


class ConfigTests(unittest.TestCase):
    def test_defaults_are_valid(self) -> None:
        config = kdpa.ExperimentConfig()
        self.assertEqual(_required("inputs"), set(config.inputs()))

    def test_invalid_settings_are_rejected(self) -> None:
        for overrides in ({"n": 0}, {"m": 4, "n": 3}, {"objective": "profit"}, {"epsilon": math.nan}, {"trials": 0}):
            with self.subTest(overrides=overrides):
                with self.assertRaises(ConfigError):
                    kdpa.ExperimentConfig(**overrides)

    def test_bad_price_lists(self) -> None:
        self.assertEqual((0.6, 0.5), kdpa._parse_prices("0.6, 0.5"))
        with self.assertRaises(ConfigError):
            kdpa._parse_prices("0.6,high")


class ThresholdsCommandTests(unittest.TestCase):
    def test_welfare_thresholds(self) -> None:
        code, output = _run(["thresholds", "--objective", "welfare", "--n", "10", "--k", "5"])
        self.assertEqual(0, code)
        report = json.loads(output)
        self.assertTrue(_required("thresholds") <= set(report))
        for j, tau in enumerate(report["thresholds"], start=1):
            self.assertAlmostEqual(math.exp(-j / 10.0), tau, places=12)
        self.assertAlmostEqual(0.606531, report["prices"][-1], places=6)
        self.assertIsNone(report["reserve"])

    def test_revenue_reports_reserve(self) -> None:
        code, output = _run(["thresholds", "--dist", "exp:1", "--n", "5", "--k", "3"])
        self.assertEqual(0, code)
        report = json.loads(output)
        self.assertAlmostEqual(1.0, report["reserve"], places=6)
        self.assertTrue(all(tau > 1.0 for tau in report["thresholds"]))

    def test_prophet_thresholds_have_no_prices(self) -> None:
        _, output = _run(["thresholds", "--objective", "prophet", "--n", "10", "--m", "2", "--k", "3"])
        report = json.loads(output)
        self.assertIsNone(report["prices"])
        for got, want in zip(report["thresholds"], (0.8, 0.64, 0.512)):
            self.assertAlmostEqual(want, got, places=12)


class PricesCommandTests(unittest.TestCase):
    def test_hand_solved_schedule(self) -> None:
        code, output = _run(["prices", "--prices", f"{7.0 / 12.0!r},0.5", "--n", "2", "--k", "2"])
        self.assertEqual(0, code)
        report = json.loads(output)
        self.assertTrue(_required("prices") <= set(report))
        self.assertAlmostEqual(0.8, report["thresholds"][0], places=8)
        self.assertEqual(0.5, report["thresholds"][1])
        self.assertTrue(report["audit"]["passed"])


class SimulateCommandTests(unittest.TestCase):
    def test_prophet_campaign(self) -> None:
        code, output = _run(["simulate", "--objective", "prophet", "--trials", "40000", "--seed", "3"])
        self.assertEqual(0, code)
        report = json.loads(output)
        self.assertTrue(_required("simulate") <= set(report))
        estimate = report["estimates"]["reward"]
        self.assertLessEqual(abs(estimate["mean"] - report["exact"]), 4.0 * estimate["std_error"])
        self.assertAlmostEqual(10.0 / 11.0, report["benchmark"], places=8)
        self.assertTrue(report["passed"])

    def test_output_does_not_depend_on_threads(self) -> None:
        argv = ["simulate", "--objective", "welfare", "--trials", "70000", "--seed", "5"]
        _, serial = _run(argv + ["--threads", "1"])
        _, pooled = _run(argv + ["--threads", "2"])
        self.assertEqual(serial, pooled)


class DpCommandTests(unittest.TestCase):
    def test_welfare_dp(self) -> None:
        code, output = _run(["dp", "--objective", "welfare", "--n", "10", "--k", "3", "--grid", "300"])
        self.assertEqual(0, code)
        report = json.loads(output)
        self.assertTrue(_required("dp") <= set(report))
        self.assertGreaterEqual(report["value"] + report["grid_error"], report["balanced_value"])
        self.assertNotIn("value_thresholds", report)

    def test_multi_unit_dp_is_rejected(self) -> None:
        with self.assertLogs("kdpa.cli", level="ERROR"):
            code, _ = _run(["dp", "--m", "2"])
        self.assertEqual(2, code)


class TrajectoryCommandTests(unittest.TestCase):
    def test_csv_rows_are_deterministic(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            first = Path(tmp) / "first.csv"
            second = Path(tmp) / "nested" / "second.csv"
            self.assertEqual(0, _run(["trajectory", "--out", str(first)])[0])
            self.assertEqual(0, _run(["trajectory", "--out", str(second)])[0])
            text = first.read_text(encoding="utf-8")
            self.assertEqual(text, second.read_text(encoding="utf-8"))
        lines = text.splitlines()
        self.assertEqual("objective,round,price,threshold", lines[0])
        self.assertEqual(11, len(lines))
        objective, index, price, _ = lines[5].split(",")
        self.assertEqual(("welfare", "5"), (objective, index))
        self.assertAlmostEqual(0.606531, float(price), places=6)
        self.assertTrue(lines[6].startswith("revenue,1,"))


class ErrorHandlingTests(unittest.TestCase):
    def test_bad_distribution_is_a_config_error(self) -> None:
        with self.assertLogs("kdpa.cli", level="ERROR") as logs:
            code, output = _run(["thresholds", "--dist", "normal:0,1"])
        self.assertEqual(2, code)
        self.assertEqual("", output)
        self.assertIn("normal", logs.output[0])

    def test_more_units_than_buyers(self) -> None:
        with self.assertLogs("kdpa.cli", level="ERROR"):
            code, _ = _run(["thresholds", "--n", "2", "--m", "3"])
        self.assertEqual(2, code)

    def test_numeric_failures_exit_with_three(self) -> None:
        failing = mock.Mock(side_effect=NoBracket("no sign change"))
        with mock.patch.dict(kdpa.COMMAND_EXECUTORS, {"prices": failing}):
            with self.assertLogs("kdpa.cli", level="ERROR"):
                code, _ = _run(["prices", "--prices", "0.7,0.4"])
        self.assertEqual(3, code)
        failing.assert_called_once()


class VerifyCommandTests(unittest.TestCase):
    def test_failed_required_property_exits_with_one(self) -> None:
        results = [PropertyResult("identities", True, 0.1), PropertyResult("ratio", False, -0.2)]
        with mock.patch("kdpa.run_suite", return_value=results) as run_suite:
            with self.assertLogs("kdpa.cli", level="ERROR"):
                code, output = _run(["verify", "full", "--seed", "4"])
        self.assertEqual(1, code)
        run_suite.assert_called_once_with("full", seed=4, threads=1)
        self.assertIn("FAILED", output)

    def test_informational_failures_do_not_fail_the_run(self) -> None:
        results = [PropertyResult("identities", True, 0.1), PropertyResult("floor", False, -0.2, required=False)]
        with mock.patch("kdpa.run_suite", return_value=results):
            code, output = _run(["verify"])
        self.assertEqual(0, code)
        self.assertTrue(output.rstrip().endswith("OK"))


class LoggingTests(unittest.TestCase):
    def setUp(self) -> None:
        self.addCleanup(logging.getLogger("kdpa").handlers.clear)
        self.addCleanup(logging.getLogger("kdpa").setLevel, logging.NOTSET)

    def test_level_from_environment(self) -> None:
        with mock.patch.dict(os.environ, {"KDPA_LOG": "debug"}):
            kdpa.setup_logging()
        logger = logging.getLogger("kdpa")
        self.assertEqual(logging.DEBUG, logger.level)
        self.assertEqual(1, len(logger.handlers))

    def test_unknown_level_falls_back_to_warning(self) -> None:
        with mock.patch.dict(os.environ, {"KDPA_LOG": "chatty"}):
            with self.assertLogs("kdpa.cli", level="WARNING") as logs:
                kdpa.setup_logging()
        self.assertEqual(logging.WARNING, logging.getLogger("kdpa").level)
        self.assertIn("CHATTY", logs.output[0])


if __name__ == "__main__":  # pragma: no cover
    unittest.main()
