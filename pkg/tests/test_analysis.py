#!/usr/bin/env python3
"""
Test suite for Monte Carlo experiments and efficiency accounting.
"""

import math
import sys
import unittest
from dataclasses import replace
from pathlib import Path

from hypothesis import given, settings
from hypothesis import strategies as st

# Add src directory to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from circle_qka.adversary import AttackDescriptor, AttackKind  # noqa: E402
from circle_qka.analysis import (  # noqa: E402
    CSV_COLUMNS,
    NOISE_CEILING,
    Convention,
    ExperimentPlan,
    ExperimentRunner,
    analytic_detection,
    binomial_interval,
    classify_rate,
    efficiency,
    exact_qubits,
    expected_union_size,
    hop_abort_probability,
    qber_report,
    render_qber_table,
    run_experiment,
    tolerated_errors,
)
from circle_qka.errors import RejectedInputError, UndefinedFormulaError  # noqa: E402
from circle_qka.model import ProtocolParams  # noqa: E402


def within_sigmas(rate, expected, trials, sigmas=4.0):
    spread = sigmas * math.sqrt(max(expected * (1 - expected), 0.25 / trials) / trials)
    return abs(rate - expected) <= spread


class TestClosedForms(unittest.TestCase):
    """Analytic detection probabilities and helper formulas."""

    def test_analytic_detection_values(self):
        self.assertEqual(analytic_detection(AttackKind.INTERCEPT_RESEND, 0), 0.0)
        intercept = analytic_detection(AttackKind.INTERCEPT_RESEND, 10)
        self.assertAlmostEqual(intercept, 0.9990234375)
        self.assertAlmostEqual(analytic_detection(AttackKind.MEASURE_RESEND, 4), 0.68359375)

    def test_zero_threshold_is_any_mismatch_law(self):
        laws = ((AttackKind.INTERCEPT_RESEND, 0.5), (AttackKind.MEASURE_RESEND, 0.75))
        for kind, passed in laws:
            for kn in range(13):
                for hops in (1, 2, 3):
                    self.assertAlmostEqual(
                        analytic_detection(kind, kn, 0.0, hops),
                        1 - passed ** (kn * hops),
                        msg=(kind.value, kn, hops),
                    )

    def test_default_threshold_tolerates_one_error_in_ten(self):
        """At 10 decoys and a 10% threshold a single error passes the hop."""
        value = analytic_detection(AttackKind.INTERCEPT_RESEND, 10, 0.1)
        self.assertAlmostEqual(value, 1 - 11 / 1024)
        self.assertLess(value, analytic_detection(AttackKind.INTERCEPT_RESEND, 10))
        self.assertAlmostEqual(
            analytic_detection(AttackKind.INTERCEPT_RESEND, 8, 0.1),
            analytic_detection(AttackKind.INTERCEPT_RESEND, 8),
        )

    def test_tolerated_errors(self):
        self.assertEqual(tolerated_errors(0, 0.1), 0)
        self.assertEqual(tolerated_errors(9, 0.1), 0)
        self.assertEqual(tolerated_errors(10, 0.1), 1)
        self.assertEqual(tolerated_errors(12, 0.1), 1)
        self.assertEqual(tolerated_errors(100, 0.29), 29)
        self.assertEqual(tolerated_errors(16, 1.0), 16)

    def test_hop_abort_probability_edges(self):
        self.assertEqual(hop_abort_probability(0.5, 10, 1.0), 0.0)
        self.assertEqual(hop_abort_probability(0.0, 10, 0.0), 0.0)
        self.assertEqual(hop_abort_probability(0.5, 0, 0.0), 0.0)
        self.assertAlmostEqual(hop_abort_probability(1.0, 4, 0.5), 1.0)
        with self.assertRaises(RejectedInputError):
            hop_abort_probability(0.5, -1)

    def test_analytic_detection_undefined(self):
        for kind in (AttackKind.ENTANGLE_MEASURE, AttackKind.INSIDE_COLLUSION, AttackKind.TROJAN):
            with self.assertRaises(UndefinedFormulaError):
                analytic_detection(kind, 4)

    def test_analytic_detection_negative(self):
        with self.assertRaises(RejectedInputError):
            analytic_detection(AttackKind.MEASURE_RESEND, -1)

    def test_expected_union_size(self):
        self.assertEqual(expected_union_size(10, 0), 0.0)
        self.assertAlmostEqual(expected_union_size(10, 10), 10.0)
        self.assertAlmostEqual(expected_union_size(1000, 10), 29.701)

    def test_binomial_interval(self):
        self.assertEqual(binomial_interval(0, 0, 3.0), (0.0, 1.0))
        low, high = binomial_interval(50, 100, 2.0)
        self.assertAlmostEqual(low, 0.4)
        self.assertAlmostEqual(high, 0.6)
        low, high = binomial_interval(0, 100, 2.0)
        self.assertEqual(low, 0.0)
        self.assertAlmostEqual(high, 0.1)

    def test_classify_rate(self):
        self.assertEqual(classify_rate(0.0), "noise-band")
        self.assertEqual(classify_rate(0.089), "noise-band")
        self.assertEqual(classify_rate(0.1), "in-between")
        self.assertEqual(classify_rate(0.25), "attack-range")
        self.assertEqual(classify_rate(0.5), "attack-range")


class TestEfficiency(unittest.TestCase):
    """Qubit efficiency under both counting conventions."""

    def test_per_ring_no_insertions_is_two_thirds(self):
        report = efficiency(ProtocolParams(m=1000, l=0), Convention.PAPER)
        self.assertEqual(report.c, 2000)
        self.assertEqual(report.q, 3000)
        self.assertEqual(report.b, 0)
        self.assertAlmostEqual(report.eta, 2 / 3)

    def test_per_ring_with_insertions(self):
        eta = efficiency(ProtocolParams(m=990, l=10), Convention.PAPER).eta
        self.assertGreaterEqual(eta, 0.65)
        self.assertLessEqual(eta, 2 / 3)

    def test_per_ring_grows_with_n(self):
        etas = [
            efficiency(ProtocolParams(m=n - 10, l=10), Convention.PAPER).eta
            for n in (100, 1000, 10000)
        ]
        self.assertEqual(etas, sorted(etas))
        self.assertLess(etas[-1], 2 / 3)

    def test_exact_counts_every_photon(self):
        params = ProtocolParams(m=8, l=2, decoy_count=4)
        report = efficiency(params, Convention.EXACT)
        self.assertEqual(report.q, exact_qubits(params))
        self.assertEqual(report.q, 3 * (8 + 2 * 10) + 9 * 4)
        self.assertGreater(report.b, 0)

    @given(
        m=st.integers(min_value=1, max_value=60),
        l=st.integers(min_value=0, max_value=12),
        decoys=st.integers(min_value=0, max_value=20),
    )
    @settings(max_examples=100)
    def test_exact_never_exceeds_per_ring(self, m, l, decoys):  # noqa: E741
        params = ProtocolParams(m=m, l=l, decoy_count=decoys)
        paper = efficiency(params, Convention.PAPER)
        exact = efficiency(params, Convention.EXACT)
        self.assertEqual(paper.c, exact.c)
        self.assertLessEqual(exact.eta, paper.eta)

    def test_invalid_params_rejected(self):
        with self.assertRaises(RejectedInputError):
            efficiency(ProtocolParams(m=0), Convention.PAPER)


class TestExperimentPlan(unittest.TestCase):
    """Plan validation and sweep expansion."""

    def test_points_cast_to_field_type(self):
        plan = ExperimentPlan(
            ProtocolParams(), sweep_param="decoy_count", sweep_values=(1, 2.0)
        )
        values = [params.decoy_count for _, params in plan.points()]
        self.assertEqual(values, [1, 2])
        self.assertTrue(all(isinstance(v, int) for v in values))

    def test_no_sweep_is_one_point(self):
        plan = ExperimentPlan(ProtocolParams(m=3))
        self.assertEqual(plan.points(), [(None, ProtocolParams(m=3))])

    def test_rejected_plans(self):
        base = ProtocolParams()
        bad = [
            ExperimentPlan(base, trials=0),
            ExperimentPlan(base, confidence=0.0),
            ExperimentPlan(base, sweep_param="seed", sweep_values=(1,)),
            ExperimentPlan(base, sweep_param="m"),
            ExperimentPlan(base, sweep_values=(1, 2)),
            ExperimentPlan(base, sweep_param="m", sweep_values=(0,)),
            ExperimentPlan(base, attack=AttackDescriptor(AttackKind.MEASURE_RESEND)),
        ]
        for plan in bad:
            with self.assertRaises(RejectedInputError):
                plan.validate()

    def test_runner_rejects_zero_workers(self):
        with self.assertRaises(RejectedInputError):
            ExperimentRunner(workers=0)


class TestExperiments(unittest.TestCase):
    """Monte Carlo runs against closed forms."""

    def test_honest_runs_agree(self):
        result = run_experiment(ExperimentPlan(ProtocolParams(m=4, l=1), trials=30))
        point = result.points[0]
        self.assertEqual(point.key_agreement_rate, 1.0)
        self.assertEqual(point.detection_rate, 0.0)
        self.assertEqual(point.analytic, 0.0)
        self.assertEqual(point.mean_qber, 0.0)
        self.assertIsNone(point.eve)

    def test_intercept_resend_detection(self):
        trials = 400
        attack = AttackDescriptor(AttackKind.INTERCEPT_RESEND, ("A1",))
        params = ProtocolParams(m=4, l=1, decoy_count=2, qber_threshold=0.0, seed=7)
        point = run_experiment(ExperimentPlan(params, attack, trials=trials)).points[0]
        self.assertAlmostEqual(point.analytic, 0.75)
        self.assertTrue(within_sigmas(point.detection_rate, 0.75, trials))
        self.assertLessEqual(point.ci_low, point.detection_rate)
        self.assertGreaterEqual(point.ci_high, point.detection_rate)

    def test_measure_resend_detection(self):
        trials = 400
        attack = AttackDescriptor(AttackKind.MEASURE_RESEND, ("B2",))
        params = ProtocolParams(m=4, l=1, decoy_count=4, qber_threshold=0.0, seed=8)
        point = run_experiment(ExperimentPlan(params, attack, trials=trials)).points[0]
        self.assertAlmostEqual(point.analytic, 0.68359375)
        self.assertTrue(within_sigmas(point.detection_rate, 0.68359375, trials))
        self.assertEqual(point.predicted_hop_qber, 0.25)

    def test_decoy_sweep_is_monotone_in_expectation(self):
        attack = AttackDescriptor(AttackKind.INTERCEPT_RESEND, ("C1",))
        plan = ExperimentPlan(
            ProtocolParams(m=3, l=0, qber_threshold=0.0, seed=9),
            attack,
            trials=200,
            sweep_param="decoy_count",
            sweep_values=(1, 2, 3),
        )
        result = run_experiment(plan)
        self.assertEqual([p.sweep_value for p in result.points], [1, 2, 3])
        for point in result.points:
            expected = 1 - 0.5**point.sweep_value
            self.assertAlmostEqual(point.analytic, expected)
            self.assertTrue(within_sigmas(point.detection_rate, expected, 200))

    def test_detection_laws_at_larger_decoy_counts(self):
        """Both resend laws hold at 8, 10 and 12 decoys with a zero threshold."""
        trials = 300
        for kind, seed in ((AttackKind.INTERCEPT_RESEND, 12), (AttackKind.MEASURE_RESEND, 13)):
            plan = ExperimentPlan(
                ProtocolParams(m=2, l=0, qber_threshold=0.0, seed=seed),
                AttackDescriptor(kind, ("A1",)),
                trials=trials,
                sweep_param="decoy_count",
                sweep_values=(8, 10, 12),
            )
            for point in run_experiment(plan).points:
                expected = analytic_detection(kind, point.sweep_value)
                self.assertAlmostEqual(point.analytic, expected)
                self.assertTrue(
                    within_sigmas(point.detection_rate, expected, trials),
                    msg=(kind.value, point.sweep_value, point.detection_rate),
                )

    def test_default_threshold_reference_at_ten_decoys(self):
        """The reference follows the abort threshold, not every mismatch."""
        trials = 400
        attack = AttackDescriptor(AttackKind.INTERCEPT_RESEND, ("A1",))
        params = ProtocolParams(m=8, l=2, decoy_count=10, seed=14)
        point = run_experiment(ExperimentPlan(params, attack, trials=trials)).points[0]
        self.assertAlmostEqual(point.analytic, 1 - 11 / 1024)
        self.assertTrue(within_sigmas(point.detection_rate, point.analytic, trials))
        self.assertGreaterEqual(point.detected_rate, point.detection_rate)

    def test_measure_resend_default_threshold_sweep(self):
        trials = 300
        attack = AttackDescriptor(AttackKind.MEASURE_RESEND, ("C2",))
        plan = ExperimentPlan(
            ProtocolParams(m=2, l=0, seed=15),
            attack,
            trials=trials,
            sweep_param="decoy_count",
            sweep_values=(8, 10, 12),
        )
        points = run_experiment(plan).points
        for point in points:
            expected = analytic_detection(AttackKind.MEASURE_RESEND, point.sweep_value, 0.1)
            self.assertAlmostEqual(point.analytic, expected)
            self.assertTrue(within_sigmas(point.detection_rate, expected, trials))
        # one error in 10 is tolerated, so 10 decoys catch less than 8 do
        self.assertLess(points[1].analytic, points[0].analytic)

    def test_noise_only_reference(self):
        trials = 300
        params = ProtocolParams(m=2, l=0, decoy_count=10, channel_flip_prob=0.05, seed=16)
        point = run_experiment(ExperimentPlan(params, trials=trials)).points[0]
        expected = 1 - (1 - hop_abort_probability(0.05, 10, 0.1)) ** 9
        self.assertAlmostEqual(point.analytic, expected)
        self.assertTrue(within_sigmas(point.detection_rate, expected, trials))

    def test_workers_do_not_change_result(self):
        plan = ExperimentPlan(
            ProtocolParams(m=4, l=1, decoy_count=3, seed=11),
            AttackDescriptor(AttackKind.MEASURE_RESEND, ("A1", "B3")),
            trials=24,
            sweep_param="l",
            sweep_values=(0, 1),
        )
        serial = ExperimentRunner(workers=1).run(plan)
        parallel = ExperimentRunner(workers=2).run(plan)
        self.assertEqual(serial.to_json(), parallel.to_json())
        self.assertEqual(serial.to_csv(), parallel.to_csv())

    def test_progress_callback(self):
        calls = []
        plan = ExperimentPlan(ProtocolParams(m=2, l=0), trials=4)
        ExperimentRunner().run(plan, progress=lambda done, total: calls.append((done, total)))
        self.assertEqual(calls, [(1, 4), (2, 4), (3, 4), (4, 4)])

    def test_collusion_summary(self):
        attack = AttackDescriptor(AttackKind.INSIDE_COLLUSION, colluders=("B", "A"))
        point = run_experiment(
            ExperimentPlan(ProtocolParams(m=6, l=0), attack, trials=10)
        ).points[0]
        self.assertIsNone(point.analytic)
        self.assertEqual(point.eve["positions_correct_rate"], 1.0)
        self.assertEqual(point.eve["mean_bits_correct_beyond_chance"], 0.5)


class TestReports(unittest.TestCase):
    """CSV output and the per-hop QBER report."""

    def test_csv_layout(self):
        plan = ExperimentPlan(
            ProtocolParams(m=2, l=0),
            trials=3,
            sweep_param="decoy_count",
            sweep_values=(1, 2),
        )
        lines = run_experiment(plan).to_csv().splitlines()
        self.assertEqual(lines[0], ",".join(CSV_COLUMNS))
        self.assertEqual(len(lines), 3)
        first = dict(zip(CSV_COLUMNS, lines[1].split(",")))
        self.assertEqual(first["sweep_value"], "1")
        self.assertEqual(first["trials"], "3")
        self.assertEqual(first["detection_rate"], "0")
        self.assertEqual(first["key_agreement_rate"], "1")

    def test_json_metadata(self):
        plan = ExperimentPlan(ProtocolParams(seed=42), trials=2)
        data = run_experiment(plan).to_dict()
        self.assertEqual(data["metadata"]["master_seed"], 42)
        self.assertEqual(data["metadata"]["trials"], 2)
        self.assertIsNone(data["attack"])
        self.assertEqual(len(data["points"]), 1)

    def test_noise_is_flagged_as_noise(self):
        params = ProtocolParams(m=4, l=1, channel_flip_prob=0.05, qber_threshold=1.0, seed=1)
        result = run_experiment(ExperimentPlan(params, trials=100))
        flags = qber_report(result)
        self.assertEqual(len(flags), 9)
        self.assertTrue(all(flag.flag == "noise-band" for flag in flags))
        self.assertLess(abs(result.points[0].mean_qber - 0.05), 0.02)

    def test_noiseless_is_noise_band(self):
        result = run_experiment(ExperimentPlan(ProtocolParams(m=2, l=0), trials=5))
        flags = qber_report(result)
        self.assertTrue(all(flag.mean == 0.0 for flag in flags))
        self.assertTrue(all(flag.flag == "noise-band" for flag in flags))

    def test_measure_resend_is_flagged_as_attack(self):
        params = ProtocolParams(m=4, l=1, qber_threshold=1.0, seed=2)
        attack = AttackDescriptor(AttackKind.MEASURE_RESEND, ("A1",))
        result = run_experiment(ExperimentPlan(params, attack, trials=100))
        flags = {flag.hop: flag for flag in qber_report(result)}
        self.assertTrue(within_sigmas(flags["A1"].mean, 0.25, 1600))
        self.assertNotEqual(flags["A1"].flag, "noise-band")
        self.assertEqual(flags["B1"].flag, "noise-band")

    def test_small_sample_attack_is_not_called_noise(self):
        """A wide interval reaching into the noise band does not change the flag."""
        params = ProtocolParams(decoy_count=16, qber_threshold=1.0, seed=1)
        attack = AttackDescriptor(AttackKind.MEASURE_RESEND, ("A1",))
        result = run_experiment(ExperimentPlan(params, attack, trials=2))
        point = result.points[0]
        self.assertEqual(point.hop_checked["A1"], 32)
        hop_qber = dict(point.hop_qber, A1=8 / 32)
        result.points[0] = replace(point, hop_qber=hop_qber)
        flags = {flag.hop: flag for flag in qber_report(result)}
        self.assertEqual(flags["A1"].mean, 0.25)
        self.assertLess(flags["A1"].ci_low, NOISE_CEILING)
        self.assertEqual(flags["A1"].flag, "attack-range")

    def test_intercept_resend_small_sample_is_attack_range(self):
        params = ProtocolParams(decoy_count=64, qber_threshold=1.0, seed=3)
        attack = AttackDescriptor(AttackKind.INTERCEPT_RESEND, ("C3",))
        result = run_experiment(ExperimentPlan(params, attack, trials=2))
        flags = {flag.hop: flag for flag in qber_report(result)}
        # 128 decoys at 0.5; 0.25 is over five sigma away
        self.assertEqual(flags["C3"].flag, "attack-range")

    def test_render_table(self):
        result = run_experiment(ExperimentPlan(ProtocolParams(m=2, l=0), trials=2))
        table = render_qber_table(qber_report(result)).splitlines()
        self.assertIn("flag", table[0])
        self.assertIn("ci_low", table[0])
        self.assertEqual(len(table), 10)
        self.assertTrue(table[1].strip().startswith("-"))


if __name__ == "__main__":
    unittest.main(verbosity=2)
