#!/usr/bin/env python3
"""
Test suite for the attack models.
"""

import math
import sys
import unittest
from pathlib import Path

import numpy as np

# Add src directory to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from circle_qka import qcore  # noqa: E402
from circle_qka.adversary import (  # noqa: E402
    TROJAN_BLOCKED,
    TROJAN_UNDETECTED,
    AttackDescriptor,
    AttackKind,
    CollusionStrategy,
    EveRecord,
    ancilla_overlap,
    collusion_ring,
    entangle_measure,
    estimate_decoy_error,
    freeze_matrix,
    guess_single_positions,
    intercept_resend,
    measure_resend,
    predicted_decoy_error,
    trojan,
)
from circle_qka.errors import RejectedInputError  # noqa: E402
from circle_qka.model import (  # noqa: E402
    HOPS,
    DecoyRecord,
    ProtocolParams,
    Slot,
    SlotKind,
    TravelSequence,
    TrojanCountermeasures,
)
from circle_qka.photons import PhotonStore  # noqa: E402
from circle_qka.protocol import check_decoys, insert_decoys, run_protocol  # noqa: E402
from circle_qka.qcore import BasisKind  # noqa: E402


def decoy_error(attack, count, seed):
    """Error rate of ``count`` decoys passed through ``attack`` on one hop."""
    store = PhotonStore()
    rng = np.random.default_rng(seed)
    seq = TravelSequence("A")
    record = insert_decoys(seq, count, rng, store)
    eve = attack(store, seq, rng)
    return check_decoys(seq, record, rng, store), eve


class TestAttackDescriptor(unittest.TestCase):
    """Test descriptor validation and serialization."""

    def test_outside_attack_needs_hops(self):
        with self.assertRaises(RejectedInputError):
            AttackDescriptor(AttackKind.INTERCEPT_RESEND).validate()

    def test_unknown_hop(self):
        with self.assertRaises(RejectedInputError):
            AttackDescriptor(AttackKind.MEASURE_RESEND, ("D1",)).validate()

    def test_unitary_only_for_entangle_measure(self):
        matrix = freeze_matrix(qcore.CNOT)
        with self.assertRaises(RejectedInputError):
            AttackDescriptor(AttackKind.MEASURE_RESEND, ("A1",), eve_unitary=matrix).validate()
        with self.assertRaises(RejectedInputError):
            AttackDescriptor(AttackKind.ENTANGLE_MEASURE, ("A1",)).validate()

    def test_non_unitary_rejected(self):
        matrix = freeze_matrix(np.ones((4, 4)))
        with self.assertRaises(RejectedInputError):
            AttackDescriptor(AttackKind.ENTANGLE_MEASURE, ("A1",), eve_unitary=matrix).validate()

    def test_colluders_must_be_distinct(self):
        with self.assertRaises(RejectedInputError):
            AttackDescriptor(AttackKind.INSIDE_COLLUSION, colluders=("A", "A")).validate()

    def test_resend_distribution_checked(self):
        with self.assertRaises(RejectedInputError):
            AttackDescriptor(
                AttackKind.INTERCEPT_RESEND, ("A1",), resend_distribution=(0.5, 0.5, 0.5, 0)
            ).validate()

    def test_dict_round_trip(self):
        rng = np.random.default_rng(1)
        descriptor = AttackDescriptor(
            AttackKind.ENTANGLE_MEASURE,
            ("A1", "C3"),
            eve_unitary=freeze_matrix(qcore.random_unitary(rng)),
        )
        self.assertEqual(AttackDescriptor.from_dict(descriptor.to_dict()), descriptor)


class TestResendAttacks(unittest.TestCase):
    """Per-decoy disturbance of the resend attacks."""

    def test_intercept_resend_halves_pass_rate(self):
        """Uniform resends fail half of the decoys."""
        rate, eve = decoy_error(
            lambda store, seq, rng: intercept_resend(
                store, seq, rng, EveRecord(AttackKind.INTERCEPT_RESEND)
            ),
            10000,
            seed=21,
        )
        self.assertLess(abs(rate - 0.5), 0.02)
        self.assertEqual(len(eve.captured), 10000)

    def test_intercept_resend_matching_state(self):
        """Resending |0> always passes a |0> decoy; |+> passes half the time."""
        store = PhotonStore()
        rng = np.random.default_rng(2)
        passes = {"0": 0, "+": 0}
        record = DecoyRecord((0,), ("0",), (BasisKind.Z,))
        for dist, label in (((1, 0, 0, 0), "0"), ((0, 0, 1, 0), "+")):
            for _ in range(2000):
                seq = TravelSequence("A", [Slot(SlotKind.DECOY, store.create("0"), decoy_id=0)])
                intercept_resend(store, seq, rng, EveRecord(AttackKind.INTERCEPT_RESEND), dist)
                passes[label] += check_decoys(seq, record, rng, store) == 0.0
        self.assertEqual(passes["0"], 2000)
        self.assertLess(abs(passes["+"] / 2000 - 0.5), 0.05)

    def test_intercept_resend_keeps_original_ids(self):
        """The withheld photons are recorded by id and stay live in the store."""
        store = PhotonStore()
        rng = np.random.default_rng(5)
        seq = TravelSequence("A")
        insert_decoys(seq, 6, rng, store)
        originals = [slot.photon for slot in seq.slots]
        eve = intercept_resend(store, seq, rng, EveRecord(AttackKind.INTERCEPT_RESEND))
        self.assertEqual(eve.captured, originals)
        self.assertTrue(set(originals).isdisjoint(slot.photon for slot in seq.slots))
        for photon in originals:
            self.assertEqual(store.group_size(photon), 1)

    def test_measure_resend_quarter_error(self):
        rate, eve = decoy_error(
            lambda store, seq, rng: measure_resend(
                store, seq, rng, EveRecord(AttackKind.MEASURE_RESEND)
            ),
            10000,
            seed=22,
        )
        self.assertLess(abs(rate - 0.25), 0.02)
        self.assertEqual(len(eve.outcomes), 10000)
        self.assertTrue(all(o[0] in "ZX" and o[1] in "01" for o in eve.outcomes))


class TestEntangleMeasure(unittest.TestCase):
    """Closed form against Monte Carlo for photon-ancilla unitaries."""

    def test_identity(self):
        self.assertAlmostEqual(predicted_decoy_error(qcore.IDENTITY4), 0.0)
        self.assertAlmostEqual(ancilla_overlap(qcore.IDENTITY4), 1.0)
        rate, eve = decoy_error(
            lambda store, seq, rng: entangle_measure(
                store, seq, qcore.IDENTITY4, rng, EveRecord(AttackKind.ENTANGLE_MEASURE)
            ),
            500,
            seed=3,
        )
        self.assertEqual(rate, 0.0)
        self.assertEqual(len(eve.ancillas), 500)

    def test_cnot(self):
        """CNOT passes Z decoys and fails X decoys half the time."""
        self.assertAlmostEqual(predicted_decoy_error(qcore.CNOT), 0.25)
        self.assertAlmostEqual(ancilla_overlap(qcore.CNOT), 0.0)
        estimate = estimate_decoy_error(qcore.CNOT, 8000, np.random.default_rng(4))
        self.assertLess(abs(estimate - 0.25), 0.02)

    def test_random_unitaries_match_closed_form(self):
        rng = np.random.default_rng(100)
        for _ in range(8):
            matrix = qcore.random_unitary(rng)
            predicted = predicted_decoy_error(matrix)
            estimate = estimate_decoy_error(matrix, 6000, rng)
            # 4 sigma at the worst case p = 0.5 is about 0.026
            self.assertLess(abs(estimate - predicted), 0.027)

    def test_zero_disturbance_means_zero_information(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            matrix = qcore.zero_disturbance_unitary(rng)
            self.assertLess(predicted_decoy_error(matrix), 1e-9)
            self.assertGreater(ancilla_overlap(matrix), 1 - 1e-9)

    def test_ancillas_are_evicted_to_stay_small(self):
        """An attack on every hop keeps all groups at four qubits or fewer."""
        attack = AttackDescriptor(
            AttackKind.ENTANGLE_MEASURE, HOPS, eve_unitary=freeze_matrix(qcore.CNOT)
        )
        record = run_protocol(ProtocolParams(m=3, l=1, decoy_count=2, qber_threshold=1.0), attack)
        self.assertIsNotNone(record.check_passed)
        self.assertGreater(len(record.eve.evicted_ancillas), 0)
        self.assertEqual(record.eve.hops, list(HOPS))


class TestCollusion(unittest.TestCase):
    """Inside attack by the preparer and the second encoder."""

    def test_collusion_ring(self):
        self.assertEqual(collusion_ring(("A", "C")), "A")
        self.assertEqual(collusion_ring(("B", "A")), "B")
        self.assertEqual(collusion_ring(("C", "B")), "C")
        with self.assertRaises(RejectedInputError):
            collusion_ring(("A", "D"))

    def test_random_pairing_hits_one_in_45(self):
        """Guessing 2 of 10 insertion positions succeeds with probability 1/45."""
        rng = np.random.default_rng(2023)
        truth = (3, 7)
        trials = 20000
        hits = sum(
            guess_single_positions(CollusionStrategy.RANDOM_PAIRING, 10, 2, rng) == truth
            for _ in range(trials)
        )
        self.assertLess(abs(hits / trials - 1 / math.comb(10, 2)), 0.005)

    def test_naive_align_without_insertions_recovers_key(self):
        """With l = 0 the colluders pair correctly and learn the honest key."""
        attack = AttackDescriptor(AttackKind.INSIDE_COLLUSION, colluders=("A", "C"))
        for seed in range(5):
            record = run_protocol(ProtocolParams(m=8, l=0, seed=seed), attack)
            self.assertEqual(record.eve.guess, record.subkeys["B"])
            self.assertTrue(record.eve.positions_correct)
            self.assertEqual(record.eve.bits_correct_beyond_chance, 0.5)
            self.assertEqual(record.eve.hops, ["A2"])
            self.assertTrue(record.keys_agree)
            self.assertFalse(record.eve.caught_by_key_check)

    def test_naive_align_with_insertions_is_caught(self):
        """Misaligned Bell measurements scramble the key and the check notices."""
        attack = AttackDescriptor(AttackKind.INSIDE_COLLUSION, colluders=("A", "C"))
        caught = 0
        for seed in range(60):
            record = run_protocol(ProtocolParams(m=8, l=2, seed=seed), attack)
            self.assertIsNotNone(record.eve.guess)
            caught += bool(record.eve.caught_by_key_check)
        self.assertGreater(caught, 0)

    def test_random_pairing_run(self):
        """One inserted photon among three payload slots is found a third of the time.

        A correct guess relays the honest encoding faithfully, so the key
        check cannot tell; a wrong one is what the check catches.
        """
        attack = AttackDescriptor(
            AttackKind.INSIDE_COLLUSION,
            colluders=("B", "A"),
            strategy=CollusionStrategy.RANDOM_PAIRING,
        )
        trials = 150
        found = caught = 0
        for seed in range(trials):
            record = run_protocol(ProtocolParams(m=2, l=1, seed=seed), attack)
            eve = record.eve
            self.assertIsInstance(eve.positions_correct, bool)
            self.assertIsInstance(eve.caught_by_key_check, bool)
            self.assertEqual(eve.hops, ["B2"])
            self.assertEqual(len(eve.guess), 2 * 3)
            if eve.positions_correct:
                found += 1
                self.assertFalse(eve.caught_by_key_check)
                self.assertTrue(record.keys_agree)
            caught += eve.caught_by_key_check
        # 1/3 of 150 is 50 with sigma about 5.8
        self.assertLess(abs(found - trials / 3), 24)
        self.assertGreater(caught, 0)


class TestTrojan(unittest.TestCase):
    def test_both_countermeasures_block(self):
        record = trojan(TrojanCountermeasures(True, True), EveRecord(AttackKind.TROJAN))
        self.assertEqual(record.trojan_outcome, TROJAN_BLOCKED)

    def test_missing_countermeasure(self):
        for flags in ((False, True), (True, False)):
            record = trojan(TrojanCountermeasures(*flags), EveRecord(AttackKind.TROJAN))
            self.assertEqual(record.trojan_outcome, TROJAN_UNDETECTED)

    def test_trojan_has_no_quantum_effect(self):
        attack = AttackDescriptor(AttackKind.TROJAN, ("B2",))
        params = ProtocolParams(
            seed=5, trojan_countermeasures=TrojanCountermeasures(False, True)
        )
        record = run_protocol(params, attack)
        self.assertFalse(record.detected)
        self.assertTrue(record.keys_agree)
        self.assertEqual(record.eve.trojan_outcome, TROJAN_UNDETECTED)


if __name__ == "__main__":
    unittest.main(verbosity=2)
