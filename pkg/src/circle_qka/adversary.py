"""Attack models that can be attached to the quantum channel.

Outside attacks (intercept-resend, measure-resend, entangle-measure, Trojan
horse) act on every photon of a targeted hop, since Eve cannot tell decoys
from payload. The inside attack lets the preparer and the second encoder of
one ring pool their photons before the second encoding.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import qcore
from .errors import ConsistencyError, RejectedInputError
from .model import (
    DECOY_STATES,
    PARTICIPANTS,
    RING_ROUTES,
    SubKey,
    TravelSequence,
    TrojanCountermeasures,
    basis_for_state,
    expected_outcome,
    parse_hop,
)
from .photons import PhotonStore
from .qcore import BasisKind, PauliCode

logger = logging.getLogger(__name__)

TROJAN_BLOCKED = "blocked by assumption"
TROJAN_UNDETECTED = "undetected by assumption"

UNIFORM_RESEND = (0.25, 0.25, 0.25, 0.25)


class AttackKind(Enum):
    INTERCEPT_RESEND = "intercept-resend"
    MEASURE_RESEND = "measure-resend"
    ENTANGLE_MEASURE = "entangle-measure"
    TROJAN = "trojan"
    INSIDE_COLLUSION = "inside-collusion"


OUTSIDE_KINDS = (
    AttackKind.INTERCEPT_RESEND,
    AttackKind.MEASURE_RESEND,
    AttackKind.ENTANGLE_MEASURE,
    AttackKind.TROJAN,
)


class CollusionStrategy(Enum):
    NAIVE_ALIGN = "naive-align"
    RANDOM_PAIRING = "random-pairing"


Matrix = Tuple[Tuple[complex, ...], ...]


def freeze_matrix(matrix: np.ndarray) -> Matrix:
    return tuple(tuple(complex(v) for v in row) for row in np.asarray(matrix))


@dataclass(frozen=True)
class AttackDescriptor:
    """Immutable description of one attack."""

    kind: AttackKind
    target_hops: Tuple[str, ...] = ()
    eve_unitary: Optional[Matrix] = None
    colluders: Optional[Tuple[str, str]] = None
    strategy: CollusionStrategy = CollusionStrategy.NAIVE_ALIGN
    resend_distribution: Optional[Tuple[float, float, float, float]] = None

    def validate(self) -> "AttackDescriptor":
        for hop in self.target_hops:
            try:
                parse_hop(hop)
            except RejectedInputError as exc:
                raise RejectedInputError(str(exc), field="target_hops") from exc
        if self.kind in OUTSIDE_KINDS and not self.target_hops:
            raise RejectedInputError(
                f"{self.kind.value} needs at least one target hop", field="target_hops"
            )
        if (self.eve_unitary is not None) != (self.kind is AttackKind.ENTANGLE_MEASURE):
            raise RejectedInputError(
                "eve_unitary must be given exactly when the attack is entangle-measure",
                field="eve_unitary",
            )
        if self.eve_unitary is not None:
            qcore.check_unitary(np.array(self.eve_unitary, dtype=complex))
        if (self.colluders is not None) != (self.kind is AttackKind.INSIDE_COLLUSION):
            raise RejectedInputError(
                "colluders must be given exactly when the attack is inside-collusion",
                field="colluders",
            )
        if self.colluders is not None:
            try:
                collusion_ring(self.colluders)
            except RejectedInputError as exc:
                raise RejectedInputError(str(exc), field="colluders") from exc
        if self.resend_distribution is not None:
            if self.kind is not AttackKind.INTERCEPT_RESEND:
                raise RejectedInputError(
                    "resend_distribution only applies to intercept-resend",
                    field="resend_distribution",
                )
            dist = self.resend_distribution
            if len(dist) != 4 or min(dist) < 0 or abs(sum(dist) - 1.0) > 1e-9:
                raise RejectedInputError(
                    f"resend_distribution must be four probabilities summing to 1, "
                    f"got {dist}",
                    field="resend_distribution",
                )
        return self

    def unitary(self) -> np.ndarray:
        if self.eve_unitary is None:
            raise RejectedInputError("attack carries no unitary")
        return np.array(self.eve_unitary, dtype=complex)

    def to_dict(self) -> Dict[str, Any]:
        matrix = None
        if self.eve_unitary is not None:
            matrix = [[[v.real, v.imag] for v in row] for row in self.eve_unitary]
        return {
            "kind": self.kind.value,
            "target_hops": list(self.target_hops),
            "eve_unitary": matrix,
            "colluders": list(self.colluders) if self.colluders else None,
            "strategy": self.strategy.value,
            "resend_distribution": (
                list(self.resend_distribution) if self.resend_distribution else None
            ),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AttackDescriptor":
        matrix = None
        if data["eve_unitary"] is not None:
            matrix = tuple(
                tuple(complex(re, im) for re, im in row) for row in data["eve_unitary"]
            )
        colluders = data["colluders"]
        dist = data["resend_distribution"]
        return cls(
            kind=AttackKind(data["kind"]),
            target_hops=tuple(data["target_hops"]),
            eve_unitary=matrix,
            colluders=(colluders[0], colluders[1]) if colluders else None,
            strategy=CollusionStrategy(data["strategy"]),
            resend_distribution=tuple(dist) if dist else None,  # type: ignore[arg-type]
        )


@dataclass
class EveRecord:
    """What the adversary captured during one run."""

    kind: AttackKind
    hops: List[str] = field(default_factory=list)
    captured: List[int] = field(default_factory=list)
    outcomes: List[str] = field(default_factory=list)
    ancillas: List[int] = field(default_factory=list)
    evicted_ancillas: List[str] = field(default_factory=list)
    guess: Optional[str] = None
    positions_correct: Optional[bool] = None
    bits_correct_beyond_chance: Optional[float] = None
    trojan_outcome: Optional[str] = None
    caught_by_key_check: Optional[bool] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "hops": list(self.hops),
            "captured": list(self.captured),
            "outcomes": list(self.outcomes),
            "ancillas": list(self.ancillas),
            "evicted_ancillas": list(self.evicted_ancillas),
            "guess": self.guess,
            "positions_correct": self.positions_correct,
            "bits_correct_beyond_chance": self.bits_correct_beyond_chance,
            "trojan_outcome": self.trojan_outcome,
            "caught_by_key_check": self.caught_by_key_check,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EveRecord":
        return cls(
            kind=AttackKind(data["kind"]),
            hops=list(data["hops"]),
            captured=list(data["captured"]),
            outcomes=list(data["outcomes"]),
            ancillas=list(data["ancillas"]),
            evicted_ancillas=list(data["evicted_ancillas"]),
            guess=data["guess"],
            positions_correct=data["positions_correct"],
            bits_correct_beyond_chance=data["bits_correct_beyond_chance"],
            trojan_outcome=data["trojan_outcome"],
            caught_by_key_check=data["caught_by_key_check"],
        )


def intercept_resend(
    store: PhotonStore,
    seq: TravelSequence,
    rng: np.random.Generator,
    record: EveRecord,
    distribution: Sequence[float] = UNIFORM_RESEND,
) -> EveRecord:
    """Keep every photon of the hop and forward fresh ones instead.

    The withheld originals stay in ``store``; their ids go to ``record.captured``.
    """
    for slot in seq.slots:
        record.captured.append(slot.photon)
        label = DECOY_STATES[qcore.sample_index(distribution, rng)]
        slot.photon = store.create(label)
    return record


def measure_resend(
    store: PhotonStore, seq: TravelSequence, rng: np.random.Generator, record: EveRecord
) -> EveRecord:
    """Measure each photon in a random basis and forward the collapsed state."""
    for slot in seq.slots:
        basis = BasisKind.Z if rng.integers(2) == 0 else BasisKind.X
        bit = store.measure(slot.photon, basis, rng)
        labels = ("0", "1") if basis is BasisKind.Z else ("+", "-")
        slot.photon = store.create(labels[bit])
        record.outcomes.append(f"{basis.value}{bit}")
    return record


def _make_room(
    store: PhotonStore, photon: int, rng: np.random.Generator, record: EveRecord
) -> None:
    # Eve measures her oldest ancilla out of the register; this does not
    # change the photons' reduced state.
    while store.group_size(photon) + 1 > qcore.MAX_QUBITS:
        partners = set(store.partners(photon))
        oldest = next((a for a in record.ancillas if a in partners), None)
        if oldest is None:
            raise ConsistencyError(f"photon {photon} has no ancilla to release")
        bit = store.measure(oldest, BasisKind.Z, rng)
        record.evicted_ancillas.append(f"Z{bit}")


def entangle_measure(
    store: PhotonStore,
    seq: TravelSequence,
    eve_unitary: np.ndarray,
    rng: np.random.Generator,
    record: EveRecord,
) -> EveRecord:
    """Couple each passing photon to a fresh ancilla with ``eve_unitary``."""
    matrix = qcore.check_unitary(eve_unitary)
    for slot in seq.slots:
        _make_room(store, slot.photon, rng, record)
        ancilla = store.create("0")
        store.apply_unitary(slot.photon, ancilla, matrix)
        record.ancillas.append(ancilla)
    return record


def trojan(countermeasures: TrojanCountermeasures, record: EveRecord) -> EveRecord:
    """Record whether trojan-horse light gets past the receivers.

    Both the wavelength filter and the photon-number splitter are needed to
    block it. The photons themselves are left alone.
    """
    blocked = countermeasures.wavelength_filter and countermeasures.photon_number_splitter
    record.trojan_outcome = TROJAN_BLOCKED if blocked else TROJAN_UNDETECTED
    return record


def predicted_decoy_error(eve_unitary: np.ndarray) -> float:
    """Decoy error probability under uniform decoys, in closed form."""
    e00, e01, e10, e11 = qcore.eve_decomposition(eve_unitary)

    def weight(vector: np.ndarray) -> float:
        return float(np.vdot(vector, vector).real)

    errors = (
        weight(e01),
        weight(e10),
        weight((e00 - e01 + e10 - e11) / 2),
        weight((e00 + e01 - e10 - e11) / 2),
    )
    return sum(errors) / 4


def ancilla_overlap(eve_unitary: np.ndarray) -> float:
    """Smallest |overlap| among Eve's normalized non-zero conditional states."""
    states = []
    for vector in qcore.eve_decomposition(eve_unitary):
        norm = math.sqrt(float(np.vdot(vector, vector).real))
        if norm > qcore.TOLERANCE:
            states.append(vector / norm)
    smallest = 1.0
    for i, first in enumerate(states):
        for second in states[i + 1 :]:
            smallest = min(smallest, abs(qcore.overlap(first, second)))
    return smallest


def estimate_decoy_error(
    eve_unitary: np.ndarray, count: int, rng: np.random.Generator
) -> float:
    """Monte Carlo decoy error of entangle-measure over ``count`` uniform decoys."""
    matrix = qcore.check_unitary(eve_unitary)
    if count <= 0:
        return 0.0
    store = PhotonStore()
    errors = 0
    for _ in range(count):
        label = DECOY_STATES[int(rng.integers(4))]
        photon = store.create(label)
        ancilla = store.create("0")
        store.apply_unitary(photon, ancilla, matrix)
        outcome = store.measure(photon, basis_for_state(label), rng)
        errors += outcome != expected_outcome(label)
    return errors / count


def collusion_ring(colluders: Sequence[str]) -> str:
    """The ring whose preparer and second encoder are both colluders."""
    pair = tuple(colluders)
    if len(pair) != 2 or pair[0] == pair[1] or any(p not in PARTICIPANTS for p in pair):
        raise RejectedInputError(
            f"colluders must be two distinct participants of A/B/C, got {list(pair)}"
        )
    for ring, (preparer, _, second) in RING_ROUTES.items():
        if {preparer, second} == set(pair):
            return ring
    raise ConsistencyError(f"no ring matches colluders {pair}")


def guess_single_positions(
    strategy: CollusionStrategy, n: int, l: int, rng: np.random.Generator  # noqa: E741
) -> Tuple[int, ...]:
    if strategy is CollusionStrategy.NAIVE_ALIGN:
        return tuple(range(n - l, n))
    return tuple(sorted(int(i) for i in rng.choice(n, size=l, replace=False)))


def inside_collusion(
    store: PhotonStore,
    seq: TravelSequence,
    home: List[int],
    strategy: CollusionStrategy,
    rng: np.random.Generator,
    record: EveRecord,
    l: int,  # noqa: E741
    honest_key: SubKey,
    true_positions: Sequence[int],
) -> List[int]:
    """Measure the honest encoder's photons against the home qubits.

    The colluders guess where the singles were inserted, Bell-measure every
    other travel photon against the home qubits in order, then forward fresh
    photons encoding their guess. Returns the replacement home qubits.
    """
    payload = seq.payload()
    if len(payload) != len(seq.slots):
        raise ConsistencyError("collusion expects a sequence without decoys")
    n = len(payload)
    singles = guess_single_positions(strategy, n, l, rng)
    single_set = set(singles)
    bell_positions = [i for i in range(n) if i not in single_set]
    if len(bell_positions) != len(home):
        raise ConsistencyError("pairing guess does not cover every home qubit")

    guess: List[PauliCode] = [PauliCode.U00] * n
    for i in singles:
        bit = store.measure(payload[i].photon, BasisKind.Z, rng)
        guess[i] = PauliCode.from_bits(bit, int(rng.integers(2)))
    for j, i in enumerate(bell_positions):
        guess[i] = store.bell_measure(payload[i].photon, home[j], rng)

    new_home = list(home)
    for i in singles:
        photon = store.create("0")
        store.apply_pauli(photon, guess[i])
        payload[i].photon = photon
    for j, i in enumerate(bell_positions):
        travel, kept = store.create_pair("phi+")
        store.apply_pauli(travel, guess[i])
        payload[i].photon = travel
        new_home[j] = kept

    guess_bits = "".join(code.label for code in guess)
    correct = sum(a == b for a, b in zip(guess_bits, honest_key.bits))
    record.guess = guess_bits
    record.positions_correct = single_set == set(true_positions)
    record.bits_correct_beyond_chance = correct / len(guess_bits) - 0.5
    logger.debug(
        "collusion guessed singles %s (true %s)", list(singles), list(true_positions)
    )
    return new_home


class Adversary:
    """Channel middleware that applies one AttackDescriptor to a run."""

    def __init__(
        self, descriptor: AttackDescriptor, countermeasures: TrojanCountermeasures
    ):
        self.descriptor = descriptor.validate()
        self.countermeasures = countermeasures
        self.record = EveRecord(kind=descriptor.kind)

    @property
    def kind(self) -> AttackKind:
        return self.descriptor.kind

    def targets(self, hop: str) -> bool:
        return self.kind in OUTSIDE_KINDS and hop in self.descriptor.target_hops

    def on_hop(
        self,
        hop: str,
        seq: TravelSequence,
        store: PhotonStore,
        rng: np.random.Generator,
    ) -> None:
        if not self.targets(hop):
            return
        self.record.hops.append(hop)
        if self.kind is AttackKind.INTERCEPT_RESEND:
            dist = self.descriptor.resend_distribution or UNIFORM_RESEND
            intercept_resend(store, seq, rng, self.record, dist)
        elif self.kind is AttackKind.MEASURE_RESEND:
            measure_resend(store, seq, rng, self.record)
        elif self.kind is AttackKind.ENTANGLE_MEASURE:
            entangle_measure(store, seq, self.descriptor.unitary(), rng, self.record)
        else:
            trojan(self.countermeasures, self.record)

    def collusion_ring(self) -> Optional[str]:
        if self.kind is not AttackKind.INSIDE_COLLUSION or not self.descriptor.colluders:
            return None
        return collusion_ring(self.descriptor.colluders)

