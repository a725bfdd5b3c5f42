"""The three-party circle protocol.

Each participant prepares one ring of Bell pairs. The sequence of first
qubits visits the other two participants, who encode their sub-keys with
dense-coding Pauli operations, and returns to the preparer, who decodes it
against the second qubits kept at home. Decoys guard every hop; the first
encoder of a ring also inserts ``l`` single photons at secret positions.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .adversary import Adversary, AttackDescriptor, AttackKind, EveRecord, inside_collusion
from .errors import ConsistencyError, RejectedInputError
from .model import (
    DECOY_STATES,
    HOPS,
    PARTICIPANTS,
    RING_ROUTES,
    Announcement,
    DecoyRecord,
    DerivedKey,
    ProtocolParams,
    Slot,
    SlotKind,
    SubKey,
    TravelSequence,
    basis_for_state,
    derived_length,
    expected_outcome,
    hop_endpoints,
    hop_id,
)
from .photons import PhotonStore
from .qcore import BasisKind, PauliCode
from .streams import RandomStreams

logger = logging.getLogger(__name__)

KEY_CHECK_STAGE = "key_check"


def generate_subkey(rng: np.random.Generator, n: int, owner: str = "A") -> SubKey:
    """``n`` uniform two-bit groups drawn from ``rng``."""
    if n < 1:
        raise RejectedInputError(f"sub-key needs n >= 1 groups, got {n}")
    return SubKey(owner, tuple(PauliCode(int(v)) for v in rng.integers(4, size=n)))


def prepare_ring(
    preparer: str,
    params: ProtocolParams,
    rng: np.random.Generator,
    store: PhotonStore,
) -> Tuple[TravelSequence, List[int]]:
    """``m`` phi+ pairs: first qubits travel, second qubits stay home.

    ``rng`` is accepted for symmetry with the other steps; preparation is
    deterministic.
    """
    travel = TravelSequence(ring=preparer)
    home: List[int] = []
    for pair_id in range(params.m):
        first, second = store.create_pair("phi+")
        travel.slots.append(Slot(SlotKind.BELL_HALF, first, pair_id=pair_id))
        home.append(second)
    return travel, home


def insert_decoys(
    seq: TravelSequence, count: int, rng: np.random.Generator, store: PhotonStore
) -> DecoyRecord:
    """Splice ``count`` random decoys into ``seq`` at random positions."""
    if count < 0:
        raise RejectedInputError(f"decoy count must be >= 0, got {count}")
    if count == 0:
        return DecoyRecord((), (), ())
    states = tuple(DECOY_STATES[int(v)] for v in rng.integers(4, size=count))
    total = len(seq.slots) + count
    positions = tuple(sorted(int(p) for p in rng.choice(total, size=count, replace=False)))
    chosen = set(positions)
    originals = iter(seq.slots)
    decoys = iter(enumerate(states))
    slots = []
    for index in range(total):
        if index in chosen:
            decoy_id, label = next(decoys)
            slots.append(Slot(SlotKind.DECOY, store.create(label), decoy_id=decoy_id))
        else:
            slots.append(next(originals))
    seq.slots = slots
    return DecoyRecord(positions, states, tuple(basis_for_state(s) for s in states))


def check_decoys(
    seq: TravelSequence,
    record: DecoyRecord,
    rng: np.random.Generator,
    store: PhotonStore,
) -> float:
    """Measure the announced decoys, drop them, and return the error rate."""
    errors = 0
    for position, label, basis in zip(record.positions, record.states, record.bases):
        if position >= len(seq.slots) or seq.slots[position].kind is not SlotKind.DECOY:
            raise ConsistencyError(f"no decoy at announced position {position}")
        outcome = store.measure(seq.slots[position].photon, basis, rng)
        errors += outcome != expected_outcome(label)
    seq.slots = [slot for slot in seq.slots if slot.kind is not SlotKind.DECOY]
    if not record.positions:
        return 0.0
    return errors / len(record.positions)


def insert_singles(
    seq: TravelSequence,
    l: int,  # noqa: E741
    rng: np.random.Generator,
    store: PhotonStore,
    inserter: str = "",
) -> Announcement:
    """Insert ``l`` photons in |0> at uniformly random payload positions."""
    if l < 0:
        raise RejectedInputError(f"l must be >= 0, got {l}")
    if seq.decoy_positions():
        raise RejectedInputError("remove decoys before inserting single photons")
    total = len(seq.slots) + l
    positions = tuple(sorted(int(p) for p in rng.choice(total, size=l, replace=False)))
    chosen = set(positions)
    originals = iter(seq.slots)
    slots = []
    for index in range(total):
        if index in chosen:
            slots.append(Slot(SlotKind.INSERTED_SINGLE, store.create("0")))
        else:
            slots.append(next(originals))
    seq.slots = slots
    return Announcement(seq.ring, inserter, positions)


def encode(seq: TravelSequence, key: SubKey, store: PhotonStore) -> None:
    """Apply U_{key[i]} to the photon in payload slot i."""
    if seq.decoy_positions():
        raise RejectedInputError("cannot encode while decoys are in the sequence")
    if len(seq.slots) != len(key):
        raise RejectedInputError(
            f"payload length {len(seq.slots)} does not match key length {len(key)}"
        )
    for slot, code in zip(seq.slots, key.groups):
        store.apply_pauli(slot.photon, code)


def decode(
    home: Sequence[int],
    travel: TravelSequence,
    union_positions: Iterable[int],
    rng: np.random.Generator,
    store: PhotonStore,
) -> str:
    """Measure the returned sequence into K'.

    Positions outside the union yield the two Bell-code bits in place;
    union positions yield one bit each, appended in ascending order.
    """
    union = sorted(set(union_positions))
    union_set = set(union)
    in_place: List[str] = []
    appended: Dict[int, str] = {}
    if travel.decoy_positions():
        raise ConsistencyError("decoys left in the sequence at decoding")
    for index, slot in enumerate(travel.slots):
        if slot.kind is SlotKind.INSERTED_SINGLE:
            if index not in union_set:
                raise ConsistencyError(f"inserted single at {index} was never announced")
            appended[index] = str(store.measure(slot.photon, BasisKind.Z, rng))
            continue
        if slot.pair_id is None or not 0 <= slot.pair_id < len(home):
            raise ConsistencyError(f"slot {index} has no home qubit")
        code = store.bell_measure(slot.photon, home[slot.pair_id], rng)
        if index in union_set:
            appended[index] = str(code.x_bit)
        else:
            in_place.append(code.label)
    missing = [p for p in union if p not in appended]
    if missing:
        raise ConsistencyError(f"union positions {missing} are outside the payload")
    return "".join(in_place) + "".join(appended[p] for p in union)


def restructure_key(key: SubKey, union_positions: Iterable[int]) -> str:
    """K*: union groups reduced to their first bit and moved to the end."""
    union = sorted(set(union_positions))
    union_set = set(union)
    if union and union[-1] >= len(key):
        raise RejectedInputError(f"position {union[-1]} outside key of length {len(key)}")
    in_place = "".join(
        code.label for i, code in enumerate(key.groups) if i not in union_set
    )
    return in_place + "".join(str(key.groups[p].x_bit) for p in union)


def derive_final(k_star: str, k_prime: str, source: str = "") -> DerivedKey:
    """Bitwise XOR of K* and K'."""
    if len(k_star) != len(k_prime):
        raise RejectedInputError(
            f"length mismatch: K* has {len(k_star)} bits, K' has {len(k_prime)}"
        )
    bits = "".join("1" if a != b else "0" for a, b in zip(k_star, k_prime))
    return DerivedKey(bits, source)


def verify_sample(keys: Sequence[DerivedKey], positions: Iterable[int]) -> bool:
    """True iff every key agrees with the others on the sampled bits."""
    positions = list(positions)
    for position in positions:
        if any(position >= len(key) for key in keys):
            raise RejectedInputError(f"sample position {position} outside the key")
    reference = keys[0].bits
    return all(
        key.bits[p] == reference[p] for key in keys[1:] for p in positions
    )


@dataclass
class RunRecord:
    """Transcript of one protocol execution."""

    params: ProtocolParams
    attack: Optional[AttackDescriptor] = None
    subkeys: Dict[str, str] = field(default_factory=dict)
    announcements: List[Announcement] = field(default_factory=list)
    union_positions: List[int] = field(default_factory=list)
    transmissions: Dict[str, int] = field(default_factory=lambda: {h: 0 for h in HOPS})
    decoy_errors: Dict[str, Optional[int]] = field(
        default_factory=lambda: {h: None for h in HOPS}
    )
    decoy_error_rates: Dict[str, Optional[float]] = field(
        default_factory=lambda: {h: None for h in HOPS}
    )
    detected: bool = False
    aborted: bool = False
    abort_stage: Optional[str] = None
    derived_keys: Dict[str, str] = field(default_factory=dict)
    check_positions: List[int] = field(default_factory=list)
    check_passed: Optional[bool] = None
    eve: Optional[EveRecord] = None

    @property
    def keys_agree(self) -> bool:
        keys = list(self.derived_keys.values())
        return len(keys) == len(PARTICIPANTS) and len(set(keys)) == 1

    @property
    def aborted_at_check(self) -> bool:
        return self.aborted and self.abort_stage != KEY_CHECK_STAGE

    def to_dict(self) -> Dict[str, Any]:
        return {
            "params": self.params.to_dict(),
            "attack": self.attack.to_dict() if self.attack else None,
            "subkeys": dict(self.subkeys),
            "announcements": [a.to_dict() for a in self.announcements],
            "union_positions": list(self.union_positions),
            "transmissions": dict(self.transmissions),
            "decoy_errors": dict(self.decoy_errors),
            "decoy_error_rates": dict(self.decoy_error_rates),
            "detected": self.detected,
            "aborted": self.aborted,
            "abort_stage": self.abort_stage,
            "derived_keys": dict(self.derived_keys),
            "check_positions": list(self.check_positions),
            "check_passed": self.check_passed,
            "eve": self.eve.to_dict() if self.eve else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunRecord":
        return cls(
            params=ProtocolParams.from_dict(data["params"]),
            attack=AttackDescriptor.from_dict(data["attack"]) if data["attack"] else None,
            subkeys=dict(data["subkeys"]),
            announcements=[Announcement.from_dict(a) for a in data["announcements"]],
            union_positions=list(data["union_positions"]),
            transmissions=dict(data["transmissions"]),
            decoy_errors=dict(data["decoy_errors"]),
            decoy_error_rates=dict(data["decoy_error_rates"]),
            detected=data["detected"],
            aborted=data["aborted"],
            abort_stage=data["abort_stage"],
            derived_keys=dict(data["derived_keys"]),
            check_positions=list(data["check_positions"]),
            check_passed=data["check_passed"],
            eve=EveRecord.from_dict(data["eve"]) if data["eve"] else None,
        )

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls.from_dict(json.loads(text))


@dataclass
class _Ring:
    travel: TravelSequence
    home: List[int]
    decoys: DecoyRecord = DecoyRecord((), (), ())
    announcement: Optional[Announcement] = None


class _Aborted(Exception):
    pass


class ProtocolRunner:
    """Runs the full protocol on all three rings for one parameter set."""

    def __init__(self, params: ProtocolParams, verbose: bool = False):
        self.params = params.validate()
        self.verbose = verbose

    def log(self, message: str) -> None:
        logger.log(logging.INFO if self.verbose else logging.DEBUG, message)

    def run(
        self,
        attack: Optional[AttackDescriptor] = None,
        subkeys: Optional[Dict[str, SubKey]] = None,
    ) -> RunRecord:
        params = self.params
        self.store = PhotonStore()
        self.streams = RandomStreams(params.seed)
        self.adversary = (
            Adversary(attack, params.trojan_countermeasures) if attack else None
        )
        self.record = RunRecord(params=params, attack=attack)
        self.keys = self._subkeys(subkeys)
        self.record.subkeys = {p: self.keys[p].bits for p in PARTICIPANTS}
        if self.adversary is not None:
            self.record.eve = self.adversary.record

        self.log(f"Running protocol m={params.m} l={params.l} seed={params.seed}")
        try:
            self._step_prepare()
            self._step_check(leg=1)
            self._step_first_encoding()
            self._step_check(leg=2)
            self._step_second_encoding()
            self._step_announce()
            self._step_check(leg=3)
            self._step_decode()
        except _Aborted:
            self.log(f"Aborted at {self.record.abort_stage}")
        return self.record

    def _subkeys(self, given: Optional[Dict[str, SubKey]]) -> Dict[str, SubKey]:
        keys = {}
        for participant in PARTICIPANTS:
            if given and participant in given:
                key = given[participant]
                if len(key) != self.params.n:
                    raise RejectedInputError(
                        f"sub-key of {participant} has {len(key)} groups, "
                        f"expected {self.params.n}"
                    )
                keys[participant] = key
            else:
                rng = self.streams.get("subkey", participant)
                keys[participant] = generate_subkey(rng, self.params.n, participant)
        return keys

    def _transmit(self, hop: str, seq: TravelSequence) -> None:
        self.record.transmissions[hop] = len(seq.slots)
        if self.adversary is not None:
            self.adversary.on_hop(hop, seq, self.store, self.streams.get("eve", hop))
        flip = self.params.channel_flip_prob
        if flip > 0.0:
            rng = self.streams.get("channel", hop)
            for slot in seq.slots:
                if rng.random() < flip:
                    self.store.apply_pauli(slot.photon, PauliCode.U11)

    def _send(self, ring: str, leg: int, step: int) -> None:
        state = self.rings[ring]
        rng = self.streams.get(ring, step, "decoys")
        state.decoys = insert_decoys(
            state.travel, self.params.decoy_count, rng, self.store
        )
        hop = hop_id(ring, leg)
        sender, receiver = hop_endpoints(hop)
        self._transmit(hop, state.travel)
        self.log(f"{sender} -> {receiver} on {hop}: {len(state.travel)} photons")

    def _step_prepare(self) -> None:
        rings = {}
        for ring in PARTICIPANTS:
            rng = self.streams.get(ring, 1, "prepare")
            travel, home = prepare_ring(ring, self.params, rng, self.store)
            rings[ring] = _Ring(travel, home)
        self.rings = rings
        for ring in PARTICIPANTS:
            self._send(ring, leg=1, step=1)

    def _step_check(self, leg: int) -> None:
        step = 2 * leg
        for ring in PARTICIPANTS:
            state = self.rings[ring]
            hop = hop_id(ring, leg)
            count = len(state.decoys)
            rate = check_decoys(
                state.travel, state.decoys, self.streams.get(ring, step, "check"), self.store
            )
            errors = round(rate * count)
            self.record.decoy_errors[hop] = errors
            self.record.decoy_error_rates[hop] = rate
            if errors:
                self.record.detected = True
            if rate > self.params.qber_threshold:
                self.record.aborted = True
                self.record.abort_stage = hop
                raise _Aborted()

    def _step_first_encoding(self) -> None:
        for ring in PARTICIPANTS:
            state = self.rings[ring]
            first = RING_ROUTES[ring][1]
            rng = self.streams.get(ring, 3, "singles")
            state.announcement = insert_singles(
                state.travel, self.params.l, rng, self.store, inserter=first
            )
            encode(state.travel, self.keys[first], self.store)
            self._send(ring, leg=2, step=3)

    def _step_second_encoding(self) -> None:
        target = self.adversary.collusion_ring() if self.adversary else None
        for ring in PARTICIPANTS:
            state = self.rings[ring]
            if ring == target and self.adversary is not None:
                honest = RING_ROUTES[ring][1]
                assert state.announcement is not None
                state.home = inside_collusion(
                    self.store,
                    state.travel,
                    state.home,
                    self.adversary.descriptor.strategy,
                    self.streams.get(ring, 5, "collusion"),
                    self.adversary.record,
                    self.params.l,
                    self.keys[honest],
                    state.announcement.single_positions,
                )
                self.adversary.record.hops.append(hop_id(ring, 2))
            second = RING_ROUTES[ring][2]
            encode(state.travel, self.keys[second], self.store)
            self._send(ring, leg=3, step=5)

    def _step_announce(self) -> None:
        union = set()
        for ring in PARTICIPANTS:
            announcement = self.rings[ring].announcement
            assert announcement is not None
            self.record.announcements.append(announcement)
            union.update(announcement.single_positions)
        self.record.union_positions = sorted(union)

    def _step_decode(self) -> None:
        union = self.record.union_positions
        keys = []
        for ring in PARTICIPANTS:
            state = self.rings[ring]
            rng = self.streams.get(ring, 7, "decode")
            k_prime = decode(state.home, state.travel, union, rng, self.store)
            k_star = restructure_key(self.keys[ring], union)
            keys.append(derive_final(k_star, k_prime, source=ring))
        self.record.derived_keys = {key.source: key.bits for key in keys}

        length = derived_length(self.params.n, union)
        size = self.params.sample_size_for(length)
        rng = self.streams.get("verify", 6, "sample")
        positions = sorted(int(p) for p in rng.choice(length, size=size, replace=False))
        self.record.check_positions = positions
        passed = verify_sample(keys, positions)
        self.record.check_passed = passed
        if self.record.eve is not None and self.record.eve.kind is AttackKind.INSIDE_COLLUSION:
            self.record.eve.caught_by_key_check = not passed
        if not passed:
            self.record.aborted = True
            self.record.abort_stage = KEY_CHECK_STAGE
            self.log("Sampled key bits disagree; aborting")


def run_protocol(
    params: ProtocolParams,
    attack: Optional[AttackDescriptor] = None,
    subkeys: Optional[Dict[str, SubKey]] = None,
    verbose: bool = False,
) -> RunRecord:
    """Execute one full protocol run and return its transcript.

    Args:
        params: Sizes, seed, noise and abort threshold of the run.
        attack: Optional attack applied on its target hops.
        subkeys: Sub-keys to use instead of drawing them from the seed.
        verbose: Log each protocol step at INFO.

    Returns:
        The RunRecord. Aborted runs are returned, not raised.

    Raises:
        RejectedInputError: If ``params`` or ``attack`` is invalid, or a given
            sub-key has the wrong length.
    """
    return ProtocolRunner(params, verbose=verbose).run(attack, subkeys)
