"""Domain types shared by the protocol and the adversary models."""

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .errors import RejectedInputError
from .qcore import BasisKind, PauliCode
from .streams import check_seed

PARTICIPANTS: Tuple[str, ...] = ("A", "B", "C")

# Ring X is prepared by X, then visited by the next two participants.
RING_ROUTES: Dict[str, Tuple[str, str, str]] = {
    "A": ("A", "B", "C"),
    "B": ("B", "C", "A"),
    "C": ("C", "A", "B"),
}

LEGS = (1, 2, 3)

# Execution order: every ring's first leg, then every second leg, then the third.
HOPS: Tuple[str, ...] = tuple(f"{ring}{leg}" for leg in LEGS for ring in PARTICIPANTS)

DECOY_STATES = ("0", "1", "+", "-")


def hop_id(ring: str, leg: int) -> str:
    """Hop name such as ``"A1"``: the ring's preparer followed by the leg number."""
    return f"{ring}{leg}"


def parse_hop(hop: str) -> Tuple[str, int]:
    """Split a hop name into (ring, leg).

    Raises:
        RejectedInputError: If ``hop`` is not one of A1..C3.
    """
    if len(hop) != 2 or hop[0] not in RING_ROUTES or hop[1] not in "123":
        raise RejectedInputError(
            f"unknown hop {hop!r}; expected ring A/B/C followed by leg 1-3"
        )
    return hop[0], int(hop[1])


def hop_endpoints(hop: str) -> Tuple[str, str]:
    """(sender, receiver) of a hop."""
    ring, leg = parse_hop(hop)
    route = RING_ROUTES[ring]
    return route[leg - 1], route[leg % 3]


def basis_for_state(label: str) -> BasisKind:
    """Z for |0> and |1>, X for |+> and |->."""
    return BasisKind.Z if label in ("0", "1") else BasisKind.X


def expected_outcome(label: str) -> int:
    return 0 if label in ("0", "+") else 1


@dataclass(frozen=True)
class TrojanCountermeasures:
    wavelength_filter: bool = True
    photon_number_splitter: bool = True


@dataclass(frozen=True)
class ProtocolParams:
    """Parameters of one protocol execution.

    ``decoy_count`` is the number of decoys added on every hop. A
    ``check_sample_size`` of None means 10% of the final key, rounded up.
    """

    m: int = 8
    l: int = 2  # noqa: E741
    decoy_count: int = 16
    qber_threshold: float = 0.10
    check_sample_size: Optional[int] = None
    seed: int = 0
    channel_flip_prob: float = 0.0
    trojan_countermeasures: TrojanCountermeasures = field(
        default_factory=TrojanCountermeasures
    )

    @property
    def n(self) -> int:
        return self.m + self.l

    def validate(self) -> "ProtocolParams":
        if self.m < 1:
            raise RejectedInputError(f"m must satisfy m >= 1, got {self.m}", field="m")
        if self.l < 0:
            raise RejectedInputError(f"l must satisfy l >= 0, got {self.l}", field="l")
        if self.decoy_count < 0:
            raise RejectedInputError(
                f"decoy_count must satisfy decoy_count >= 0, got {self.decoy_count}",
                field="decoy_count",
            )
        if not 0.0 <= self.qber_threshold <= 1.0:
            raise RejectedInputError(
                f"qber_threshold must lie in [0, 1], got {self.qber_threshold}",
                field="qber_threshold",
            )
        if not 0.0 <= self.channel_flip_prob <= 1.0:
            raise RejectedInputError(
                f"channel_flip_prob must lie in [0, 1], got {self.channel_flip_prob}",
                field="channel_flip_prob",
            )
        if self.check_sample_size is not None:
            shortest = 2 * self.n - min(self.n, 3 * self.l)
            if not 0 <= self.check_sample_size <= shortest:
                raise RejectedInputError(
                    "check_sample_size must not exceed the final key length "
                    f"({shortest}), got {self.check_sample_size}",
                    field="check_sample_size",
                )
        check_seed(self.seed)
        return self

    def sample_size_for(self, key_length: int) -> int:
        if self.check_sample_size is None:
            return math.ceil(0.1 * key_length)
        return min(self.check_sample_size, key_length)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "m": self.m,
            "l": self.l,
            "n": self.n,
            "decoy_count": self.decoy_count,
            "qber_threshold": self.qber_threshold,
            "check_sample_size": self.check_sample_size,
            "seed": self.seed,
            "channel_flip_prob": self.channel_flip_prob,
            "trojan_countermeasures": asdict(self.trojan_countermeasures),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ProtocolParams":
        return cls(
            m=data["m"],
            l=data["l"],
            decoy_count=data["decoy_count"],
            qber_threshold=data["qber_threshold"],
            check_sample_size=data["check_sample_size"],
            seed=data["seed"],
            channel_flip_prob=data["channel_flip_prob"],
            trojan_countermeasures=TrojanCountermeasures(
                **data["trojan_countermeasures"]
            ),
        )


class SlotKind(Enum):
    BELL_HALF = "bell_half"
    INSERTED_SINGLE = "inserted_single"
    DECOY = "decoy"


@dataclass
class Slot:
    """One position of a travelling sequence.

    ``photon`` is the id of the photon currently occupying the slot; an
    attack may swap it for another.
    """

    kind: SlotKind
    photon: int
    pair_id: Optional[int] = None
    decoy_id: Optional[int] = None


@dataclass
class TravelSequence:
    ring: str
    slots: List[Slot] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.slots)

    def payload(self) -> List[Slot]:
        return [slot for slot in self.slots if slot.kind is not SlotKind.DECOY]

    def decoy_positions(self) -> List[int]:
        return [i for i, slot in enumerate(self.slots) if slot.kind is SlotKind.DECOY]


@dataclass(frozen=True)
class DecoyRecord:
    positions: Tuple[int, ...]
    states: Tuple[str, ...]
    bases: Tuple[BasisKind, ...]

    def __post_init__(self) -> None:
        if not (len(self.positions) == len(self.states) == len(self.bases)):
            raise RejectedInputError("decoy record fields differ in length")
        for label, basis in zip(self.states, self.bases):
            if basis_for_state(label) is not basis:
                raise RejectedInputError(f"decoy {label!r} announced in basis {basis}")

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class Announcement:
    ring: str
    inserter: str
    single_positions: Tuple[int, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ring": self.ring,
            "inserter": self.inserter,
            "single_positions": list(self.single_positions),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Announcement":
        return cls(data["ring"], data["inserter"], tuple(data["single_positions"]))


@dataclass(frozen=True)
class SubKey:
    owner: str
    groups: Tuple[PauliCode, ...]

    @property
    def bits(self) -> str:
        return "".join(code.label for code in self.groups)

    def __len__(self) -> int:
        return len(self.groups)

    @classmethod
    def from_bits(cls, owner: str, bits: str) -> "SubKey":
        if len(bits) % 2:
            raise RejectedInputError(f"sub-key bit string has odd length {len(bits)}")
        groups = tuple(
            PauliCode.from_label(bits[i : i + 2]) for i in range(0, len(bits), 2)
        )
        return cls(owner, groups)

    def with_group(self, index: int, code: PauliCode) -> "SubKey":
        groups = list(self.groups)
        groups[index] = code
        return SubKey(self.owner, tuple(groups))


@dataclass(frozen=True)
class DerivedKey:
    bits: str
    source: str

    def __len__(self) -> int:
        return len(self.bits)


def derived_length(n: int, union_positions: Sequence[int]) -> int:
    return 2 * (n - len(union_positions)) + len(union_positions)
