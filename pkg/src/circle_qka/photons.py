"""Joint-state store for the photons of one protocol run.

Photons are integer ids. Photons that share entanglement live in one group
whose state is a single ``StateVector`` with the group members as its qubits,
in member order. Groups are merged by two-photon operations and shrink when
members are measured.
"""

import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import qcore
from .errors import ConsistencyError
from .qcore import BasisKind, PauliCode, StateVector

logger = logging.getLogger(__name__)


class PhotonStore:
    """Mutable registry mapping photon ids to their joint states."""

    def __init__(self) -> None:
        self._states: Dict[int, StateVector] = {}
        self._members: Dict[int, List[int]] = {}
        self._group_of: Dict[int, int] = {}
        self._next_photon = 0
        self._next_group = 0

    def __len__(self) -> int:
        return len(self._group_of)

    def __contains__(self, photon: int) -> bool:
        return photon in self._group_of

    def add(self, state: StateVector) -> List[int]:
        """Register ``state`` as fresh photons, one per qubit."""
        photons = list(range(self._next_photon, self._next_photon + state.num_qubits))
        self._next_photon += state.num_qubits
        group = self._next_group
        self._next_group += 1
        self._states[group] = state
        self._members[group] = photons
        for photon in photons:
            self._group_of[photon] = group
        return photons

    def create(self, label: str) -> int:
        """A single photon in one of |0>, |1>, |+>, |->."""
        state = qcore.make_state(label)
        if state.num_qubits != 1:
            raise ConsistencyError(f"{label!r} is not a single-photon state")
        return self.add(state)[0]

    def create_pair(self, label: str = "phi+") -> Tuple[int, int]:
        first, second = self.add(qcore.make_state(label))
        return first, second

    def _locate(self, photon: int) -> Tuple[int, int]:
        group = self._group_of.get(photon)
        if group is None:
            raise ConsistencyError(f"photon {photon} is not live")
        return group, self._members[group].index(photon)

    def group_size(self, photon: int) -> int:
        group, _ = self._locate(photon)
        return len(self._members[group])

    def partners(self, photon: int) -> List[int]:
        """Photons sharing a joint state with ``photon`` (itself included)."""
        group, _ = self._locate(photon)
        return list(self._members[group])

    def _merge(self, first: int, second: int) -> int:
        group_a, _ = self._locate(first)
        group_b, _ = self._locate(second)
        if group_a == group_b:
            return group_a
        size = len(self._members[group_a]) + len(self._members[group_b])
        if size > qcore.MAX_QUBITS:
            raise ConsistencyError(
                f"merging photons {first} and {second} needs {size} qubits"
            )
        self._states[group_a] = self._states[group_a].kron(self._states.pop(group_b))
        moved = self._members.pop(group_b)
        self._members[group_a].extend(moved)
        for photon in moved:
            self._group_of[photon] = group_a
        return group_a

    def apply_pauli(self, photon: int, code: PauliCode) -> None:
        group, index = self._locate(photon)
        self._states[group] = qcore.apply_pauli(self._states[group], code, index)

    def apply_matrix(self, photon: int, matrix: np.ndarray) -> None:
        group, index = self._locate(photon)
        self._states[group] = qcore.apply_matrix(self._states[group], matrix, index)

    def apply_unitary(self, first: int, second: int, matrix: np.ndarray) -> None:
        group = self._merge(first, second)
        members = self._members[group]
        pair = (members.index(first), members.index(second))
        self._states[group] = qcore.apply_unitary(self._states[group], matrix, pair)

    def _remove(self, group: int, photons: Sequence[int], outcome: qcore.MeasurementOutcome) -> None:
        for photon in photons:
            self._members[group].remove(photon)
            del self._group_of[photon]
        if outcome.remainder is None:
            del self._states[group]
            del self._members[group]
        else:
            self._states[group] = outcome.remainder

    def measure(self, photon: int, basis: BasisKind, rng: np.random.Generator) -> int:
        """Measure and consume one photon in the Z or X basis."""
        if basis is BasisKind.BELL:
            raise ConsistencyError("use bell_measure for Bell-basis measurements")
        group, index = self._locate(photon)
        outcome = qcore.measure(self._states[group], basis, (index,), rng)
        self._remove(group, (photon,), outcome)
        return int(outcome.code)

    def bell_measure(self, first: int, second: int, rng: np.random.Generator) -> PauliCode:
        """Bell-measure and consume the ordered pair (first, second)."""
        group = self._merge(first, second)
        members = self._members[group]
        pair = (members.index(first), members.index(second))
        outcome = qcore.measure(self._states[group], BasisKind.BELL, pair, rng)
        self._remove(group, (first, second), outcome)
        return PauliCode(outcome.code)

    def state_of(self, photons: Sequence[int]) -> StateVector:
        """Joint state of ``photons``, which must make up exactly one group."""
        group, _ = self._locate(photons[0])
        members = self._members[group]
        if sorted(members) != sorted(photons):
            raise ConsistencyError(
                f"photons {list(photons)} do not form a whole group ({members})"
            )
        order = [members.index(photon) for photon in photons]
        tensor = np.transpose(self._states[group].tensor(), order)
        return StateVector(len(photons), tensor.reshape(-1))
