"""Dense state-vector kernel for registers of one to four qubits.

Qubit 0 is the leftmost symbol of a ket, so ``|01>`` has qubit 0 in ``|0>``
and amplitude index ``0b01``. All values are immutable; every operation
returns a new value.
"""

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import RejectedInputError

MAX_QUBITS = 4
TOLERANCE = 1e-9

_SQRT_HALF = 1.0 / math.sqrt(2.0)


class PauliCode(IntEnum):
    """Two-bit code ``xz`` naming a dense-coding operation or a Bell state.

    U00 = I, U01 = sigma_z, U10 = sigma_x, U11 = i*sigma_y. As Bell codes:
    phi+ = 00, phi- = 01, psi+ = 10, psi- = 11.
    """

    U00 = 0
    U01 = 1
    U10 = 2
    U11 = 3

    @property
    def x_bit(self) -> int:
        return int(self) >> 1

    @property
    def z_bit(self) -> int:
        return int(self) & 1

    @property
    def label(self) -> str:
        return f"{self.x_bit}{self.z_bit}"

    @classmethod
    def from_bits(cls, x_bit: int, z_bit: int) -> "PauliCode":
        return cls(((x_bit & 1) << 1) | (z_bit & 1))

    @classmethod
    def from_label(cls, label: str) -> "PauliCode":
        if len(label) != 2 or any(ch not in "01" for ch in label):
            raise RejectedInputError(f"Pauli code must be two bits, got {label!r}")
        return cls.from_bits(int(label[0]), int(label[1]))


class BasisKind(Enum):
    """Measurement basis."""

    Z = "Z"
    X = "X"
    BELL = "BELL"


PAULI_MATRICES: Dict[PauliCode, np.ndarray] = {
    PauliCode.U00: np.eye(2, dtype=complex),
    PauliCode.U01: np.array([[1, 0], [0, -1]], dtype=complex),
    PauliCode.U10: np.array([[0, 1], [1, 0]], dtype=complex),
    PauliCode.U11: np.array([[0, 1], [-1, 0]], dtype=complex),
}

HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT_HALF

IDENTITY4 = np.eye(4, dtype=complex)
CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
SWAP = np.array(
    [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
)

# Bell states indexed by their code; rows are (2, 2) tensors over (q0, q1).
BELL_STATES: Dict[PauliCode, np.ndarray] = {
    PauliCode.U00: np.array([1, 0, 0, 1], dtype=complex) * _SQRT_HALF,
    PauliCode.U01: np.array([1, 0, 0, -1], dtype=complex) * _SQRT_HALF,
    PauliCode.U10: np.array([0, 1, 1, 0], dtype=complex) * _SQRT_HALF,
    PauliCode.U11: np.array([0, 1, -1, 0], dtype=complex) * _SQRT_HALF,
}

_SINGLE_STATES: Dict[str, np.ndarray] = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([1, 1], dtype=complex) * _SQRT_HALF,
    "-": np.array([1, -1], dtype=complex) * _SQRT_HALF,
}

_LABEL_ALIASES = {
    "−": "-",
    "φ+": "phi+",
    "φ-": "phi-",
    "φ−": "phi-",
    "ψ+": "psi+",
    "ψ-": "psi-",
    "ψ−": "psi-",
}

_BELL_LABELS = {
    "phi+": PauliCode.U00,
    "phi-": PauliCode.U01,
    "psi+": PauliCode.U10,
    "psi-": PauliCode.U11,
}

STATE_LABELS = tuple(_SINGLE_STATES) + tuple(_BELL_LABELS)


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalized pure state of ``num_qubits`` qubits."""

    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        if not 1 <= self.num_qubits <= MAX_QUBITS:
            raise RejectedInputError(
                f"num_qubits must be in [1, {MAX_QUBITS}], got {self.num_qubits}"
            )
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != 2**self.num_qubits:
            raise RejectedInputError(
                f"expected {2 ** self.num_qubits} amplitudes, got {amps.shape[0]}"
            )
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > TOLERANCE:
            raise RejectedInputError(f"state is not normalized (norm^2 = {norm!r})")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_amplitudes(
        cls, amplitudes: Union[Sequence[complex], np.ndarray], normalize: bool = False
    ) -> "StateVector":
        amps = np.array(amplitudes, dtype=complex).reshape(-1)
        size = amps.shape[0]
        num_qubits = size.bit_length() - 1
        if size < 2 or 2**num_qubits != size:
            raise RejectedInputError(f"amplitude count {size} is not a power of two")
        if normalize:
            norm = math.sqrt(float(np.vdot(amps, amps).real))
            if norm == 0.0:
                raise RejectedInputError("cannot normalize the zero vector")
            amps = amps / norm
        return cls(num_qubits, amps)

    def tensor(self) -> np.ndarray:
        """Amplitudes reshaped to one axis per qubit."""
        return self.amplitudes.reshape((2,) * self.num_qubits)

    def kron(self, other: "StateVector") -> "StateVector":
        """Tensor product with ``other`` appended after this register."""
        return StateVector(
            self.num_qubits + other.num_qubits,
            np.kron(self.amplitudes, other.amplitudes),
        )

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def __repr__(self) -> str:
        terms = []
        for index, amp in enumerate(self.amplitudes):
            if abs(amp) > TOLERANCE:
                bits = format(index, f"0{self.num_qubits}b")
                terms.append(f"({amp.real:+.4f}{amp.imag:+.4f}j)|{bits}>")
        return "StateVector(" + " ".join(terms) + ")"


@dataclass(frozen=True, eq=False)
class MeasurementOutcome:
    """Result of a projective measurement.

    ``code`` is a PauliCode for Bell outcomes and a bit for Z/X outcomes.
    ``remainder`` is the post-measurement state of the unmeasured qubits, or
    None when every qubit was measured.
    """

    code: Union[PauliCode, int]
    collapsed: StateVector
    remainder: Optional[StateVector]
    probability: float


def make_state(label: str) -> StateVector:
    """Build one of |0>, |1>, |+>, |->, phi+, phi-, psi+, psi-."""
    key = _LABEL_ALIASES.get(label, label)
    if key in _SINGLE_STATES:
        return StateVector(1, _SINGLE_STATES[key])
    if key in _BELL_LABELS:
        return StateVector(2, BELL_STATES[_BELL_LABELS[key]])
    raise RejectedInputError(
        f"unknown state label {label!r}; expected one of {', '.join(STATE_LABELS)}"
    )


def _check_index(state: StateVector, index: int) -> None:
    if not 0 <= index < state.num_qubits:
        raise RejectedInputError(
            f"qubit index {index} out of range for {state.num_qubits} qubit(s)"
        )


def _apply_single(tensor: np.ndarray, matrix: np.ndarray, index: int) -> np.ndarray:
    moved = np.tensordot(matrix, tensor, axes=([1], [index]))
    return np.moveaxis(moved, 0, index)


def apply_matrix(state: StateVector, matrix: np.ndarray, qubit_index: int) -> StateVector:
    """Apply an arbitrary 2x2 matrix (assumed unitary) at ``qubit_index``."""
    _check_index(state, qubit_index)
    tensor = _apply_single(state.tensor(), matrix, qubit_index)
    return StateVector(state.num_qubits, tensor.reshape(-1))


def apply_pauli(state: StateVector, code: PauliCode, qubit_index: int) -> StateVector:
    """Apply U_code at ``qubit_index``."""
    return apply_matrix(state, PAULI_MATRICES[PauliCode(code)], qubit_index)


def unitarity_deviation(matrix: np.ndarray) -> float:
    """Frobenius norm of ``M M^dagger - I``."""
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        return math.inf
    product = matrix @ matrix.conj().T
    return float(np.linalg.norm(product - np.eye(matrix.shape[0])))


def check_unitary(matrix: np.ndarray, dim: int = 4) -> np.ndarray:
    """Return ``matrix`` as a complex array or raise if it is not unitary."""
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.shape != (dim, dim):
        raise RejectedInputError(f"expected a {dim}x{dim} matrix, got {matrix.shape}")
    deviation = unitarity_deviation(matrix)
    if deviation > TOLERANCE:
        raise RejectedInputError(
            f"matrix is not unitary (||U U^dagger - I|| = {deviation:.3e})"
        )
    return matrix


def apply_unitary(
    state: StateVector, matrix: np.ndarray, qubit_pair: Tuple[int, int]
) -> StateVector:
    """Apply a 4x4 unitary to the ordered pair ``qubit_pair``."""
    matrix = check_unitary(matrix)
    first, second = qubit_pair
    _check_index(state, first)
    _check_index(state, second)
    if first == second:
        raise RejectedInputError("qubit pair indices must be distinct")
    gate = matrix.reshape(2, 2, 2, 2)
    moved = np.tensordot(gate, state.tensor(), axes=([2, 3], [first, second]))
    moved = np.moveaxis(moved, [0, 1], [first, second])
    return StateVector(state.num_qubits, moved.reshape(-1))


def _local_states(basis: BasisKind) -> List[Tuple[Union[PauliCode, int], np.ndarray]]:
    if basis is BasisKind.Z:
        return [(0, _SINGLE_STATES["0"]), (1, _SINGLE_STATES["1"])]
    if basis is BasisKind.X:
        return [(0, _SINGLE_STATES["+"]), (1, _SINGLE_STATES["-"])]
    return [(code, vec.reshape(2, 2)) for code, vec in BELL_STATES.items()]


def _branches(
    state: StateVector, basis: BasisKind, indices: Sequence[int]
) -> List[Tuple[Union[PauliCode, int], np.ndarray, np.ndarray]]:
    """Per outcome: (code, local measured state, unnormalized remainder)."""
    indices = tuple(int(i) for i in indices)
    arity = 2 if basis is BasisKind.BELL else 1
    if len(indices) != arity:
        raise RejectedInputError(
            f"{basis.value} measurement takes {arity} qubit index(es), "
            f"got {len(indices)}"
        )
    for index in indices:
        _check_index(state, index)
    if len(set(indices)) != len(indices):
        raise RejectedInputError("Bell measurement needs two distinct qubits")
    tensor = state.tensor()
    branches = []
    for code, local in _local_states(basis):
        rest = np.tensordot(local.conj(), tensor, axes=(list(range(arity)), indices))
        branches.append((code, local, rest))
    return branches


def outcome_probabilities(
    state: StateVector, basis: BasisKind, indices: Sequence[int]
) -> Dict[Union[PauliCode, int], float]:
    """Exact Born-rule distribution of a measurement."""
    return {
        code: float(np.vdot(rest, rest).real)
        for code, _, rest in _branches(state, basis, indices)
    }


def sample_index(probabilities: Sequence[float], rng: np.random.Generator) -> int:
    """Draw an index from a (possibly slightly unnormalized) distribution."""
    cumulative = np.cumsum(probabilities)
    total = cumulative[-1]
    if total <= 0.0:
        raise RejectedInputError("cannot sample from an all-zero distribution")
    draw = rng.random() * total
    index = int(np.searchsorted(cumulative, draw, side="right"))
    return min(index, len(cumulative) - 1)


def measure(
    state: StateVector,
    basis: BasisKind,
    indices: Sequence[int],
    rng: np.random.Generator,
) -> MeasurementOutcome:
    """Projective measurement with Born-rule sampling."""
    branches = _branches(state, basis, indices)
    probs = [float(np.vdot(rest, rest).real) for _, _, rest in branches]
    choice = sample_index(probs, rng)
    code, local, rest = branches[choice]
    rest = rest / math.sqrt(probs[choice])

    measured = tuple(int(i) for i in indices)
    joint = np.multiply.outer(local, rest)
    collapsed = np.moveaxis(joint, list(range(len(measured))), list(measured))
    remainder = None
    if state.num_qubits > len(measured):
        remainder = StateVector(state.num_qubits - len(measured), rest.reshape(-1))
    return MeasurementOutcome(
        code=code,
        collapsed=StateVector(state.num_qubits, collapsed.reshape(-1)),
        remainder=remainder,
        probability=probs[choice] / sum(probs),
    )


def compose_codes(a: PauliCode, b: PauliCode) -> PauliCode:
    """Code of U_a U_b up to global phase."""
    return PauliCode(int(a) ^ int(b))


def eve_decomposition(
    matrix: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Ancilla components (E00, E01, E10, E11) of a photon-ancilla unitary.

    The photon is qubit 0 and the ancilla qubit 1, prepared in ``|0>``:
    ``U|x>|0> = |0>|E_x0> + |1>|E_x1>``.
    """
    matrix = check_unitary(matrix)
    components = []
    for photon_in in (0, 1):
        column = matrix[:, 2 * photon_in]
        for photon_out in (0, 1):
            components.append(column[2 * photon_out : 2 * photon_out + 2].copy())
    e00, e01, e10, e11 = components
    return e00, e01, e10, e11


def _as_vector(value: Union[StateVector, np.ndarray, Sequence[complex]]) -> np.ndarray:
    if isinstance(value, StateVector):
        return value.amplitudes
    return np.asarray(value, dtype=complex).reshape(-1)


def overlap(
    a: Union[StateVector, np.ndarray, Sequence[complex]],
    b: Union[StateVector, np.ndarray, Sequence[complex]],
) -> complex:
    """Inner product <a|b>."""
    left, right = _as_vector(a), _as_vector(b)
    if left.shape != right.shape:
        raise RejectedInputError(
            f"dimension mismatch: {left.shape[0]} vs {right.shape[0]}"
        )
    return complex(np.vdot(left, right))


def equal_up_to_phase(a: StateVector, b: StateVector, tol: float = TOLERANCE) -> bool:
    if a.num_qubits != b.num_qubits:
        return False
    return abs(abs(overlap(a, b)) - 1.0) < tol


def random_unitary(rng: np.random.Generator, dim: int = 4) -> np.ndarray:
    """Haar-distributed unitary from the QR of a complex Gaussian matrix."""
    gaussian = (
        rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    ) * _SQRT_HALF
    q, r = np.linalg.qr(gaussian)
    diagonal = np.diag(r)
    return q * (diagonal / np.abs(diagonal))


def zero_disturbance_unitary(rng: np.random.Generator) -> np.ndarray:
    """Random photon-ancilla unitary with E01 = E10 = 0 and E00 = E11.

    ``|x>|0> -> |x>|e>`` for a random ancilla state ``|e>``; what happens to
    an ancilla starting in ``|1>`` may depend on x by a phase.
    """
    ancilla = random_unitary(rng, 2)
    phase = np.exp(2j * math.pi * rng.random())
    twisted = ancilla @ np.diag([1.0, phase])
    projector0 = np.diag([1.0, 0.0]).astype(complex)
    projector1 = np.diag([0.0, 1.0]).astype(complex)
    return np.kron(projector0, ancilla) + np.kron(projector1, twisted)
