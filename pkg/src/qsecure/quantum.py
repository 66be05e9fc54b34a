"""Dense statevector and density-matrix simulation for small qubit registers.

Conventions used throughout the package:

- Qubit 0 is the leftmost character of a bitstring and the most significant bit
  of the basis index, so ``"101"`` is basis index 5 on three qubits.
- ``X^alpha Z^beta`` is the operator product; acting on a state, ``Z^beta`` is
  applied first.
- State equality ignores global phase.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from math import cos, sin, sqrt

import numpy as np

MAX_QUBITS = 12
ATOL = 1e-9

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / sqrt(2)


class QuantumError(ValueError):
    """Invalid quantum object or operation arguments."""


def _check_qubits(n: int) -> None:
    if not 1 <= n <= MAX_QUBITS:
        raise QuantumError(f"n_qubits must be in 1..{MAX_QUBITS}, got {n}")


def _n_from_dim(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if 1 << n != dim:
        raise QuantumError(f"dimension {dim} is not a power of two")
    return n


def bits_to_index(bits: str) -> int:
    return int(bits, 2)


def index_to_bits(index: int, n_qubits: int) -> str:
    return format(index, f"0{n_qubits}b")


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalized pure state on ``n_qubits`` qubits."""

    amplitudes: np.ndarray
    n_qubits: int = field(init=False)

    def __post_init__(self) -> None:
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        n = _n_from_dim(amps.size)
        _check_qubits(n)
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > ATOL:
            raise QuantumError(f"state is not normalized (|psi|^2 = {norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "n_qubits", n)

    @classmethod
    def zero(cls, n_qubits: int) -> StateVector:
        _check_qubits(n_qubits)
        amps = np.zeros(1 << n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(amps)

    @classmethod
    def from_bits(cls, bits: str) -> StateVector:
        if not bits or set(bits) - {"0", "1"}:
            raise QuantumError(f"not a bitstring: {bits!r}")
        _check_qubits(len(bits))
        amps = np.zeros(1 << len(bits), dtype=complex)
        amps[bits_to_index(bits)] = 1.0
        return cls(amps)

    @classmethod
    def normalized(cls, amplitudes) -> StateVector:
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise QuantumError("cannot normalize the zero vector")
        return cls(amps / norm)

    @classmethod
    def random(cls, n_qubits: int, rng: np.random.Generator) -> StateVector:
        """Haar-random pure state."""
        _check_qubits(n_qubits)
        dim = 1 << n_qubits
        return cls.normalized(rng.normal(size=dim) + 1j * rng.normal(size=dim))

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def density_matrix(self) -> DensityMatrix:
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))

    def overlap(self, other: StateVector) -> complex:
        _check_same_qubits(self.n_qubits, other.n_qubits)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def equiv(self, other: StateVector, atol: float = ATOL) -> bool:
        """Equality up to global phase."""
        if self.n_qubits != other.n_qubits:
            return False
        return abs(abs(self.overlap(other)) - 1.0) < atol

    def tensor(self, other: StateVector) -> StateVector:
        return StateVector(np.kron(self.amplitudes, other.amplitudes))

    def basis_bits(self, atol: float = ATOL) -> str:
        """Bitstring of a computational basis state (up to phase)."""
        probs = self.probabilities
        idx = int(np.argmax(probs))
        if abs(probs[idx] - 1.0) > atol:
            raise QuantumError("state is not a computational basis state")
        return index_to_bits(idx, self.n_qubits)

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "amplitudes": [[float(a.real), float(a.imag)] for a in self.amplitudes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> StateVector:
        amps = np.array([complex(re, im) for re, im in data["amplitudes"]])
        state = cls(amps)
        if state.n_qubits != data["n_qubits"]:
            raise QuantumError("n_qubits does not match amplitude count")
        return state


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, positive semidefinite, unit-trace operator."""

    matrix: np.ndarray
    n_qubits: int = field(init=False)
    check: bool = field(default=True, repr=False)

    def __post_init__(self) -> None:
        mat = np.array(self.matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise QuantumError(f"density matrix must be square, got shape {mat.shape}")
        n = _n_from_dim(mat.shape[0])
        _check_qubits(n)
        if self.check:
            if not np.allclose(mat, mat.conj().T, rtol=0, atol=ATOL):
                raise QuantumError("density matrix is not Hermitian")
            tr = np.trace(mat).real
            if abs(tr - 1.0) > ATOL:
                raise QuantumError(f"density matrix trace is {tr!r}, expected 1")
            if np.linalg.eigvalsh(mat).min() < -ATOL:
                raise QuantumError("density matrix has a negative eigenvalue")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "n_qubits", n)

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> DensityMatrix:
        dim = 1 << n_qubits
        return cls(np.eye(dim, dtype=complex) / dim)

    @classmethod
    def random(cls, n_qubits: int, rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
        """Random mixed state from a Ginibre matrix."""
        dim = 1 << n_qubits
        rank = dim if rank is None else rank
        g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
        rho = g @ g.conj().T
        return cls(rho / np.trace(rho).real)

    def tensor(self, other: DensityMatrix) -> DensityMatrix:
        return DensityMatrix(np.kron(self.matrix, other.matrix))

    def evolve(self, unitary: np.ndarray) -> DensityMatrix:
        return DensityMatrix(unitary @ self.matrix @ unitary.conj().T, check=False)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def is_valid(self, atol: float = ATOL) -> bool:
        m = self.matrix
        return (
            np.allclose(m, m.conj().T, rtol=0, atol=atol)
            and abs(np.trace(m).real - 1.0) <= atol
            and np.linalg.eigvalsh(m).min() >= -atol
        )

    def distance(self, other: DensityMatrix) -> float:
        """Frobenius distance."""
        return float(np.linalg.norm(self.matrix - other.matrix))


def _check_same_qubits(a: int, b: int) -> None:
    if a != b:
        raise QuantumError(f"dimension mismatch: {a} vs {b} qubits")


class GateKind(enum.Enum):
    X = "X"
    Z = "Z"
    H = "H"
    I = "I"  # noqa: E741
    CNOT = "CNOT"
    RX = "RX"
    RY = "RY"
    RZ = "RZ"


_ROTATIONS = {GateKind.RX, GateKind.RY, GateKind.RZ}
_FIXED = {GateKind.X: _X, GateKind.Z: _Z, GateKind.H: _H, GateKind.I: _I2}


def _rotation(kind: GateKind, theta: float) -> np.ndarray:
    c, s = cos(theta / 2), sin(theta / 2)
    if kind is GateKind.RX:
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if kind is GateKind.RY:
        return np.array([[c, -s], [s, c]], dtype=complex)
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=complex)


@dataclass(frozen=True)
class Gate:
    kind: GateKind
    target: int
    control: int | None = None
    angle: float | None = None

    def __post_init__(self) -> None:
        kind = GateKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in _ROTATIONS and self.angle is None:
            raise QuantumError(f"{kind.value} gate requires an angle")
        if kind is GateKind.CNOT:
            if self.control is None:
                raise QuantumError("CNOT requires a control qubit")
            if self.control == self.target:
                raise QuantumError("CNOT control and target must differ")

    @property
    def qubits(self) -> tuple[int, ...]:
        if self.kind is GateKind.CNOT:
            return (self.control, self.target)
        return (self.target,)

    def local_matrix(self) -> np.ndarray:
        """2x2 matrix for one-qubit kinds, 4x4 (control, target) for CNOT."""
        if self.kind is GateKind.CNOT:
            return np.array(
                [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
            )
        if self.kind in _ROTATIONS:
            return _rotation(self.kind, float(self.angle))
        return _FIXED[self.kind]

    def matrix(self, n_qubits: int) -> np.ndarray:
        """Full 2^n x 2^n unitary."""
        return apply_gate_array(np.eye(1 << n_qubits, dtype=complex), self, n_qubits)


# Convenience constructors, mirroring the usual circuit vocabulary.
def X(q: int) -> Gate:
    return Gate(GateKind.X, q)


def Z(q: int) -> Gate:
    return Gate(GateKind.Z, q)


def H(q: int) -> Gate:
    return Gate(GateKind.H, q)


def CNOT(control: int, target: int) -> Gate:
    return Gate(GateKind.CNOT, target, control=control)


def RX(q: int, theta: float) -> Gate:
    return Gate(GateKind.RX, q, angle=theta)


def RY(q: int, theta: float) -> Gate:
    return Gate(GateKind.RY, q, angle=theta)


def RZ(q: int, theta: float) -> Gate:
    return Gate(GateKind.RZ, q, angle=theta)


def _apply_local(tensor: np.ndarray, mat: np.ndarray, qubits: tuple[int, ...], n: int) -> np.ndarray:
    """Contract a k-qubit matrix into axes ``qubits`` of a (2,)*n + batch tensor."""
    k = len(qubits)
    op = mat.reshape((2,) * (2 * k))
    out = np.tensordot(op, tensor, axes=(list(range(k, 2 * k)), list(qubits)))
    # tensordot puts the new axes first; move them back into place
    return np.moveaxis(out, list(range(k)), list(qubits))


def apply_gate_array(array: np.ndarray, gate: Gate, n_qubits: int) -> np.ndarray:
    """Left-multiply ``array`` (shape (2^n,) or (2^n, m)) by the gate's unitary."""
    for q in gate.qubits:
        if not 0 <= q < n_qubits:
            raise QuantumError(f"qubit index {q} out of range for {n_qubits} qubits")
    batch = array.shape[1:]
    tensor = array.reshape((2,) * n_qubits + batch)
    out = _apply_local(tensor, gate.local_matrix(), gate.qubits, n_qubits)
    return out.reshape(array.shape)


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    return StateVector(apply_gate_array(state.amplitudes, gate, state.n_qubits))


def apply_circuit(state: StateVector, gates) -> StateVector:
    amps = state.amplitudes
    for gate in gates:
        amps = apply_gate_array(amps, gate, state.n_qubits)
    return StateVector(amps)


def circuit_unitary(gates, n_qubits: int) -> np.ndarray:
    u = np.eye(1 << n_qubits, dtype=complex)
    for gate in gates:
        u = apply_gate_array(u, gate, n_qubits)
    return u


def _check_bits(bits: str, n: int | None, name: str) -> None:
    if set(bits) - {"0", "1"}:
        raise QuantumError(f"{name} is not a bitstring: {bits!r}")
    if n is not None and len(bits) != n:
        raise QuantumError(f"{name} has length {len(bits)}, expected {n}")


@dataclass(frozen=True)
class PauliString:
    """The operator ``X^alpha Z^beta`` on ``len(alpha)`` qubits."""

    alpha: str
    beta: str

    def __post_init__(self) -> None:
        _check_bits(self.alpha, None, "alpha")
        _check_bits(self.beta, len(self.alpha), "beta")

    @property
    def n_qubits(self) -> int:
        return len(self.alpha)

    @classmethod
    def identity(cls, n_qubits: int) -> PauliString:
        return cls("0" * n_qubits, "0" * n_qubits)

    def matrix(self) -> np.ndarray:
        out = np.ones((1, 1), dtype=complex)
        for a, b in zip(self.alpha, self.beta):
            local = (_X if a == "1" else _I2) @ (_Z if b == "1" else _I2)
            out = np.kron(out, local)
        return out

    def z_gates(self) -> list[Gate]:
        return [Z(q) for q, b in enumerate(self.beta) if b == "1"]

    def x_gates(self) -> list[Gate]:
        return [X(q) for q, a in enumerate(self.alpha) if a == "1"]


def all_pauli_strings(n_qubits: int):
    """All 4^n pairs (alpha, beta), alpha-major."""
    for a in range(1 << n_qubits):
        for b in range(1 << n_qubits):
            yield PauliString(index_to_bits(a, n_qubits), index_to_bits(b, n_qubits))


def apply_pauli_string(state: StateVector, p: PauliString) -> StateVector:
    """Return ``X^alpha Z^beta |state>``."""
    if p.n_qubits != state.n_qubits:
        raise QuantumError(f"pauli string has {p.n_qubits} qubits, state has {state.n_qubits}")
    return apply_circuit(state, p.z_gates() + p.x_gates())


def apply_pauli_string_adjoint(state: StateVector, p: PauliString) -> StateVector:
    """Return ``(X^alpha Z^beta)^dagger |state> = Z^beta X^alpha |state>``."""
    if p.n_qubits != state.n_qubits:
        raise QuantumError(f"pauli string has {p.n_qubits} qubits, state has {state.n_qubits}")
    return apply_circuit(state, p.x_gates() + p.z_gates())


@dataclass(frozen=True)
class MeasurementRecord:
    shots: int
    counts: dict[str, int]

    def frequencies(self) -> dict[str, float]:
        return {k: v / self.shots for k, v in self.counts.items()}


def sample_outcomes(state: StateVector, shots: int, rng: np.random.Generator) -> list[str]:
    """Ordered computational-basis outcomes, one per shot."""
    if shots < 1:
        raise QuantumError("shots must be >= 1")
    probs = state.probabilities
    idx = rng.choice(probs.size, size=shots, p=probs / probs.sum())
    return [index_to_bits(int(i), state.n_qubits) for i in idx]


def measure(state: StateVector, shots: int, seed: int) -> MeasurementRecord:
    if shots < 1:
        raise QuantumError("shots must be >= 1")
    rng = np.random.default_rng(seed)
    probs = state.probabilities
    draws = rng.multinomial(shots, probs / probs.sum())
    counts = {
        index_to_bits(i, state.n_qubits): int(c) for i, c in enumerate(draws) if c > 0
    }
    return MeasurementRecord(shots=shots, counts=counts)


def mix_ensemble(entries) -> DensityMatrix:
    """Convex combination of ``(probability, DensityMatrix)`` pairs."""
    entries = list(entries)
    if not entries:
        raise QuantumError("empty ensemble")
    probs = np.array([p for p, _ in entries], dtype=float)
    if (probs < 0).any():
        raise QuantumError("negative ensemble probability")
    if abs(probs.sum() - 1.0) > 1e-6:
        raise QuantumError(f"ensemble probabilities sum to {probs.sum()!r}")
    n = entries[0][1].n_qubits
    acc = np.zeros_like(entries[0][1].matrix)
    for p, rho in entries:
        _check_same_qubits(n, rho.n_qubits)
        acc = acc + p * rho.matrix
    return DensityMatrix(acc)


def partial_trace(rho: DensityMatrix, traced_qubits) -> DensityMatrix:
    n = rho.n_qubits
    traced = sorted(set(int(q) for q in traced_qubits))
    for q in traced:
        if not 0 <= q < n:
            raise QuantumError(f"qubit index {q} out of range for {n} qubits")
    if len(traced) >= n:
        raise QuantumError("cannot trace out every qubit")
    if not traced:
        return rho
    kept = [q for q in range(n) if q not in traced]
    t = rho.matrix.reshape((2,) * (2 * n))
    # bring (kept rows, traced rows, kept cols, traced cols) together
    perm = kept + traced + [n + q for q in kept] + [n + q for q in traced]
    dk, dt = 1 << len(kept), 1 << len(traced)
    t = t.transpose(perm).reshape(dk, dt, dk, dt)
    return DensityMatrix(np.einsum("ajbj->ab", t), check=False)


def pauli_coefficient(rho: DensityMatrix, p: PauliString) -> complex:
    """``Tr(rho Z^beta X^alpha) / 2^n``, the coefficient of ``X^alpha Z^beta``."""
    _check_same_qubits(rho.n_qubits, p.n_qubits)
    adjoint = p.matrix().conj().T
    return complex(np.trace(rho.matrix @ adjoint)) / (1 << rho.n_qubits)


def fidelity(target: StateVector, rho: DensityMatrix) -> float:
    """``<target| rho |target>`` for a pure target."""
    _check_same_qubits(target.n_qubits, rho.n_qubits)
    v = target.amplitudes
    val = complex(np.vdot(v, rho.matrix @ v))
    if abs(val.imag) > 1e-10:
        raise QuantumError(f"fidelity has imaginary residue {val.imag!r}")
    return float(min(max(val.real, 0.0), 1.0))
