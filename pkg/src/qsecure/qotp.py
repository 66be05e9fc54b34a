"""Basis encoding, QRNG keys and quantum one-time-pad encryption.

A record is quantized into a bitstring, basis-encoded as ``|bits>`` and padded
with ``X^alpha Z^beta`` under a fresh key drawn from a simulated QRNG. Keys
live in a :class:`KeyLedger` and are never written next to ciphertext.
"""
from __future__ import annotations

import json
import math
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .quantum import (
    MAX_QUBITS,
    DensityMatrix,
    H,
    PauliString,
    QuantumError,
    StateVector,
    all_pauli_strings,
    apply_circuit,
    apply_pauli_string,
    apply_pauli_string_adjoint,
    bits_to_index,
    index_to_bits,
    mix_ensemble,
    sample_outcomes,
)

QRNG_BATCH_QUBITS = 8
EXHAUSTIVE_MAX_QUBITS = 4


class KeyMismatchError(QuantumError):
    """Key does not fit the payload it is applied to."""


@dataclass(frozen=True)
class EncodedRecord:
    record_id: str
    bits: str
    state: StateVector


def basis_encode_record(bits: str, record_id: str | None = None) -> EncodedRecord:
    """Encode ``bits`` as the basis state ``|bits>``.

    Each 1 bit is an X flip on a qubit prepared in ``|0>``, which is what a
    CNOT controlled by a literal ``|1>`` does without spending an ancilla.
    """
    if not bits:
        raise QuantumError("cannot encode an empty bitstring")
    if len(bits) > MAX_QUBITS:
        raise QuantumError(f"record has {len(bits)} bits, limit is {MAX_QUBITS}")
    if set(bits) - {"0", "1"}:
        raise QuantumError(f"not a bitstring: {bits!r}")
    state = StateVector.from_bits(bits)
    return EncodedRecord(record_id=record_id or bits, bits=bits, state=state)


@dataclass(frozen=True)
class DatasetSuperposition:
    d: int
    states: tuple[str, ...]
    state: StateVector


def superpose_dataset(bitstrings) -> DatasetSuperposition:
    """Uniform superposition ``(1/sqrt(d)) sum_i |x_i>`` of distinct rows."""
    rows = list(bitstrings)
    if not rows:
        raise QuantumError("dataset is empty")
    n = len(rows[0])
    if any(len(r) != n for r in rows):
        raise QuantumError("bitstrings differ in length")
    if len(set(rows)) != len(rows):
        raise QuantumError("duplicate bitstring in dataset")
    amps = np.zeros(1 << n, dtype=complex)
    for r in rows:
        amps[bits_to_index(r)] = 1.0
    amps /= math.sqrt(len(rows))
    return DatasetSuperposition(d=len(rows), states=tuple(rows), state=StateVector(amps))


def qrng_generate(n_bits: int, seed: int, batch_qubits: int = QRNG_BATCH_QUBITS) -> str:
    """Random bits from measuring ``H^{(x)k}|0...0>`` once per batch of ``k`` bits."""
    if n_bits < 1:
        raise QuantumError("n_bits must be >= 1")
    k = min(batch_qubits, n_bits)
    plus = apply_circuit(StateVector.zero(k), [H(q) for q in range(k)])
    shots = -(-n_bits // k)
    outcomes = sample_outcomes(plus, shots, np.random.default_rng(seed))
    return "".join(outcomes)[:n_bits]


@dataclass(frozen=True)
class PaddingKey:
    alpha: str
    beta: str
    origin: str = "explicit"
    key_id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])
    seed: int | None = None

    def __post_init__(self) -> None:
        if len(self.alpha) != len(self.beta):
            raise KeyMismatchError("alpha and beta must have equal length")
        if set(self.alpha + self.beta) - {"0", "1"}:
            raise KeyMismatchError("key halves must be bitstrings")
        if self.origin not in ("qrng", "explicit"):
            raise KeyMismatchError(f"unknown key origin {self.origin!r}")

    @property
    def n_qubits(self) -> int:
        return len(self.alpha)

    @property
    def pauli(self) -> PauliString:
        return PauliString(self.alpha, self.beta)

    def to_dict(self) -> dict:
        return {
            "key_id": self.key_id,
            "alpha": self.alpha,
            "beta": self.beta,
            "origin": self.origin,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> PaddingKey:
        return cls(
            alpha=data["alpha"],
            beta=data["beta"],
            origin=data.get("origin", "explicit"),
            key_id=data["key_id"],
            seed=data.get("seed"),
        )


def generate_key(n_qubits: int, seed: int, key_id: str | None = None) -> PaddingKey:
    bits = qrng_generate(2 * n_qubits, seed)
    return PaddingKey(
        alpha=bits[:n_qubits],
        beta=bits[n_qubits:],
        origin="qrng",
        key_id=key_id or f"k{seed:x}-{n_qubits}",
        seed=seed,
    )


@dataclass(frozen=True)
class CipherState:
    state: StateVector
    key_id: str


def _payload_state(record: EncodedRecord | StateVector) -> StateVector:
    return record.state if isinstance(record, EncodedRecord) else record


def encrypt(record: EncodedRecord | StateVector, key: PaddingKey) -> CipherState:
    state = _payload_state(record)
    if key.n_qubits != state.n_qubits:
        raise KeyMismatchError(f"key covers {key.n_qubits} qubits, payload has {state.n_qubits}")
    return CipherState(state=apply_pauli_string(state, key.pauli), key_id=key.key_id)


def decrypt(cipher: CipherState, key: PaddingKey) -> StateVector:
    if key.n_qubits != cipher.state.n_qubits:
        raise KeyMismatchError(f"key covers {key.n_qubits} qubits, cipher has {cipher.state.n_qubits}")
    return apply_pauli_string_adjoint(cipher.state, key.pauli)


def pad_bits(bits: str, key: PaddingKey) -> str:
    """Ciphertext-at-rest for a basis payload: the Z half only adds a phase."""
    if key.n_qubits != len(bits):
        raise KeyMismatchError(f"key covers {key.n_qubits} qubits, payload has {len(bits)}")
    return "".join("1" if b != a else "0" for b, a in zip(bits, key.alpha))


@dataclass(frozen=True)
class SecrecyReport:
    n_qubits: int
    keys_used: int
    average_state: DensityMatrix
    deviation: float

    def to_dict(self) -> dict:
        return {"n_qubits": self.n_qubits, "keys_used": self.keys_used, "deviation": self.deviation}


def verify_perfect_secrecy(
    state: StateVector | DensityMatrix,
    mode: str = "exhaustive",
    samples: int | None = None,
    seed: int = 0,
) -> SecrecyReport:
    """Average the padded state over the key ensemble and compare with ``I/2^n``.

    ``mode="sampled"`` draws ``samples`` distinct keys uniformly; keys are taken
    as a prefix of one seeded permutation, so larger ``samples`` nest smaller ones.
    """
    rho = state.density_matrix() if isinstance(state, StateVector) else state
    n = rho.n_qubits
    if mode == "exhaustive":
        if n > EXHAUSTIVE_MAX_QUBITS:
            raise QuantumError(f"exhaustive secrecy check is limited to n <= {EXHAUSTIVE_MAX_QUBITS}")
        keys = list(all_pauli_strings(n))
    elif mode == "sampled":
        total = 4**n
        if samples is None or not 1 <= samples <= total:
            raise QuantumError(f"samples must be in 1..{total}")
        order = np.random.default_rng(seed).permutation(total)[:samples]
        keys = [
            PauliString(index_to_bits(int(i) >> n, n), index_to_bits(int(i) & ((1 << n) - 1), n))
            for i in order
        ]
    else:
        raise QuantumError(f"unknown secrecy mode {mode!r}")

    p = 1.0 / len(keys)
    entries = []
    for key in keys:
        u = key.matrix()
        entries.append((p, DensityMatrix(u @ rho.matrix @ u.conj().T, check=False)))
    avg = mix_ensemble(entries)
    deviation = avg.distance(DensityMatrix.maximally_mixed(n))
    return SecrecyReport(n_qubits=n, keys_used=len(keys), average_state=avg, deviation=deviation)


class KeyLedger:
    """Keys by id, persisted as JSON lines; writes go through one lock."""

    def __init__(self) -> None:
        self._keys: dict[str, PaddingKey] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, key_id: str) -> bool:
        return key_id in self._keys

    def add(self, key: PaddingKey) -> None:
        with self._lock:
            if key.key_id in self._keys:
                raise KeyMismatchError(f"duplicate key id {key.key_id}")
            self._keys[key.key_id] = key

    def get(self, key_id: str) -> PaddingKey:
        try:
            return self._keys[key_id]
        except KeyError:
            raise KeyMismatchError(f"unknown key id {key_id}") from None

    def keys(self) -> list[PaddingKey]:
        return list(self._keys.values())

    def save(self, path: str | Path) -> None:
        with self._lock, open(path, "w", newline="\n") as fh:
            for key in self._keys.values():
                fh.write(json.dumps(key.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> KeyLedger:
        ledger = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    ledger.add(PaddingKey.from_dict(json.loads(line)))
        return ledger


@dataclass(frozen=True)
class CiphertextRow:
    """One stored ciphertext. ``payload`` is padded bits or a serialized state."""

    record_id: str
    n_qubits: int
    payload: str | dict
    key_id: str

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "n_qubits": self.n_qubits,
            "payload": self.payload,
            "key_id": self.key_id,
        }

    @classmethod
    def from_cipher(cls, record_id: str, cipher: CipherState) -> CiphertextRow:
        try:
            payload: str | dict = cipher.state.basis_bits()
        except QuantumError:
            payload = cipher.state.to_dict()
        return cls(record_id, cipher.state.n_qubits, payload, cipher.key_id)

    def cipher(self) -> CipherState:
        if isinstance(self.payload, str):
            state = StateVector.from_bits(self.payload)
        else:
            state = StateVector.from_dict(self.payload)
        return CipherState(state=state, key_id=self.key_id)


def write_ciphertexts(rows, path: str | Path) -> None:
    with open(path, "w", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row.to_dict(), sort_keys=True) + "\n")


def read_ciphertexts(path: str | Path) -> list[CiphertextRow]:
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                rows.append(CiphertextRow(d["record_id"], d["n_qubits"], d["payload"], d["key_id"]))
    return rows
