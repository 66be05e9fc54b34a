"""Dissipative quantum feed-forward neural network.

Layer ``l`` acts on the ``m_{l-1}`` output qubits of the previous layer plus
``m_l`` fresh qubits in ``|0>``, applies a parameterized unitary, and traces the
previous-layer qubits away::

    rho_l = tr_prev( U_l (rho_{l-1} (x) |0..0><0..0|) U_l^dagger )

Training maximizes the mean output fidelity with target states; the reported
loss is ``1 - fidelity``. Gradients are central finite differences and the
optimizer is Adam with bias correction.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .quantum import (
    CNOT,
    MAX_QUBITS,
    RY,
    RZ,
    DensityMatrix,
    StateVector,
    circuit_unitary,
    fidelity,
)
from .scoring import Decision

QUBIT_MODES = {"2Q": (1, 1), "4Q": (2, 2)}
DEFAULT_DEPTH = 2
ROTATIONS_PER_QUBIT = 2  # RY then RZ


class QfnnError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class QfnnArchitecture:
    layer_widths: tuple[int, ...]

    def __post_init__(self) -> None:
        widths = tuple(int(m) for m in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise QfnnError("architecture needs an input width and at least one layer")
        if any(m < 1 for m in widths):
            raise QfnnError("every layer needs at least one qubit")
        for a, b in zip(widths, widths[1:]):
            if a + b > MAX_QUBITS:
                raise QfnnError(f"layer on {a}+{b} qubits exceeds the {MAX_QUBITS}-qubit cap")

    @classmethod
    def from_mode(cls, mode: str) -> QfnnArchitecture:
        try:
            return cls(QUBIT_MODES[mode])
        except KeyError:
            raise QfnnError(f"unknown qubit mode {mode!r}; expected one of {sorted(QUBIT_MODES)}") from None

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def n_in(self) -> int:
        return self.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.layer_widths[-1]

    def layer_qubits(self, layer: int) -> int:
        return self.layer_widths[layer] + self.layer_widths[layer + 1]


def layer_param_count(n_qubits: int, depth: int = DEFAULT_DEPTH) -> int:
    return ROTATIONS_PER_QUBIT * n_qubits * (depth + 1)


def layer_gates(params: np.ndarray, n_qubits: int, depth: int = DEFAULT_DEPTH) -> list:
    """Gate list for one layer unitary.

    ``depth`` blocks of (RY, RZ on every qubit; CNOT ladder 0->1->...->k-1),
    closed by a final RY, RZ pair on every qubit. With ``depth=1`` this is the
    plain rotation / ladder / rotation template.
    """
    if len(params) != layer_param_count(n_qubits, depth):
        raise QfnnError(f"layer on {n_qubits} qubits needs {layer_param_count(n_qubits, depth)} parameters")
    p = np.asarray(params, dtype=float).reshape(depth + 1, ROTATIONS_PER_QUBIT, n_qubits)
    gates = []
    for block in range(depth + 1):
        for q in range(n_qubits):
            gates.append(RY(q, p[block, 0, q]))
            gates.append(RZ(q, p[block, 1, q]))
        if block < depth:
            gates.extend(CNOT(q, q + 1) for q in range(n_qubits - 1))
    return gates


@dataclass(frozen=True, eq=False)
class QfnnNetwork:
    architecture: QfnnArchitecture
    parameters: np.ndarray
    depth: int = DEFAULT_DEPTH
    seed: int | None = None

    def __post_init__(self) -> None:
        params = np.array(self.parameters, dtype=float).reshape(-1)
        if params.size != self.n_parameters:
            raise QfnnError(f"expected {self.n_parameters} parameters, got {params.size}")
        params.setflags(write=False)
        object.__setattr__(self, "parameters", params)

    @property
    def n_parameters(self) -> int:
        arch = self.architecture
        return sum(layer_param_count(arch.layer_qubits(l), self.depth) for l in range(arch.n_layers))

    @property
    def gate_template_version(self) -> str:
        return f"ry-rz/cnot-ladder/depth-{self.depth}/v1"

    def layer_slices(self) -> list[slice]:
        out, start = [], 0
        for l in range(self.architecture.n_layers):
            size = layer_param_count(self.architecture.layer_qubits(l), self.depth)
            out.append(slice(start, start + size))
            start += size
        return out

    def layer_unitary(self, layer: int, params: np.ndarray | None = None) -> np.ndarray:
        k = self.architecture.layer_qubits(layer)
        block = self.parameters[self.layer_slices()[layer]] if params is None else params
        return circuit_unitary(layer_gates(block, k, self.depth), k)

    def layer_unitaries(self) -> list[np.ndarray]:
        return [self.layer_unitary(l) for l in range(self.architecture.n_layers)]

    def with_parameters(self, params: np.ndarray) -> QfnnNetwork:
        return replace(self, parameters=params)

    @classmethod
    def initialize(
        cls,
        architecture: QfnnArchitecture | str,
        seed: int,
        depth: int = DEFAULT_DEPTH,
        scale: float = math.pi,
    ) -> QfnnNetwork:
        """Parameters drawn uniformly from ``[-scale, scale]``."""
        if isinstance(architecture, str):
            architecture = QfnnArchitecture.from_mode(architecture)
        proto = cls(architecture, np.zeros(cls._count(architecture, depth)), depth, seed)
        rng = np.random.default_rng(seed)
        return proto.with_parameters(rng.uniform(-scale, scale, size=proto.n_parameters))

    @staticmethod
    def _count(arch: QfnnArchitecture, depth: int) -> int:
        return sum(layer_param_count(arch.layer_qubits(l), depth) for l in range(arch.n_layers))

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.architecture.layer_widths),
            "parameters": [float(x) for x in self.parameters],
            "gate_template_version": self.gate_template_version,
            "depth": self.depth,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> QfnnNetwork:
        depth = int(d.get("depth", DEFAULT_DEPTH))
        net = cls(QfnnArchitecture(tuple(d["layer_widths"])), np.array(d["parameters"]), depth, d.get("seed"))
        version = d.get("gate_template_version")
        if version is not None and version != net.gate_template_version:
            raise QfnnError(f"model uses gate template {version!r}, this build provides {net.gate_template_version!r}")
        return net

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> QfnnNetwork:
        return cls.from_dict(json.loads(Path(path).read_text()))


def apply_layer_channel(rho: np.ndarray, unitary: np.ndarray, m_prev: int, m_out: int) -> np.ndarray:
    """One dissipative layer on a raw density-matrix array."""
    fresh = np.zeros((1 << m_out, 1 << m_out), dtype=complex)
    fresh[0, 0] = 1.0
    joint = unitary @ np.kron(rho, fresh) @ unitary.conj().T
    d_prev, d_out = 1 << m_prev, 1 << m_out
    return np.einsum("iaib->ab", joint.reshape(d_prev, d_out, d_prev, d_out))


def feedforward_unitaries(unitaries, widths, rho_in: np.ndarray) -> list[np.ndarray]:
    states, rho = [], rho_in
    for l, u in enumerate(unitaries):
        rho = apply_layer_channel(rho, u, widths[l], widths[l + 1])
        states.append(rho)
    return states


def feedforward(network: QfnnNetwork, rho_in: DensityMatrix | StateVector) -> list[DensityMatrix]:
    """Per-layer output states, last entry is the network output."""
    if isinstance(rho_in, StateVector):
        rho_in = rho_in.density_matrix()
    arch = network.architecture
    if rho_in.n_qubits != arch.n_in:
        raise QfnnError(f"network input has {arch.n_in} qubits, state has {rho_in.n_qubits}")
    outs = feedforward_unitaries(network.layer_unitaries(), arch.layer_widths, rho_in.matrix)
    return [DensityMatrix(m, check=False) for m in outs]


@dataclass(frozen=True)
class TrainingPair:
    input_state: StateVector
    target_state: StateVector


class _Batch:
    """Training pairs grouped by identical input; targets folded into projectors.

    The summed fidelity over a group is ``Tr(rho_out P)`` with ``P`` the sum of
    the group's target projectors, so each distinct input is simulated once.
    """

    def __init__(self, data, arch: QfnnArchitecture) -> None:
        data = list(data)
        if not data:
            raise QfnnError("training data is empty")
        groups: dict[bytes, list] = {}
        for pair in data:
            if pair.input_state.n_qubits != arch.n_in or pair.target_state.n_qubits != arch.n_out:
                raise QfnnError("training pair does not match the architecture widths")
            key = pair.input_state.amplitudes.tobytes()
            if key not in groups:
                groups[key] = [pair.input_state.density_matrix().matrix, 0]
            t = pair.target_state.amplitudes
            groups[key][1] = groups[key][1] + np.outer(t, t.conj())
        self.inputs = [g[0] for g in groups.values()]
        self.projectors = [g[1] for g in groups.values()]
        self.size = len(data)
        self.widths = arch.layer_widths

    def mean_fidelity(self, unitaries) -> float:
        total = 0.0
        for rho, proj in zip(self.inputs, self.projectors):
            out = feedforward_unitaries(unitaries, self.widths, rho)[-1]
            total += float(np.real(np.trace(out @ proj)))
        return total / self.size


def cost(network: QfnnNetwork, data) -> float:
    """Mean fidelity between network outputs and targets, in [0, 1]."""
    batch = _Batch(data, network.architecture)
    return float(min(max(batch.mean_fidelity(network.layer_unitaries()), 0.0), 1.0))


def loss(network: QfnnNetwork, data) -> float:
    return 1.0 - cost(network, data)


def _gradient(network: QfnnNetwork, batch: _Batch, fd_step: float) -> np.ndarray:
    params = network.parameters
    base = network.layer_unitaries()
    grad = np.zeros_like(params)
    for l, sl in enumerate(network.layer_slices()):
        block = params[sl].copy()
        for j in range(block.size):
            vals = []
            for sign in (1.0, -1.0):
                shifted = block.copy()
                shifted[j] += sign * fd_step
                us = list(base)
                us[l] = network.layer_unitary(l, shifted)
                vals.append(1.0 - batch.mean_fidelity(us))
            grad[sl.start + j] = (vals[0] - vals[1]) / (2 * fd_step)
    return grad


def gradient(network: QfnnNetwork, data, fd_step: float = 1e-2) -> np.ndarray:
    """Central finite-difference gradient of the loss."""
    if fd_step <= 0:
        raise QfnnError("fd_step must be positive")
    return _gradient(network, _Batch(data, network.architecture), fd_step)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 100
    learning_rate: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    fd_step: float = 1e-2
    seed: int = 0
    qubit_mode: str = "4Q"
    depth: int = DEFAULT_DEPTH

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise QfnnError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise QfnnError("learning_rate must be non-negative")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise QfnnError("Adam betas must lie in (0, 1)")
        if self.fd_step <= 0:
            raise QfnnError("fd_step must be positive")
        if self.qubit_mode not in QUBIT_MODES:
            raise QfnnError(f"unknown qubit mode {self.qubit_mode!r}")
        if self.depth < 1:
            raise QfnnError("depth must be >= 1")

    def initial_network(self) -> QfnnNetwork:
        return QfnnNetwork.initialize(self.qubit_mode, self.seed, self.depth)


def train(network: QfnnNetwork, data, config: TrainingConfig) -> tuple[QfnnNetwork, list[float]]:
    """Full-batch Adam. ``loss_trace[e]`` is the loss at the start of epoch ``e``."""
    batch = _Batch(data, network.architecture)
    params = network.parameters.copy()
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    b1, b2 = config.adam_beta1, config.adam_beta2
    trace = []
    for epoch in range(1, config.epochs + 1):
        current = network.with_parameters(params)
        value = 1.0 - batch.mean_fidelity(current.layer_unitaries())
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value!r} at epoch {epoch}")
        trace.append(value)
        g = _gradient(current, batch, config.fd_step)
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient at epoch {epoch}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**epoch)
        v_hat = v / (1 - b2**epoch)
        params = params - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
    return network.with_parameters(params), trace


def encode_features(features, n_qubits: int, threshold: float = 0.5) -> StateVector:
    """Threshold features to bits and OR them into ``n_qubits`` contiguous groups.

    With as many qubits as features this is plain basis encoding.
    """
    x = np.asarray(features, dtype=float).reshape(-1)
    if x.size < n_qubits:
        raise QfnnError(f"{x.size} features cannot fill {n_qubits} qubits")
    groups = np.array_split(x >= threshold, n_qubits)
    return StateVector.from_bits("".join("1" if g.any() else "0" for g in groups))


def malicious_target(n_qubits: int) -> StateVector:
    return StateVector.from_bits("1" * n_qubits)


def benign_target(n_qubits: int) -> StateVector:
    return StateVector.from_bits("0" * n_qubits)


def label_pair(features, malicious: bool, arch: QfnnArchitecture) -> TrainingPair:
    target = malicious_target(arch.n_out) if malicious else benign_target(arch.n_out)
    return TrainingPair(encode_features(features, arch.n_in), target)


def predict(network: QfnnNetwork, features, n_features: int | None = None) -> tuple[Decision, float]:
    """Label and malicious score (fidelity of the output with ``|1...1>``)."""
    x = np.asarray(features, dtype=float).reshape(-1)
    if n_features is not None and x.size != n_features:
        raise QfnnError(f"expected {n_features} features, got {x.size}")
    arch = network.architecture
    out = feedforward(network, encode_features(x, arch.n_in))[-1]
    score = fidelity(malicious_target(arch.n_out), out)
    return (Decision.MALICIOUS if score >= 0.5 else Decision.NON_MALICIOUS), score


@dataclass(frozen=True)
class ConfidenceQuery:
    """Shot-limited estimate ``p_hat`` of the probability of label ``y`` (+1 / -1)."""

    p_hat: float
    shots: int
    margin: float = 0.0
    y: int = 1

    def __post_init__(self) -> None:
        if self.shots < 1:
            raise QfnnError("shots must be >= 1")
        if not 0.0 <= self.p_hat <= 1.0:
            raise QfnnError("p_hat must lie in [0, 1]")
        if self.y not in (1, -1):
            raise QfnnError("y must be +1 or -1")

    @property
    def threshold(self) -> float:
        return (1 - self.y * self.margin) / 2


def misclassification_probability(q: ConfidenceQuery) -> float:
    """Gaussian approximation to the chance that ``shots`` samples flip the label."""
    gap = q.threshold - q.p_hat
    if q.p_hat in (0.0, 1.0):
        return 0.5 if gap == 0 else (1.0 if gap > 0 else 0.0)
    z = math.sqrt(q.shots) * gap / math.sqrt(2 * q.p_hat * (1 - q.p_hat))
    return float(norm.cdf(z))


def separable_toy_set(n: int, seed: int, n_features: int = 6, rule_features: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Feature vectors and labels where the label is "some rule feature >= 0.5".

    Benign rows keep every feature below 0.5, so the classes are separable under
    both the 2Q and the 4Q threshold encodings.
    """
    rng = np.random.default_rng(seed)
    labels = rng.random(n) < 0.5
    x = rng.uniform(0.0, 0.5, size=(n, n_features))
    for i in np.flatnonzero(labels):
        hot = rng.random(rule_features) < 0.5
        hot[rng.integers(rule_features)] = True
        x[i, :rule_features][hot] = rng.uniform(0.5, 1.0, size=hot.sum())
        tail = rng.random(n_features - rule_features) < 0.5
        x[i, rule_features:][tail] = rng.uniform(0.5, 1.0, size=tail.sum())
    return x, labels


def pairs_from_features(x, labels, arch: QfnnArchitecture) -> list[TrainingPair]:
    return [label_pair(row, bool(lab), arch) for row, lab in zip(x, labels)]
