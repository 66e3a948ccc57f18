"""Dense statevector simulation of the ZZ feature map and its fidelities.

Qubit 0 is the least significant bit of the basis-state index. Gates act on a
batch of states at once (shape ``(batch, 2**N)``) so kernel rows and Gram
matrices need one pass over the circuit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, InputError

# Gate kinds
HADAMARD = "h"
PHASE = "p"
CNOT = "cx"

SUPPORTED_ENTANGLEMENT = {"full"}

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class AngleExpr:
    """Phase angle as a function of the feature vector.

    One feature index means ``2*x_i``; two mean ``2*(pi - x_i)*(pi - x_j)``.
    """

    features: tuple

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Evaluate on a batch of feature vectors, shape ``(batch, n)``."""
        if len(self.features) == 1:
            return 2.0 * X[:, self.features[0]]
        i, j = self.features
        return 2.0 * (math.pi - X[:, i]) * (math.pi - X[:, j])

    def __str__(self) -> str:
        if len(self.features) == 1:
            return f"2*x{self.features[0]}"
        i, j = self.features
        return f"2*(pi-x{i})*(pi-x{j})"


@dataclass(frozen=True)
class Gate:
    """One gate of a feature-map circuit."""

    kind: str
    target: int
    control: Optional[int] = None
    angle: Optional[AngleExpr] = None

    def __str__(self) -> str:
        if self.kind == HADAMARD:
            return f"H({self.target})"
        if self.kind == CNOT:
            return f"CX({self.control},{self.target})"
        return f"P({self.angle} on {self.target})"


@dataclass
class FeatureMapCircuit:
    """Data-parametrized unitary U(x) as an ordered gate list."""

    num_qubits: int
    feature_dim: int
    gates: list = field(default_factory=list)
    repetitions: int = 1

    def __post_init__(self):
        for gate in self.gates:
            qubits = [gate.target] if gate.control is None else [gate.target, gate.control]
            if any(q < 0 or q >= self.num_qubits for q in qubits):
                raise ConfigError(f"Gate {gate} acts outside {self.num_qubits} qubits")
            if gate.control is not None and gate.control == gate.target:
                raise ConfigError(f"Gate {gate} has control == target")
            if gate.angle is not None and any(
                f < 0 or f >= self.feature_dim for f in gate.angle.features
            ):
                raise ConfigError(f"Gate {gate} reads a feature outside [0, {self.feature_dim})")

    @property
    def dim(self) -> int:
        return 2 ** self.num_qubits

    def describe(self) -> str:
        return ", ".join(str(g) for g in self.gates)


@dataclass
class Statevector:
    """Amplitudes of U(x)|0^N>."""

    amplitudes: np.ndarray
    num_qubits: int

    def __post_init__(self):
        if len(self.amplitudes) != 2 ** self.num_qubits:
            raise InputError(
                f"Statevector of {self.num_qubits} qubits needs {2 ** self.num_qubits} "
                f"amplitudes, got {len(self.amplitudes)}"
            )

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def build_zz_feature_map(
    num_qubits: int, repetitions: int = 1, entanglement: str = "full"
) -> FeatureMapCircuit:
    """Build the ZZ feature map: H layer, single phases, CX-conjugated pair phases."""
    if entanglement not in SUPPORTED_ENTANGLEMENT:
        raise ConfigError(
            f"Unsupported entanglement '{entanglement}', expected one of {sorted(SUPPORTED_ENTANGLEMENT)}"
        )
    if num_qubits < 1:
        raise ConfigError("num_qubits must be at least 1")
    if repetitions < 1:
        raise ConfigError("repetitions must be at least 1")

    gates = []
    for _ in range(repetitions):
        for q in range(num_qubits):
            gates.append(Gate(HADAMARD, q))
        for q in range(num_qubits):
            gates.append(Gate(PHASE, q, angle=AngleExpr((q,))))
        for i in range(num_qubits):
            for j in range(i + 1, num_qubits):
                gates.append(Gate(CNOT, j, control=i))
                gates.append(Gate(PHASE, j, angle=AngleExpr((i, j))))
                gates.append(Gate(CNOT, j, control=i))

    return FeatureMapCircuit(
        num_qubits=num_qubits,
        feature_dim=num_qubits,
        gates=gates,
        repetitions=repetitions,
    )


def _check_points(circuit: FeatureMapCircuit, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != circuit.feature_dim:
        raise InputError(
            f"Expected feature vectors of dimension {circuit.feature_dim}, got shape {X.shape}"
        )
    return X


def _check_point(circuit: FeatureMapCircuit, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (circuit.feature_dim,):
        raise InputError(
            f"Expected a feature vector of dimension {circuit.feature_dim}, got shape {x.shape}"
        )
    return x


def evolve_batch(circuit: FeatureMapCircuit, X) -> np.ndarray:
    """Apply U(x) to |0^N> for every row of ``X``; returns ``(batch, 2**N)``."""
    X = _check_points(circuit, X)
    batch = X.shape[0]
    n = circuit.num_qubits
    psi = np.zeros((batch, circuit.dim), dtype=np.complex128)
    psi[:, 0] = 1.0
    index = np.arange(circuit.dim)

    for gate in circuit.gates:
        q = gate.target
        if gate.kind == CNOT:
            controlled = (index >> gate.control) & 1
            perm = np.where(controlled == 1, index ^ (1 << q), index)
            psi = psi[:, perm]
            continue

        view = psi.reshape(batch, 2 ** (n - q - 1), 2, 2 ** q)
        if gate.kind == HADAMARD:
            a0 = view[:, :, 0, :].copy()
            a1 = view[:, :, 1, :]
            view[:, :, 0, :] = (a0 + a1) * _INV_SQRT2
            view[:, :, 1, :] = (a0 - a1) * _INV_SQRT2
        else:
            phase = np.exp(1j * gate.angle.evaluate(X))
            view[:, :, 1, :] *= phase[:, None, None]

    return psi


def evolve(circuit: FeatureMapCircuit, x) -> Statevector:
    """Return U(x)|0^N> as a Statevector."""
    x = _check_point(circuit, x)
    return Statevector(evolve_batch(circuit, x[None, :])[0], circuit.num_qubits)


def overlap_probabilities(states_a: np.ndarray, states_b: np.ndarray) -> np.ndarray:
    """|<a_i|b_j>|^2 for every pair of rows, clamped to [0, 1]."""
    amplitudes = states_a.conj() @ states_b.T
    return np.clip(np.abs(amplitudes) ** 2, 0.0, 1.0)


def fidelity_exact(circuit: FeatureMapCircuit, a, b) -> float:
    """|<psi(a)|psi(b)>|^2 from two simulated statevectors."""
    a = _check_point(circuit, a)
    b = _check_point(circuit, b)
    states = evolve_batch(circuit, np.stack([a, b]))
    return float(overlap_probabilities(states[:1], states[1:])[0, 0])


def sample_counts(probabilities, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Fraction of all-zero outcomes in ``shots`` runs, one Binomial draw per entry."""
    if shots < 1:
        raise ConfigError("shots must be at least 1")
    p = np.clip(np.asarray(probabilities, dtype=np.float64), 0.0, 1.0)
    return rng.binomial(shots, p) / shots


def fidelity_sampled(
    circuit: FeatureMapCircuit, a, b, shots: int, rng: np.random.Generator
) -> float:
    """Shot estimate of the fidelity of the compute-uncompute circuit."""
    p = fidelity_exact(circuit, a, b)
    return float(sample_counts(p, shots, rng))
