"""Kernels, Gram matrices, the SPSA input-gradient estimator and alignment scores."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .config import DEBUG
from .errors import ConfigError, InputError, NumericalError
from .qsim import FeatureMapCircuit, evolve_batch, overlap_probabilities, sample_counts

KERNEL_MODES = {"exact", "sampled"}


@dataclass
class KernelConfig:
    """How the quantum kernel is evaluated."""

    circuit: FeatureMapCircuit
    mode: str = "exact"
    shots: int = 450

    def __post_init__(self):
        if self.mode not in KERNEL_MODES:
            raise ConfigError(f"Kernel mode must be one of {sorted(KERNEL_MODES)}, got '{self.mode}'")
        if self.mode == "sampled" and self.shots < 1:
            raise ConfigError("Sampled kernel mode needs shots >= 1")


@dataclass
class SpsaConfig:
    """Constants of the SPSA gradient estimator."""

    perturbation_c: float = 0.1
    resamples: int = 1

    def __post_init__(self):
        if not self.perturbation_c > 0:
            raise ConfigError("SPSA perturbation_c must be positive")
        if self.resamples < 1:
            raise ConfigError("SPSA resamples must be at least 1")


class Kernel:
    """Evaluation surface shared by the quantum and the classical kernels.

    ``evaluations`` counts kernel entries actually computed (for the quantum
    kernel: circuit runs). Diagonal Gram entries of self-similar points are
    known without a run and are not counted.
    """

    name = "kernel"
    feature_dim: Optional[int] = None

    def __init__(self):
        self.evaluations = 0

    def _values(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _self_values(self, Z: np.ndarray) -> np.ndarray:
        return np.ones(len(Z))

    def _sample(self, values: np.ndarray, rng: Optional[np.random.Generator]) -> np.ndarray:
        return values

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise InputError(f"Expected a 2-D array of points, got shape {X.shape}")
        if self.feature_dim is not None and X.shape[1] != self.feature_dim:
            raise InputError(
                f"{self.name} kernel expects dimension {self.feature_dim}, got {X.shape[1]}"
            )
        return X

    def cross(self, A, B, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Matrix of K(a_i, b_j)."""
        A = self._check(A)
        B = self._check(B)
        values = self._sample(self._values(A, B), rng)
        self.evaluations += values.size
        return values

    def gram(self, Z, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Symmetric Gram matrix; only the strict upper triangle is evaluated."""
        Z = np.asarray(Z, dtype=np.float64)
        if Z.size == 0:
            return np.zeros((0, 0))
        Z = self._check(Z)
        m = len(Z)
        upper_idx = np.triu_indices(m, k=1)
        upper = self._sample(self._values(Z, Z)[upper_idx], rng)
        gram = np.diag(self._self_values(Z)).astype(np.float64)
        gram[upper_idx] = upper
        gram[(upper_idx[1], upper_idx[0])] = upper
        self.evaluations += len(upper)
        return gram

    def __call__(self, a, b, rng: Optional[np.random.Generator] = None) -> float:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        return float(self.cross(a[None, :], b[None, :], rng)[0, 0])

    def describe(self) -> dict:
        return {"kind": self.name}


class QuantumKernel(Kernel):
    """Fidelity kernel |<0|U(a)^dag U(b)|0>|^2, exact or shot-sampled."""

    name = "quantum"

    def __init__(self, config: KernelConfig):
        super().__init__()
        self.config = config
        self.feature_dim = config.circuit.feature_dim
        if DEBUG:
            print(
                f"[Kernel] {config.circuit.num_qubits}-qubit fidelity kernel, {config.mode}"
                + (f" ({config.shots} shots)" if config.mode == "sampled" else ""),
                file=sys.stderr,
            )

    @property
    def circuit(self) -> FeatureMapCircuit:
        return self.config.circuit

    def _values(self, A, B):
        states_a = evolve_batch(self.circuit, A)
        states_b = states_a if B is A else evolve_batch(self.circuit, B)
        return overlap_probabilities(states_a, states_b)

    def _sample(self, values, rng):
        if self.config.mode == "exact":
            return values
        if rng is None:
            raise ConfigError("Sampled kernel mode needs a random source")
        return sample_counts(values, self.config.shots, rng)

    def describe(self) -> dict:
        return {
            "kind": self.name,
            "mode": self.config.mode,
            "shots": self.config.shots,
            "num_qubits": self.circuit.num_qubits,
            "repetitions": self.circuit.repetitions,
            "entanglement": "full",
        }


class LinearKernel(Kernel):
    """K(a, b) = a . b"""

    name = "linear"

    def _values(self, A, B):
        return A @ B.T

    def _self_values(self, Z):
        return np.einsum("ij,ij->i", Z, Z)


class RbfKernel(Kernel):
    """K(a, b) = exp(-gamma * |a - b|^2)"""

    name = "rbf"

    def __init__(self, gamma: float = 1.0):
        super().__init__()
        if not gamma > 0:
            raise ConfigError("RBF gamma must be positive")
        self.gamma = gamma

    def _values(self, A, B):
        sq = (
            np.einsum("ij,ij->i", A, A)[:, None]
            + np.einsum("ij,ij->i", B, B)[None, :]
            - 2.0 * A @ B.T
        )
        return np.exp(-self.gamma * np.maximum(sq, 0.0))

    def describe(self) -> dict:
        return {"kind": self.name, "gamma": self.gamma}


def kernel_eval(cfg: KernelConfig, a, b, rng: Optional[np.random.Generator] = None) -> float:
    """One kernel value under ``cfg``."""
    return QuantumKernel(cfg)(a, b, rng)


def gram_matrix(cfg: KernelConfig, Z, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Gram matrix of ``Z`` under ``cfg``."""
    return QuantumKernel(cfg).gram(Z, rng)


def spsa_gradient(
    h: Callable[[np.ndarray], float],
    z,
    cfg: SpsaConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Two-point SPSA estimate of grad h at ``z``, averaged over ``cfg.resamples`` directions."""
    z = np.asarray(z, dtype=np.float64)
    c = cfg.perturbation_c
    estimate = np.zeros_like(z)
    for _ in range(cfg.resamples):
        delta = 2.0 * rng.integers(0, 2, size=z.shape) - 1.0
        h_plus = h(z + c * delta)
        h_minus = h(z - c * delta)
        if not (math.isfinite(h_plus) and math.isfinite(h_minus)):
            raise NumericalError(f"SPSA objective is not finite: h+={h_plus}, h-={h_minus}")
        # 1/delta_i == delta_i for Rademacher signs
        estimate += (h_plus - h_minus) / (2.0 * c) * delta
    return estimate / cfg.resamples


def _check_batch(K_batch, y_batch):
    K = np.asarray(K_batch, dtype=np.float64)
    y = np.asarray(y_batch, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InputError(f"Kernel batch must be square, got shape {K.shape}")
    if y.shape != (K.shape[0],):
        raise InputError(f"Expected {K.shape[0]} labels, got shape {y.shape}")
    return K, y


def alignment(K_batch, y_batch) -> float:
    """Kernel-target alignment: y^T K y / (k * ||K||_F)."""
    K, y = _check_batch(K_batch, y_batch)
    k = len(y)
    k_norm = math.sqrt(float(np.sum(K * K)))
    if k_norm == 0.0:
        raise NumericalError("Alignment is undefined for an all-zero kernel batch")
    return float(y @ K @ y) / (k * k_norm)


def weighted_alignment(K_batch, y_batch, alpha_batch) -> float:
    """Alignment of K with the alpha-weighted label matrix; 0 when every alpha is 0."""
    K, y = _check_batch(K_batch, y_batch)
    alpha = np.asarray(alpha_batch, dtype=np.float64)
    if alpha.shape != y.shape:
        raise InputError(f"Expected {len(y)} coefficients, got shape {alpha.shape}")
    if not np.any(alpha):
        return 0.0
    k_norm = math.sqrt(float(np.sum(K * K)))
    if k_norm == 0.0:
        raise NumericalError("Weighted alignment is undefined for an all-zero kernel batch")
    w = alpha * y
    # sqrt(sum_ij (a_i a_j)^2) == sum_i a_i^2
    return float(w @ K @ w) / (float(alpha @ alpha) * k_norm)
