"""Tests for kernels, SPSA and alignment."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nqsvm.errors import ConfigError, InputError, NumericalError
from nqsvm.kernel import (
    KernelConfig,
    LinearKernel,
    QuantumKernel,
    RbfKernel,
    SpsaConfig,
    alignment,
    gram_matrix,
    kernel_eval,
    spsa_gradient,
    weighted_alignment,
)
from nqsvm.qsim import build_zz_feature_map, fidelity_exact


class TestQuantumKernel:
    def test_one_qubit_oracle_grid(self, one_qubit_kernel):
        grid = np.linspace(0.0, 2 * math.pi, 50)[:, None]
        K = one_qubit_kernel.cross(grid, grid)
        assert np.max(np.abs(K - np.cos(grid - grid.T) ** 2)) < 1e-12

    def test_gram_is_symmetric_psd_with_unit_diagonal(self):
        cfg = KernelConfig(build_zz_feature_map(4))
        points = np.random.default_rng(5).uniform(0.0, math.pi, size=(20, 4))
        K = gram_matrix(cfg, points)
        np.testing.assert_array_equal(K, K.T)
        np.testing.assert_array_equal(np.diag(K), 1.0)
        assert np.linalg.eigvalsh(K).min() >= -1e-9

    def test_kernel_eval_matches_fidelity(self):
        circuit = build_zz_feature_map(2)
        a, b = np.array([0.2, 1.1]), np.array([2.0, -0.4])
        assert kernel_eval(KernelConfig(circuit), a, b) == pytest.approx(fidelity_exact(circuit, a, b), abs=1e-15)

    def test_evaluation_counting(self, two_qubit_kernel):
        rng = np.random.default_rng(0)
        two_qubit_kernel.gram(rng.uniform(size=(6, 2)))
        assert two_qubit_kernel.evaluations == 15
        two_qubit_kernel.cross(rng.uniform(size=(3, 2)), rng.uniform(size=(2, 2)))
        assert two_qubit_kernel.evaluations == 21

    def test_empty_gram(self, two_qubit_kernel):
        assert two_qubit_kernel.gram(np.zeros((0, 2))).shape == (0, 0)
        assert two_qubit_kernel.evaluations == 0

    def test_dimension_mismatch(self, two_qubit_kernel):
        with pytest.raises(InputError):
            two_qubit_kernel.cross(np.zeros((1, 3)), np.zeros((1, 3)))

    def test_sampled_mode_needs_rng(self):
        kernel = QuantumKernel(KernelConfig(build_zz_feature_map(2), mode="sampled", shots=100))
        with pytest.raises(ConfigError):
            kernel([0.1, 0.2], [0.3, 0.4])

    def test_sampled_gram_is_deterministic_per_seed(self):
        kernel = QuantumKernel(KernelConfig(build_zz_feature_map(2), mode="sampled", shots=450))
        points = np.random.default_rng(2).uniform(size=(5, 2))
        first = kernel.gram(points, np.random.default_rng(9))
        second = kernel.gram(points, np.random.default_rng(9))
        np.testing.assert_array_equal(first, second)
        np.testing.assert_array_equal(first, first.T)
        np.testing.assert_allclose(first * 450, np.round(first * 450))

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            KernelConfig(build_zz_feature_map(2), mode="approximate")
        with pytest.raises(ConfigError):
            KernelConfig(build_zz_feature_map(2), mode="sampled", shots=0)

    def test_describe(self, two_qubit_kernel):
        assert two_qubit_kernel.describe() == {
            "kind": "quantum", "mode": "exact", "shots": 450,
            "num_qubits": 2, "repetitions": 1, "entanglement": "full",
        }


class TestClassicalKernels:
    def test_linear_diagonal_is_squared_norm(self):
        Z = np.array([[1.0, 2.0], [3.0, -1.0]])
        K = LinearKernel().gram(Z)
        np.testing.assert_allclose(K, Z @ Z.T)

    def test_rbf_values(self):
        kernel = RbfKernel(gamma=0.5)
        assert kernel([0.0, 0.0], [1.0, 1.0]) == pytest.approx(math.exp(-1.0))
        np.testing.assert_array_equal(np.diag(kernel.gram(np.eye(3))), 1.0)

    def test_rbf_gamma_positive(self):
        with pytest.raises(ConfigError):
            RbfKernel(gamma=0.0)


class TestSpsa:
    def test_exact_for_one_dimensional_linear(self):
        grad = spsa_gradient(lambda z: 3.0 * z[0] + 1.0, np.array([0.7]), SpsaConfig(), np.random.default_rng(0))
        assert grad[0] == pytest.approx(3.0)

    def test_unbiased_on_quadratic(self):
        rng = np.random.default_rng(4)
        M = rng.standard_normal((4, 4))
        A, b, z = M + M.T, rng.standard_normal(4), rng.standard_normal(4)
        estimates = np.array([
            spsa_gradient(lambda x: 0.5 * x @ A @ x + b @ x, z, SpsaConfig(0.1), rng) for _ in range(10_000)
        ])
        stderr = estimates.std(axis=0, ddof=1) / 100.0
        assert np.all(np.abs(estimates.mean(axis=0) - (A @ z + b)) <= 5 * stderr)

    def test_cubic_bias_shrinks_with_c_squared(self):
        def bias(c):
            grad = spsa_gradient(lambda z: z[0] ** 3, np.array([0.5]), SpsaConfig(c), np.random.default_rng(0))
            return grad[0] - 3 * 0.5 ** 2

        assert bias(0.2) == pytest.approx(0.04)
        assert bias(0.1) == pytest.approx(bias(0.2) / 4)

    def test_resamples_average(self):
        cfg = SpsaConfig(perturbation_c=0.1, resamples=8)
        grad = spsa_gradient(lambda x: float(x @ x), np.ones(3), cfg, np.random.default_rng(1))
        assert grad.shape == (3,)

    def test_non_finite_objective(self):
        with pytest.raises(NumericalError):
            spsa_gradient(lambda z: float("nan"), np.zeros(2), SpsaConfig(), np.random.default_rng(0))

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            SpsaConfig(perturbation_c=0.0)
        with pytest.raises(ConfigError):
            SpsaConfig(resamples=0)


labels = arrays(np.float64, 6, elements=st.sampled_from([-1.0, 1.0]))


class TestAlignment:
    def test_perfect_alignment(self):
        y = np.array([1.0, -1.0, 1.0, -1.0])
        assert alignment(np.outer(y, y), y) == pytest.approx(1.0)

    @settings(max_examples=40, deadline=None)
    @given(labels, arrays(np.float64, 6, elements=st.floats(0.0, 2.0)))
    def test_bounded_on_quantum_gram(self, y, alpha):
        K = QuantumKernel(KernelConfig(build_zz_feature_map(2))).gram(
            np.random.default_rng(0).uniform(0, math.pi, size=(6, 2))
        )
        assert abs(alignment(K, y)) <= 1 + 1e-12
        assert abs(weighted_alignment(K, y, alpha)) <= 1 + 1e-12

    def test_zero_alpha_is_exactly_zero(self):
        K = np.eye(3)
        assert weighted_alignment(K, np.ones(3), np.zeros(3)) == 0.0

    def test_weighted_identity_example(self):
        y = np.array([1.0, -1.0])
        assert weighted_alignment(np.eye(2), y, np.ones(2)) == pytest.approx(1 / math.sqrt(2))

    def test_single_support_reduces_to_diagonal_entry(self):
        K = np.array([[0.8, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 0.6]])
        value = weighted_alignment(K, np.array([-1.0, 1.0, 1.0]), np.array([2.5, 0.0, 0.0]))
        assert value == pytest.approx(0.8 / math.sqrt(np.sum(K * K)))

    @settings(max_examples=40, deadline=None)
    @given(labels, arrays(np.float64, 6, elements=st.floats(0.0, 2.0)), st.floats(1e-3, 1e3))
    def test_invariant_under_positive_rescaling(self, y, alpha, scale):
        K = LinearKernel().gram(np.random.default_rng(2).standard_normal((6, 3)))
        assert alignment(scale * K, y) == pytest.approx(alignment(K, y), rel=1e-9, abs=1e-12)
        assert weighted_alignment(scale * K, y, alpha) == pytest.approx(
            weighted_alignment(K, y, alpha), rel=1e-9, abs=1e-12
        )

    def test_zero_kernel(self):
        with pytest.raises(NumericalError):
            alignment(np.zeros((2, 2)), np.array([1.0, -1.0]))

    def test_shape_checks(self):
        with pytest.raises(InputError):
            alignment(np.eye(3), np.ones(2))
        with pytest.raises(InputError):
            weighted_alignment(np.eye(2), np.ones(2), np.ones(3))
