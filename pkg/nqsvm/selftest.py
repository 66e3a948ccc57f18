"""Fast invariant checks run by ``selftest``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import neural
from .errors import NqsvmError
from .kernel import KernelConfig, QuantumKernel, SpsaConfig, alignment, spsa_gradient, weighted_alignment
from .qsim import build_zz_feature_map, fidelity_sampled


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name}: {status} ({self.detail})"


def check_kernel_oracle(seed: int = 0) -> CheckResult:
    """One qubit: K(x, z) = cos^2(x - z)."""
    kernel = QuantumKernel(KernelConfig(build_zz_feature_map(1)))
    grid = np.linspace(0.0, 2 * math.pi, 50)[:, None]
    K = kernel.cross(grid, grid)
    error = float(np.max(np.abs(K - np.cos(grid - grid.T) ** 2)))
    return CheckResult("kernel-oracle", error < 1e-12, f"max error {error:.2e} on 50x50 grid")


def check_gram_psd(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    kernel = QuantumKernel(KernelConfig(build_zz_feature_map(4)))
    points = rng.uniform(0.0, math.pi, size=(20, 4))
    smallest = float(np.linalg.eigvalsh(kernel.gram(points)).min())
    return CheckResult("gram-psd", smallest >= -1e-9, f"min eigenvalue {smallest:.2e}")


def _kink_pattern(cache) -> tuple:
    return cache.saved["argmax"], cache.saved["pooled"] > 0


def check_network_gradient(seed: int = 0, draws: int = 10, coordinates: int = 60, tolerance: float = 1e-5) -> CheckResult:
    """Backward pass of the conv net against central differences (eval mode).

    Coordinates whose perturbation flips a pooling argmax or ReLU gate sit on a
    kink and are replaced by fresh ones.
    """
    rng = np.random.default_rng(seed)
    step = 1e-6
    worst = 0.0
    for draw in range(draws):
        net = neural.init(seed + draw).eval()
        images = rng.uniform(0.0, 1.0, size=(2, 28, 28))
        upstream = rng.standard_normal((2, net.output_dim))
        _, cache = net.forward(images, training=False)
        base_argmax, base_gate = _kink_pattern(cache)
        grads = net.backward(cache, upstream)

        names = sorted(net.params)
        analytic, numeric = [], []
        attempts = 0
        while len(analytic) < coordinates and attempts < 10 * coordinates:
            attempts += 1
            name = names[rng.integers(len(names))]
            theta = net.params[name]
            flat_index = int(rng.integers(theta.size))
            idx = np.unravel_index(flat_index, theta.shape)
            original = theta[idx]
            values, smooth = [], True
            for sign in (1.0, -1.0):
                theta[idx] = original + sign * step
                out, cache = net.forward(images, training=False)
                argmax, gate = _kink_pattern(cache)
                smooth &= bool(np.array_equal(argmax, base_argmax) and np.array_equal(gate, base_gate))
                values.append(float(np.sum(out * upstream)))
            theta[idx] = original
            if smooth:
                analytic.append(grads[name][idx])
                numeric.append((values[0] - values[1]) / (2 * step))

        analytic = np.array(analytic)
        numeric = np.array(numeric)
        scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / scale))
    return CheckResult("network-gradient", worst < tolerance, f"max relative error {worst:.2e} over {draws} draws")


def check_spsa_expectation(seed: int = 0, samples: int = 10_000) -> CheckResult:
    rng = np.random.default_rng(seed)
    dim = 4
    M = rng.standard_normal((dim, dim))
    A = M + M.T
    b = rng.standard_normal(dim)
    z = rng.standard_normal(dim)

    def h(x):
        return float(0.5 * x @ A @ x + b @ x)

    cfg = SpsaConfig(perturbation_c=0.1)
    estimates = np.array([spsa_gradient(h, z, cfg, rng) for _ in range(samples)])
    truth = A @ z + b
    stderr = estimates.std(axis=0, ddof=1) / math.sqrt(samples)
    deviation = float(np.max(np.abs(estimates.mean(axis=0) - truth) / np.maximum(stderr, 1e-15)))
    return CheckResult("spsa-expectation", deviation <= 5.0, f"max deviation {deviation:.2f} standard errors")


def check_shot_noise(seed: int = 0, repeats: int = 2000) -> CheckResult:
    circuit = build_zz_feature_map(1)
    # cos^2(pi/4) = 0.5
    a, b = np.array([0.0]), np.array([math.pi / 4])
    worst = 0.0
    for shots in (100, 450, 1600):
        estimates = np.array([
            fidelity_sampled(circuit, a, b, shots, np.random.default_rng(seed + r)) for r in range(repeats)
        ])
        expected = math.sqrt(0.25 / shots)
        worst = max(worst, abs(estimates.std() / expected - 1.0))
    return CheckResult("shot-noise", worst < 0.1, f"max relative std deviation {worst:.3f}")


def check_alignment_bounds(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    kernel = QuantumKernel(KernelConfig(build_zz_feature_map(2)))
    K = kernel.gram(rng.uniform(0.0, math.pi, size=(8, 2)))
    y = np.array([1, -1] * 4, dtype=np.float64)
    alpha = rng.uniform(0.0, 1.0, size=8)
    plain = alignment(K, y)
    weighted = weighted_alignment(K, y, alpha)
    zero = weighted_alignment(K, y, np.zeros(8))
    passed = abs(plain) <= 1 + 1e-12 and abs(weighted) <= 1 + 1e-12 and zero == 0.0
    return CheckResult(
        "alignment-bounds", passed, f"alignment {plain:.4f}, weighted {weighted:.4f}, zero-alpha {zero}"
    )


CHECKS = (
    check_kernel_oracle,
    check_gram_psd,
    check_network_gradient,
    check_spsa_expectation,
    check_shot_noise,
    check_alignment_bounds,
)


def run_checks(seed: int = 0) -> list:
    results = []
    for check in CHECKS:
        try:
            results.append(check(seed))
        except (NqsvmError, FloatingPointError) as e:
            name = check.__name__.removeprefix("check_").replace("_", "-")
            results.append(CheckResult(name, False, f"{type(e).__name__}: {e}"))
    return results
