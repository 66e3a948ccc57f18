"""Shared fixtures for the NQSVM test suite."""

import json
import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from nqsvm.data import Dataset, synthetic_two_arcs  # noqa: E402
from nqsvm.kernel import KernelConfig, QuantumKernel  # noqa: E402
from nqsvm.qsim import build_zz_feature_map  # noqa: E402


@pytest.fixture
def one_qubit_kernel():
    return QuantumKernel(KernelConfig(build_zz_feature_map(1)))


@pytest.fixture
def two_qubit_kernel():
    return QuantumKernel(KernelConfig(build_zz_feature_map(2)))


@pytest.fixture
def orthogonal_pair():
    """Two 1-d points whose 1-qubit states are orthogonal (K = cos^2(pi/2) = 0)."""
    return Dataset(np.array([[0.0], [math.pi / 2]]), np.array([1, -1]))


@pytest.fixture
def small_arcs():
    return synthetic_two_arcs(40, 0.05, seed=3)


@pytest.fixture
def tiny_images():
    rng = np.random.default_rng(11)
    images = rng.uniform(0.0, 1.0, size=(12, 28, 28))
    return Dataset(images, np.array([1, -1] * 6))


@pytest.fixture
def write_config(tmp_path):
    """Write a JSON run config and return its path."""

    def _write(raw, name="run.json"):
        path = tmp_path / name
        path.write_text(json.dumps(raw))
        return path

    return _write


@pytest.fixture
def toy_config():
    return {
        "algorithm": "alg3",
        "seed": 0,
        "dataset": {"source": "synthetic", "synthetic": {"train_count": 40, "test_count": 40, "noise": 0.05}},
        "network": {"kind": "pass-through", "scale": 0.5},
        "kernel": {"kind": "quantum", "mode": "exact"},
        "train": {"steps": 100, "lambda": 0.01, "batch_k": 4, "svm_steps": 100},
        "metrics": {"objective_every": 25},
    }
