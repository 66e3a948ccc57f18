"""Settings and run configuration."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import PROJECT_DIR, RUNS_DIR
from .errors import ConfigError

# Output directory override (takes precedence over the config file)
OUTPUT_DIR_OVERRIDE = os.environ.get("NQSVM_OUTPUT_DIR")

# Debug settings
DEBUG = os.environ.get("NQSVM_DEBUG", "0") == "1"

ALGORITHMS = ("alg1", "alg2", "alg3", "alg4", "pegasos-only")
DATASET_SOURCES = ("idx", "synthetic")
NETWORK_KINDS = ("conv", "pass-through", "dense")
KERNEL_KINDS = ("quantum", "linear", "rbf")
LOSS_NAMES = ("squared", "linear")

# Every default below is echoed into the metrics header of a run.
DEFAULT_CONFIG = {
    "algorithm": "alg1",
    "seed": 0,
    "output_dir": None,
    "dataset": {
        "source": "synthetic",
        "train_images": None,
        "train_labels": None,
        "test_images": None,
        "test_labels": None,
        "positive_class": 1,
        "negative_class": 0,
        "validation_per_class": 0,
        "train_limit": None,
        "synthetic": {
            "train_count": 200,
            "test_count": 200,
            "noise": 0.1,
        },
    },
    "network": {
        "kind": "pass-through",
        "init_scheme": "uniform-fan-in",
        "dropout_p": 0.2,
        "epsilon_norm": 1e-8,
        "pre_tanh_scale": 2.0,
        "post_tanh_scale": math.pi / 4,
        "scale": 1.0,
    },
    "kernel": {
        "kind": "quantum",
        "mode": "exact",
        "shots": 450,
        "num_qubits": None,
        "repetitions": 1,
        "entanglement": "full",
        "gamma": 1.0,
    },
    "spsa": {
        "perturbation_c": 0.1,
        "resamples": 1,
    },
    "train": {
        "steps": 1200,
        "lambda": 1e-4,
        "mu": 1.0,
        "batch_k": 4,
        "svm_steps": 600,
        "svm_lambda": None,
        "loss": "squared",
    },
    "optimizer": {
        "learning_rate": 0.05,
        "momentum": 0.9,
        "weight_decay": 1e-4,
    },
    "metrics": {
        "wall_clock": False,
        "objective_every": 0,
    },
}

# Keys whose default is None accept these types
_NULLABLE = {
    "output_dir": str,
    "dataset.train_images": str,
    "dataset.train_labels": str,
    "dataset.test_images": str,
    "dataset.test_labels": str,
    "dataset.train_limit": int,
    "train.svm_lambda": float,
    "kernel.num_qubits": int,
}


@dataclass
class ValidationResult:
    """Result of a configuration check."""
    is_valid: bool
    errors: list = field(default_factory=list)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_types(raw: dict, defaults: dict, prefix: str, errors: list):
    for key, value in raw.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            errors.append(f"Unknown key: {path}")
            continue
        default = defaults[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                errors.append(f"{path} must be an object")
            else:
                _check_types(value, default, f"{path}.", errors)
        elif default is None:
            expected = _NULLABLE[path]
            ok = value is None or (
                _is_number(value) if expected is float else isinstance(value, expected) and not isinstance(value, bool)
            )
            if not ok:
                errors.append(f"{path} must be {expected.__name__} or null")
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                errors.append(f"{path} must be true or false")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                errors.append(f"{path} must be an integer")
        elif isinstance(default, float):
            if not _is_number(value):
                errors.append(f"{path} must be a number")
        elif isinstance(default, str):
            if not isinstance(value, str):
                errors.append(f"{path} must be a string")


def _merge(defaults: dict, overrides: dict) -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if isinstance(merged.get(key), dict) and isinstance(value, dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _check_values(cfg: dict, errors: list):
    def require(condition: bool, message: str):
        if not condition:
            errors.append(message)

    ds, net, ker, spsa, tr, opt = (
        cfg["dataset"], cfg["network"], cfg["kernel"], cfg["spsa"], cfg["train"], cfg["optimizer"]
    )
    require(cfg["algorithm"] in ALGORITHMS, f"algorithm must be one of {list(ALGORITHMS)}")
    require(ds["source"] in DATASET_SOURCES, f"dataset.source must be one of {list(DATASET_SOURCES)}")
    if ds["source"] == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            require(ds[key] is not None, f"dataset.{key} is required for idx datasets")
    require(ds["positive_class"] != ds["negative_class"], "dataset classes must differ")
    require(ds["validation_per_class"] >= 0, "dataset.validation_per_class must be >= 0")
    require(ds["train_limit"] is None or ds["train_limit"] >= 2, "dataset.train_limit must be >= 2")
    require(ds["synthetic"]["train_count"] >= 2, "dataset.synthetic.train_count must be >= 2")
    require(ds["synthetic"]["test_count"] >= 2, "dataset.synthetic.test_count must be >= 2")
    require(ds["synthetic"]["noise"] >= 0, "dataset.synthetic.noise must be >= 0")

    require(net["kind"] in NETWORK_KINDS, f"network.kind must be one of {list(NETWORK_KINDS)}")
    require(0 <= net["dropout_p"] < 1, "network.dropout_p must lie in [0, 1)")
    require(net["epsilon_norm"] > 0, "network.epsilon_norm must be positive")
    if net["kind"] == "conv":
        require(ds["source"] == "idx", "network.kind 'conv' needs 28x28 idx images")
    else:
        require(ds["source"] == "synthetic", "network.kind '" + net["kind"] + "' needs the synthetic dataset")

    require(ker["kind"] in KERNEL_KINDS, f"kernel.kind must be one of {list(KERNEL_KINDS)}")
    require(ker["mode"] in ("exact", "sampled"), "kernel.mode must be 'exact' or 'sampled'")
    require(ker["shots"] >= 1, "kernel.shots must be >= 1")
    require(ker["num_qubits"] is None or ker["num_qubits"] >= 1, "kernel.num_qubits must be >= 1")
    require(ker["repetitions"] >= 1, "kernel.repetitions must be >= 1")
    require(ker["entanglement"] == "full", "kernel.entanglement must be 'full'")
    require(ker["gamma"] > 0, "kernel.gamma must be positive")

    require(spsa["perturbation_c"] > 0, "spsa.perturbation_c must be positive")
    require(spsa["resamples"] >= 1, "spsa.resamples must be >= 1")

    algorithm = cfg["algorithm"]
    min_steps = 0 if algorithm in ("alg4", "pegasos-only") else 2
    require(tr["steps"] >= min_steps, f"train.steps must be >= {min_steps} for {algorithm}")
    require(tr["lambda"] > 0, "train.lambda must be positive")
    require(math.isfinite(tr["mu"]), "train.mu must be finite")
    require(tr["batch_k"] >= 1, "train.batch_k must be >= 1")
    require(tr["svm_steps"] >= 2, "train.svm_steps must be >= 2")
    require(tr["svm_lambda"] is None or tr["svm_lambda"] > 0, "train.svm_lambda must be positive")
    require(tr["loss"] in LOSS_NAMES, f"train.loss must be one of {list(LOSS_NAMES)}")

    require(opt["learning_rate"] >= 0, "optimizer.learning_rate must be >= 0")
    require(0 <= opt["momentum"] < 1, "optimizer.momentum must lie in [0, 1)")
    require(opt["weight_decay"] >= 0, "optimizer.weight_decay must be >= 0")
    require(cfg["metrics"]["objective_every"] >= 0, "metrics.objective_every must be >= 0")


def validate_config(raw: dict) -> ValidationResult:
    """Check keys, types and ranges of a raw run configuration."""
    if not isinstance(raw, dict):
        return ValidationResult(is_valid=False, errors=["Configuration must be a JSON object"])
    errors = []
    _check_types(raw, DEFAULT_CONFIG, "", errors)
    if not errors:
        _check_values(_merge(DEFAULT_CONFIG, raw), errors)
    return ValidationResult(is_valid=not errors, errors=errors)


class RunConfig:
    """A validated run configuration with builders for its parts."""

    def __init__(self, raw: Optional[dict] = None, base_dir: Optional[Path] = None):
        raw = raw or {}
        result = validate_config(raw)
        if not result.is_valid:
            raise ConfigError("Invalid configuration:\n  " + "\n  ".join(result.errors))
        self.data = _merge(DEFAULT_CONFIG, raw)
        self.base_dir = Path(base_dir) if base_dir else PROJECT_DIR

    def __getitem__(self, key):
        return self.data[key]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    @property
    def run_id(self) -> str:
        canonical = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.md5(canonical.encode()).hexdigest()[:16]

    def resolve_path(self, value: str) -> Path:
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path

    def output_dir(self) -> Path:
        if OUTPUT_DIR_OVERRIDE:
            return Path(OUTPUT_DIR_OVERRIDE)
        if self.data["output_dir"]:
            return self.resolve_path(self.data["output_dir"])
        return RUNS_DIR / self.run_id

    def num_qubits(self) -> int:
        """Configured qubit count, defaulting to the network output dimension."""
        if self.data["kernel"]["num_qubits"] is not None:
            return self.data["kernel"]["num_qubits"]
        return 4 if self.data["network"]["kind"] == "conv" else 2

    def build_circuit(self):
        from .qsim import build_zz_feature_map

        ker = self.data["kernel"]
        return build_zz_feature_map(self.num_qubits(), ker["repetitions"], ker["entanglement"])

    def build_kernel(self):
        from .kernel import KernelConfig, LinearKernel, QuantumKernel, RbfKernel

        ker = self.data["kernel"]
        if ker["kind"] == "linear":
            return LinearKernel()
        if ker["kind"] == "rbf":
            return RbfKernel(ker["gamma"])
        return QuantumKernel(KernelConfig(self.build_circuit(), ker["mode"], ker["shots"]))

    def build_network(self, input_dim: int = 2):
        from .neural import PassThroughNet, init, init_dense

        net = self.data["network"]
        if net["kind"] == "pass-through":
            return PassThroughNet(input_dim, net["scale"])
        if net["kind"] == "dense":
            return init_dense(input_dim, self.num_qubits(), net["scale"])
        return init(
            self.data["seed"],
            net["init_scheme"],
            dropout_p=net["dropout_p"],
            epsilon_norm=net["epsilon_norm"],
            pre_tanh_scale=net["pre_tanh_scale"],
            post_tanh_scale=net["post_tanh_scale"],
        )

    def train_config(self):
        from .kernel import SpsaConfig
        from .train import TrainConfig

        tr, opt, spsa = self.data["train"], self.data["optimizer"], self.data["spsa"]
        return TrainConfig(
            steps=tr["steps"],
            lam=tr["lambda"],
            mu=tr["mu"],
            batch_k=tr["batch_k"],
            spsa=SpsaConfig(spsa["perturbation_c"], spsa["resamples"]),
            kernel=self.build_kernel(),
            learning_rate=opt["learning_rate"],
            momentum=opt["momentum"],
            weight_decay=opt["weight_decay"],
            seed=self.data["seed"],
            svm_steps=tr["svm_steps"],
            svm_lambda=tr["svm_lambda"] if tr["svm_lambda"] is not None else tr["lambda"],
            objective_every=self.data["metrics"]["objective_every"],
            loss=tr["loss"],
        )


def load_run_config(path) -> RunConfig:
    """Load a JSON run configuration merged over the defaults."""
    path = Path(path)
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config {path} is not valid JSON: {e}") from e
    return RunConfig(raw)
