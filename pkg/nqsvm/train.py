"""NQSVM training: Algorithms 1-4, kernelized Pegasos and the resulting classifiers.

Every algorithm draws from the random streams of ``make_streams(seed)``, so a
given seed yields the same sample indices whichever algorithm consumes them.
"""

from __future__ import annotations

import contextlib
import dataclasses
import math
import sys
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import DEBUG
from .data import BinaryTask, Dataset
from .errors import ConfigError, InputError
from .kernel import Kernel, KernelConfig, QuantumKernel, SpsaConfig, alignment, spsa_gradient, weighted_alignment
from .neural import OptimizerState, apply_update, features


def squared_loss(beta: float, gamma: float) -> float:
    return (beta - gamma) ** 2


def linear_loss(beta: float, gamma: float) -> float:
    return beta - gamma


LOSSES = {"squared": squared_loss, "linear": linear_loss}


@dataclass
class TrainConfig:
    """Hyperparameters shared by the training algorithms."""

    steps: int
    lam: float
    kernel: Kernel
    mu: float = 1.0
    batch_k: int = 4
    spsa: SpsaConfig = field(default_factory=SpsaConfig)
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    svm_steps: int = 600
    svm_lambda: Optional[float] = None
    objective_every: int = 0
    loss: str = "squared"

    def __post_init__(self):
        if isinstance(self.kernel, KernelConfig):
            self.kernel = QuantumKernel(self.kernel)
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if self.steps < 0:
            raise ConfigError("steps must be nonnegative")
        if self.batch_k < 1:
            raise ConfigError("batch_k must be at least 1")
        if not math.isfinite(self.mu):
            raise ConfigError("mu must be finite")
        if self.svm_lambda is None:
            self.svm_lambda = self.lam
        if not self.svm_lambda > 0:
            raise ConfigError("svm_lambda must be positive")
        if self.loss not in LOSSES:
            raise ConfigError(f"Unknown loss '{self.loss}', expected one of {sorted(LOSSES)}")


@dataclass
class Streams:
    index: np.random.Generator
    spsa: np.random.Generator
    shots: np.random.Generator
    dropout: np.random.Generator
    objective: np.random.Generator


def make_streams(seed: int) -> Streams:
    """Independent generators for sampling, SPSA, shots, dropout and diagnostics."""
    children = np.random.SeedSequence(seed).spawn(5)
    return Streams(*(np.random.default_rng(child) for child in children))


@dataclass
class EvaluationResult:
    accuracy: float
    count: int
    true_positive: int
    true_negative: int
    false_positive: int
    false_negative: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Classifier:
    """g(x) = (1/(lam*T)) * sum_s alpha_s y_s K(z_s, F(x)); predict maps g >= 0 to +1."""

    alpha: np.ndarray
    labels: np.ndarray
    Z: np.ndarray
    net: object
    lam: float
    total_steps: int
    kernel: Kernel
    task: Optional[BinaryTask] = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.Z = np.asarray(self.Z, dtype=np.float64)
        if self.Z.ndim == 1:
            self.Z = self.Z[:, None]
        if not (len(self.alpha) == len(self.labels) == len(self.Z)):
            raise InputError("alpha, labels and Z must have equal length")

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.alpha > 0)

    def decision_values(self, inputs, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        feats = features(self.net, inputs)
        support = self.support
        if len(support) == 0:
            return np.zeros(len(feats))
        coef = self.alpha[support] * self.labels[support]
        K = self.kernel.cross(self.Z[support], feats, rng)
        return coef @ K / (self.lam * self.total_steps)

    def predict(self, inputs, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return np.where(self.decision_values(inputs, rng) >= 0.0, 1, -1)


def decision_value(classifier: Classifier, x, rng: Optional[np.random.Generator] = None) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(classifier.decision_values(x[None], rng)[0])


def predict(classifier: Classifier, x, rng: Optional[np.random.Generator] = None) -> int:
    return 1 if decision_value(classifier, x, rng) >= 0.0 else -1


def evaluate(classifier: Classifier, dataset: Dataset, rng: Optional[np.random.Generator] = None) -> EvaluationResult:
    """Accuracy and confusion counts (+1 is the positive class)."""
    if dataset.m == 0:
        raise InputError("Cannot evaluate on an empty dataset")
    predicted = classifier.predict(dataset.inputs, rng)
    actual = dataset.labels
    return EvaluationResult(
        accuracy=float(np.mean(predicted == actual)),
        count=dataset.m,
        true_positive=int(np.sum((predicted == 1) & (actual == 1))),
        true_negative=int(np.sum((predicted == -1) & (actual == -1))),
        false_positive=int(np.sum((predicted == 1) & (actual == -1))),
        false_negative=int(np.sum((predicted == -1) & (actual == 1))),
    )


@dataclass
class TrainOutput:
    """Coefficients, labels and features produced by Algorithms 1-3."""

    alpha: np.ndarray
    labels: np.ndarray
    Z: np.ndarray
    net: object
    lam: float
    total_steps: int
    step_log: list = field(default_factory=list)
    kernel_evaluations: int = 0

    def to_classifier(self, kernel: Kernel, task: Optional[BinaryTask] = None) -> Classifier:
        return Classifier(self.alpha, self.labels, self.Z, self.net, self.lam, self.total_steps, kernel, task)


@dataclass
class TrainResult:
    classifier: Classifier
    step_log: list
    kernel_evaluations: int


@contextlib.contextmanager
def uncounted(kernel: Kernel):
    """Kernel evaluations inside the block are left out of ``kernel.evaluations``."""
    before = kernel.evaluations
    try:
        yield kernel
    finally:
        kernel.evaluations = before


def primal_objective(kernel: Kernel, Z, y, alpha, lam: float, total_steps: int, rng=None) -> float:
    """lam/2 * |f|^2 + mean hinge loss of f = (1/(lam*T)) sum alpha y K(z, .) over (Z, y)."""
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(alpha, dtype=np.float64) * y / (lam * total_steps)
    K = kernel.gram(Z, rng)
    f = K @ w
    return float(lam / 2.0 * (w @ f) + np.mean(np.maximum(0.0, 1.0 - y * f)))


def _require_steps(steps: int, minimum: int, name: str) -> int:
    if steps < minimum:
        raise ConfigError(f"{name} needs at least {minimum} steps, got {steps}")
    return steps


def _check_setup(data: Dataset, cfg: TrainConfig, net):
    data.require_trainable()
    dim = cfg.kernel.feature_dim
    if dim is not None and dim != net.output_dim:
        raise InputError(f"Network outputs dimension {net.output_dim} but the kernel expects {dim}")


def _check_batch_k(cfg: TrainConfig, m: int):
    if cfg.batch_k > m:
        raise ConfigError(f"batch_k = {cfg.batch_k} exceeds the {m} available samples")


def _progress(name: str, t: int, total: int, record: dict):
    if DEBUG and (t == total or t % max(1, total // 10) == 0):
        details = ", ".join(f"{k}={v:.4g}" for k, v in record.items() if isinstance(v, float))
        print(f"[Train] {name} step {t}/{total}: {details}", file=sys.stderr)


def _maybe_objective(record: dict, cfg: TrainConfig, t: int, streams: Streams, Z, y, alpha):
    if cfg.objective_every and t % cfg.objective_every == 0 and np.any(alpha):
        with uncounted(cfg.kernel):
            record["primal_objective"] = primal_objective(
                cfg.kernel, Z, y, alpha, cfg.lam, t, streams.objective
            )


def _optimizer(net, cfg: TrainConfig) -> OptimizerState:
    return OptimizerState.for_net(net, cfg.learning_rate, cfg.momentum, cfg.weight_decay)


def algorithm1(data: Dataset, cfg: TrainConfig, net) -> TrainOutput:
    """Per-step coefficients: one stored feature vector per step."""
    T = _require_steps(cfg.steps, 2, "algorithm1")
    _check_setup(data, cfg, net)
    kernel, lam = cfg.kernel, cfg.lam
    streams = make_streams(cfg.seed)
    opt = _optimizer(net, cfg)
    start = kernel.evaluations
    net.train()

    Z = np.zeros((T, net.output_dim))
    alpha = np.zeros(T)
    labels = np.zeros(T, dtype=np.int64)

    i = int(streams.index.integers(data.m))
    Z[0] = features(net, data.inputs[i][None])[0]
    alpha[0] = 1.0
    labels[0] = data.labels[i]
    step_log = [{"step": 1, "index": i, "updated": True}]

    for t in range(2, T + 1):
        i = int(streams.index.integers(data.m))
        y = int(data.labels[i])
        # stored features and margins use dropout-free features under theta_t
        z = features(net, data.inputs[i][None])[0]

        support = np.flatnonzero(alpha[: t - 1])
        coef = alpha[support] * labels[support]
        scale = lam * (t - 1)
        Z_support = Z[support]
        margin = y * float(coef @ kernel.cross(Z_support, z[None], streams.shots)[:, 0]) / scale

        Z[t - 1] = z
        labels[t - 1] = y
        updated = margin < 1.0
        if updated:
            alpha[t - 1] = 1.0
            if net.params:
                z_train, cache = net.forward(data.inputs[i], rng=streams.dropout, training=True)

                def h(z_in):
                    return -y * float(coef @ kernel.cross(Z_support, z_in[None], streams.shots)[:, 0]) / scale

                upstream = spsa_gradient(h, z_train, cfg.spsa, streams.spsa)
                apply_update(net, opt, net.backward(cache, upstream))

        record = {"step": t, "index": i, "margin": margin, "updated": updated, "objective": -margin}
        _maybe_objective(record, cfg, t, streams, Z[:t], labels[:t], alpha[:t])
        step_log.append(record)
        _progress("alg1", t, T, record)

    net.eval()
    return TrainOutput(alpha, labels, Z, net, lam, T, step_log, kernel.evaluations - start)


def algorithm2(data: Dataset, cfg: TrainConfig, net) -> TrainOutput:
    """Per-sample coefficients; support features are recomputed under the current parameters."""
    T = _require_steps(cfg.steps, 2, "algorithm2")
    _check_setup(data, cfg, net)
    kernel, lam = cfg.kernel, cfg.lam
    streams = make_streams(cfg.seed)
    opt = _optimizer(net, cfg)
    start = kernel.evaluations
    net.train()

    alpha = np.zeros(data.m)
    i = int(streams.index.integers(data.m))
    alpha[i] = 1.0
    step_log = [{"step": 1, "index": i, "updated": True}]

    for t in range(2, T + 1):
        i = int(streams.index.integers(data.m))
        y = int(data.labels[i])
        support = np.flatnonzero(alpha)
        rows = np.append(support, i)
        F = features(net, data.inputs[rows])

        coef = alpha[support] * data.labels[support]
        scale = lam * (t - 1)
        margin = y * float(coef @ kernel.cross(F[:-1], F[-1:], streams.shots)[:, 0]) / scale
        updated = margin < 1.0
        if updated:
            if net.params:
                F_train, cache = net.forward(data.inputs[rows], rng=streams.dropout, training=True)
                shape = F_train.shape

                # joint perturbation of the support features and z_t
                def h(flat):
                    Zc = flat.reshape(shape)
                    return -y * float(coef @ kernel.cross(Zc[:-1], Zc[-1:], streams.shots)[:, 0]) / scale

                upstream = spsa_gradient(h, F_train.ravel(), cfg.spsa, streams.spsa).reshape(shape)
                apply_update(net, opt, net.backward(cache, upstream))
            alpha[i] += 1.0

        record = {
            "step": t,
            "index": i,
            "margin": margin,
            "updated": updated,
            "objective": -margin,
            "support_size": int(len(support)),
        }
        _maybe_objective(record, cfg, t, streams, F[:-1], data.labels[support], alpha[support])
        step_log.append(record)
        _progress("alg2", t, T, record)

    net.eval()
    Z = features(net, data.inputs)
    return TrainOutput(alpha, data.labels.copy(), Z, net, lam, T, step_log, kernel.evaluations - start)


def algorithm3(data: Dataset, cfg: TrainConfig, net) -> TrainOutput:
    """Mini-batch coefficients (steps of 1/k) with an alignment objective for the network."""
    T = _require_steps(cfg.steps, 2, "algorithm3")
    _check_setup(data, cfg, net)
    _check_batch_k(cfg, data.m)
    kernel, lam, k, mu = cfg.kernel, cfg.lam, cfg.batch_k, cfg.mu
    streams = make_streams(cfg.seed)
    opt = _optimizer(net, cfg)
    start = kernel.evaluations
    net.train()

    alpha = np.zeros(data.m)
    batch = streams.index.choice(data.m, size=k, replace=False)
    alpha[batch] = 1.0 / k
    step_log = [{"step": 1, "batch": batch.tolist(), "violations": k}]

    for t in range(2, T + 1):
        batch = streams.index.choice(data.m, size=k, replace=False)
        y_batch = data.labels[batch].astype(np.float64)
        support = np.flatnonzero(alpha)
        rows = np.union1d(support, batch)
        F = features(net, data.inputs[rows])
        pos_support = np.searchsorted(rows, support)
        pos_batch = np.searchsorted(rows, batch)

        coef = alpha[support] * data.labels[support]
        margins = y_batch * (coef @ kernel.cross(F[pos_support], F[pos_batch], streams.shots)) / (lam * (t - 1))
        violators = margins < 1.0
        alpha[batch[violators]] += 1.0 / k
        alpha_batch = alpha[batch]

        def terms(F_batch):
            K = kernel.gram(F_batch, streams.shots)
            weighted = weighted_alignment(K, y_batch, alpha_batch)
            plain = alignment(K, y_batch)
            return mu * weighted - plain, weighted, plain

        if net.params:
            F_batch, cache = net.forward(data.inputs[batch], rng=streams.dropout, training=True)
        else:
            F_batch, cache = F[pos_batch], None
        objective, weighted, plain = terms(F_batch)
        if net.params:
            grad = spsa_gradient(
                lambda flat: terms(flat.reshape(F_batch.shape))[0], F_batch.ravel(), cfg.spsa, streams.spsa
            )
            apply_update(net, opt, net.backward(cache, grad.reshape(F_batch.shape)))

        record = {
            "step": t,
            "batch": batch.tolist(),
            "violations": int(violators.sum()),
            "min_margin": float(margins.min()),
            "weighted_alignment": weighted,
            "alignment": plain,
            "objective": objective,
        }
        _maybe_objective(
            record, cfg, t, streams, F[pos_support], data.labels[support], alpha[support]
        )
        step_log.append(record)
        _progress("alg3", t, T, record)

    net.eval()
    Z = features(net, data.inputs)
    return TrainOutput(alpha, data.labels.copy(), Z, net, lam, T, step_log, kernel.evaluations - start)


def pegasos_fit(
    kernel,
    Z,
    y,
    lam: float,
    steps: int,
    rng: Optional[np.random.Generator] = None,
    shots_rng: Optional[np.random.Generator] = None,
    step_log: Optional[list] = None,
) -> tuple:
    """Kernelized Pegasos on fixed feature points; returns (alpha, steps)."""
    if isinstance(kernel, KernelConfig):
        kernel = QuantumKernel(kernel)
    _require_steps(steps, 2, "pegasos_fit")
    if not lam > 0:
        raise ConfigError("lambda must be positive")
    Z = np.asarray(Z, dtype=np.float64)
    Dataset(np.zeros((len(Z), 0)), y).require_trainable()
    y = np.asarray(y, dtype=np.int64)
    if rng is None:
        rng = make_streams(0).index

    m = len(y)
    alpha = np.zeros(m)
    i = int(rng.integers(m))
    alpha[i] = 1.0
    if step_log is not None:
        step_log.append({"step": 1, "index": i, "updated": True})

    for t in range(2, steps + 1):
        i = int(rng.integers(m))
        support = np.flatnonzero(alpha)
        coef = alpha[support] * y[support]
        margin = y[i] * float(coef @ kernel.cross(Z[support], Z[i][None], shots_rng)[:, 0]) / (lam * (t - 1))
        updated = margin < 1.0
        if updated:
            alpha[i] += 1.0
        if step_log is not None:
            step_log.append({"step": t, "index": i, "margin": margin, "updated": updated})
    return alpha, steps


def algorithm4(
    data: Dataset,
    cfg: TrainConfig,
    net,
    loss: Optional[Callable[[float, float], float]] = None,
    fit_svm: Callable = pegasos_fit,
    task: Optional[BinaryTask] = None,
    step_log: Optional[list] = None,
) -> tuple:
    """Part 1 aligns the kernel by training the network; Part 2 fits an SVM on the final features.

    Returns ``(classifier, net)``.
    """
    T = _require_steps(cfg.steps, 0, "algorithm4")
    _check_setup(data, cfg, net)
    _check_batch_k(cfg, data.m)
    kernel, k = cfg.kernel, cfg.batch_k
    loss = loss or LOSSES[cfg.loss]
    streams = make_streams(cfg.seed)
    opt = _optimizer(net, cfg)
    log = step_log if step_log is not None else []
    net.train()

    for t in range(1, T + 1):
        batch = streams.index.choice(data.m, size=k, replace=False)
        y_batch = data.labels[batch].astype(np.float64)
        F, cache = net.forward(data.inputs[batch], rng=streams.dropout, training=True)

        def h(flat):
            return loss(1.0, alignment(kernel.gram(flat.reshape(F.shape), streams.shots), y_batch))

        value = alignment(kernel.gram(F, streams.shots), y_batch)
        if net.params:
            upstream = spsa_gradient(h, F.ravel(), cfg.spsa, streams.spsa).reshape(F.shape)
            apply_update(net, opt, net.backward(cache, upstream))
        record = {"step": t, "phase": "align", "batch": batch.tolist(), "alignment": value, "loss": loss(1.0, value)}
        log.append(record)
        _progress("alg4", t, T, record)

    net.eval()
    Z = features(net, data.inputs)
    svm_log = []
    alpha, svm_steps = fit_svm(
        kernel, Z, data.labels, cfg.svm_lambda, cfg.svm_steps,
        rng=streams.index, shots_rng=streams.shots, step_log=svm_log,
    )
    for record in svm_log:
        record["step"] += T
        record["phase"] = "svm"
    log.extend(svm_log)
    if DEBUG:
        print(f"[Train] alg4 fitted SVM on {data.m} feature points, {int(np.count_nonzero(alpha))} supports", file=sys.stderr)

    classifier = Classifier(alpha, data.labels.copy(), Z, net, cfg.svm_lambda, svm_steps, kernel, task)
    return classifier, net


def train(data: Dataset, cfg: TrainConfig, net, algorithm: str, task: Optional[BinaryTask] = None) -> TrainResult:
    """Run one of alg1..alg4 or pegasos-only and build its classifier."""
    start = cfg.kernel.evaluations
    if algorithm in ("alg4", "pegasos-only"):
        if algorithm == "pegasos-only":
            cfg = dataclasses.replace(cfg, steps=0)
        log = []
        classifier, _ = algorithm4(data, cfg, net, task=task, step_log=log)
        return TrainResult(classifier, log, cfg.kernel.evaluations - start)

    runners = {"alg1": algorithm1, "alg2": algorithm2, "alg3": algorithm3}
    if algorithm not in runners:
        raise ConfigError(f"Unknown algorithm '{algorithm}'")
    output = runners[algorithm](data, cfg, net)
    return TrainResult(output.to_classifier(cfg.kernel, task), output.step_log, output.kernel_evaluations)
