"""Trainable feature networks F_theta with hand-written backward passes.

``FeatureNet`` is the fixed image pipeline
conv 10x10 (4 channels) -> channel dropout -> max-pool 2x2 -> ReLU -> dense 324->4
-> v/max(|v|, eps) -> x2 -> tanh -> x pi/4.
``PassThroughNet`` feeds (optionally scaled) inputs straight to the kernel and
``DenseNet`` is a single trainable affine layer for low-dimensional data.
All work on batches; a single input is accepted and returned unbatched.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import DEBUG
from .errors import ConfigError, ContractError, InputError, NumericalError

INIT_SCHEMES = {"uniform-fan-in"}


@dataclass
class ForwardCache:
    """Activations saved by one forward call for one backward call."""

    net_id: int
    version: int
    single: bool
    saved: dict = field(default_factory=dict)
    consumed: bool = False


def tanh_backward(t: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Gradient through tanh given its output ``t``."""
    return grad * (1.0 - t * t)


class FeatureNet:
    """Convolutional feature network mapping 28x28 images into R^4."""

    IMAGE_SIZE = 28
    KERNEL_SIZE = 10
    CHANNELS = 4
    POOL = 2
    OUTPUT_DIM = 4

    kind = "conv"

    def __init__(
        self,
        params: dict,
        dropout_p: float = 0.2,
        epsilon_norm: float = 1e-8,
        pre_tanh_scale: float = 2.0,
        post_tanh_scale: float = math.pi / 4,
    ):
        if not 0.0 <= dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")
        if not epsilon_norm > 0:
            raise ConfigError("epsilon_norm must be positive")

        conv_out = self.IMAGE_SIZE - self.KERNEL_SIZE + 1
        pooled = conv_out // self.POOL
        self.dense_in = self.CHANNELS * pooled * pooled
        expected = {
            "conv_weight": (self.CHANNELS, 1, self.KERNEL_SIZE, self.KERNEL_SIZE),
            "conv_bias": (self.CHANNELS,),
            "dense_weight": (self.OUTPUT_DIM, self.dense_in),
            "dense_bias": (self.OUTPUT_DIM,),
        }
        assert (conv_out, pooled, self.dense_in) == (19, 9, 324)
        for name, shape in expected.items():
            if name not in params or params[name].shape != shape:
                got = params[name].shape if name in params else None
                raise InputError(f"Parameter {name} must have shape {shape}, got {got}")

        self.params = {name: np.asarray(params[name], dtype=np.float64) for name in expected}
        self.dropout_p = float(dropout_p)
        self.epsilon_norm = float(epsilon_norm)
        self.pre_tanh_scale = float(pre_tanh_scale)
        self.post_tanh_scale = float(post_tanh_scale)
        self.conv_out = conv_out
        self.pooled = pooled
        self.training = True
        self.version = 0

    @property
    def output_dim(self) -> int:
        return self.OUTPUT_DIM

    @property
    def input_shape(self) -> tuple:
        return (self.IMAGE_SIZE, self.IMAGE_SIZE)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "dropout_p": self.dropout_p,
            "epsilon_norm": self.epsilon_norm,
            "pre_tanh_scale": self.pre_tanh_scale,
            "post_tanh_scale": self.post_tanh_scale,
        }

    def _batch(self, images) -> tuple:
        x = np.asarray(images, dtype=np.float64)
        single = x.shape == self.input_shape
        if single:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != self.input_shape:
            raise InputError(f"Expected {self.input_shape} images, got shape {np.shape(images)}")
        if not np.all(np.isfinite(x)):
            raise InputError("Images contain non-finite values")
        return x, single

    def forward(self, images, rng: Optional[np.random.Generator] = None, training: Optional[bool] = None):
        """Features of one image or a batch, plus the cache for ``backward``."""
        x, single = self._batch(images)
        training = self.training if training is None else training
        batch = x.shape[0]
        p = self.params

        windows = sliding_window_view(x, (self.KERNEL_SIZE, self.KERNEL_SIZE), axis=(1, 2))
        conv = np.einsum("bhwij,cij->bchw", windows, p["conv_weight"][:, 0])
        conv += p["conv_bias"][None, :, None, None]

        mask = np.ones((batch, self.CHANNELS))
        if training and self.dropout_p > 0:
            if rng is None:
                raise ConfigError("Train-mode forward with dropout needs a random source")
            keep = rng.random((batch, self.CHANNELS)) >= self.dropout_p
            mask = keep / (1.0 - self.dropout_p)
        dropped = conv * mask[:, :, None, None]

        # floor pooling: the last row and column of the odd map are dropped
        size = self.pooled * self.POOL
        blocks = (
            dropped[:, :, :size, :size]
            .reshape(batch, self.CHANNELS, self.pooled, self.POOL, self.pooled, self.POOL)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, self.CHANNELS, self.pooled, self.pooled, self.POOL * self.POOL)
        )
        argmax = blocks.argmax(axis=-1)
        pooled = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
        activated = np.maximum(pooled, 0.0)
        flat = activated.reshape(batch, self.dense_in)

        v = flat @ p["dense_weight"].T + p["dense_bias"]
        v_norm = np.linalg.norm(v, axis=1)
        unit = v / np.maximum(v_norm, self.epsilon_norm)[:, None]
        t = np.tanh(self.pre_tanh_scale * unit)
        features = self.post_tanh_scale * t

        cache = ForwardCache(
            net_id=id(self),
            version=self.version,
            single=single,
            saved={
                "windows": windows,
                "mask": mask,
                "argmax": argmax,
                "pooled": pooled,
                "flat": flat,
                "v": v,
                "v_norm": v_norm,
                "t": t,
            },
        )
        return (features[0] if single else features), cache

    def backward(self, cache: ForwardCache, upstream) -> dict:
        """Parameter gradients of ``upstream . features`` summed over the batch."""
        _claim(self, cache)
        s = cache.saved
        batch = s["v"].shape[0]
        upstream = np.asarray(upstream, dtype=np.float64).reshape(batch, self.OUTPUT_DIM)
        p = self.params

        d_t = upstream * self.post_tanh_scale
        d_unit = self.pre_tanh_scale * tanh_backward(s["t"], d_t)

        v, v_norm = s["v"], s["v_norm"]
        above = v_norm > self.epsilon_norm
        safe_norm = np.where(above, v_norm, 1.0)
        projected = d_unit / safe_norm[:, None] - v * (
            np.einsum("ij,ij->i", v, d_unit) / safe_norm ** 3
        )[:, None]
        d_v = np.where(above[:, None], projected, d_unit / self.epsilon_norm)

        grads = {
            "dense_weight": d_v.T @ s["flat"],
            "dense_bias": d_v.sum(axis=0),
        }
        d_flat = d_v @ p["dense_weight"]
        d_pooled = d_flat.reshape(s["pooled"].shape) * (s["pooled"] > 0)

        window_area = self.POOL * self.POOL
        d_blocks = np.zeros(s["pooled"].shape + (window_area,))
        np.put_along_axis(d_blocks, s["argmax"][..., None], d_pooled[..., None], axis=-1)
        size = self.pooled * self.POOL
        d_crop = (
            d_blocks.reshape(batch, self.CHANNELS, self.pooled, self.pooled, self.POOL, self.POOL)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, self.CHANNELS, size, size)
        )
        d_dropped = np.zeros((batch, self.CHANNELS, self.conv_out, self.conv_out))
        d_dropped[:, :, :size, :size] = d_crop
        d_conv = d_dropped * s["mask"][:, :, None, None]

        grads["conv_weight"] = np.einsum("bchw,bhwij->cij", d_conv, s["windows"])[:, None]
        grads["conv_bias"] = d_conv.sum(axis=(0, 2, 3))
        return grads


class PassThroughNet:
    """F(x) = scale * x, with no trainable parameters."""

    kind = "pass-through"

    def __init__(self, input_dim: int, scale: float = 1.0):
        if input_dim < 1:
            raise ConfigError("input_dim must be at least 1")
        self.input_dim = int(input_dim)
        self.scale = float(scale)
        self.params = {}
        self.training = True
        self.version = 0

    @property
    def output_dim(self) -> int:
        return self.input_dim

    @property
    def input_shape(self) -> tuple:
        return (self.input_dim,)

    def parameter_count(self) -> int:
        return 0

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def describe(self) -> dict:
        return {"kind": self.kind, "input_dim": self.input_dim, "scale": self.scale}

    def forward(self, inputs, rng: Optional[np.random.Generator] = None, training: Optional[bool] = None):
        x = np.asarray(inputs, dtype=np.float64)
        single = x.shape == self.input_shape
        if single:
            x = x[None]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise InputError(f"Expected inputs of dimension {self.input_dim}, got shape {np.shape(inputs)}")
        features = self.scale * x
        cache = ForwardCache(net_id=id(self), version=self.version, single=single)
        return (features[0] if single else features), cache

    def backward(self, cache: ForwardCache, upstream) -> dict:
        _claim(self, cache)
        return {}


class DenseNet:
    """F(x) = W x + b: one trainable dense layer for low-dimensional inputs."""

    kind = "dense"

    def __init__(self, params: dict):
        if set(params) != {"weight", "bias"}:
            raise InputError(f"Dense parameters must be weight and bias, got {sorted(params)}")
        weight = np.asarray(params["weight"], dtype=np.float64)
        bias = np.asarray(params["bias"], dtype=np.float64)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise InputError(f"Dense weight {weight.shape} and bias {bias.shape} do not fit together")
        self.params = {"weight": weight, "bias": bias}
        self.training = True
        self.version = 0

    @property
    def input_dim(self) -> int:
        return self.params["weight"].shape[1]

    @property
    def output_dim(self) -> int:
        return self.params["weight"].shape[0]

    @property
    def input_shape(self) -> tuple:
        return (self.input_dim,)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def describe(self) -> dict:
        return {"kind": self.kind, "input_dim": self.input_dim, "output_dim": self.output_dim}

    def forward(self, inputs, rng: Optional[np.random.Generator] = None, training: Optional[bool] = None):
        x = np.asarray(inputs, dtype=np.float64)
        single = x.shape == self.input_shape
        if single:
            x = x[None]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise InputError(f"Expected inputs of dimension {self.input_dim}, got shape {np.shape(inputs)}")
        features = x @ self.params["weight"].T + self.params["bias"]
        cache = ForwardCache(net_id=id(self), version=self.version, single=single, saved={"x": x})
        return (features[0] if single else features), cache

    def backward(self, cache: ForwardCache, upstream) -> dict:
        _claim(self, cache)
        x = cache.saved["x"]
        upstream = np.asarray(upstream, dtype=np.float64).reshape(len(x), self.output_dim)
        return {"weight": upstream.T @ x, "bias": upstream.sum(axis=0)}


def init_dense(input_dim: int, output_dim: Optional[int] = None, scale: float = 1.0) -> DenseNet:
    """DenseNet starting at the scaled identity map (W = scale * I, b = 0)."""
    output_dim = input_dim if output_dim is None else output_dim
    if input_dim < 1 or output_dim < 1:
        raise ConfigError("Dense network dimensions must be at least 1")
    params = {"weight": scale * np.eye(output_dim, input_dim), "bias": np.zeros(output_dim)}
    return DenseNet(params)


def _claim(net, cache: ForwardCache):
    if cache.net_id != id(net) or cache.version != net.version:
        raise ContractError("Forward cache does not belong to the current network parameters")
    if cache.consumed:
        raise ContractError("Forward cache was already used by a backward call")
    cache.consumed = True


def features(net, inputs, chunk: int = 512) -> np.ndarray:
    """Eval-mode features of a batch, computed in chunks; a single input becomes a batch of one."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape == tuple(net.input_shape):
        inputs = inputs[None]
    if len(inputs) == 0:
        return np.zeros((0, net.output_dim))
    parts = [
        net.forward(inputs[start:start + chunk], training=False)[0]
        for start in range(0, len(inputs), chunk)
    ]
    return np.concatenate(parts, axis=0)


@dataclass
class OptimizerState:
    """SGD with momentum and L2 weight decay."""

    velocity: dict
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")

    @classmethod
    def for_net(cls, net, learning_rate=0.05, momentum=0.9, weight_decay=1e-4) -> "OptimizerState":
        velocity = {name: np.zeros_like(value) for name, value in net.params.items()}
        return cls(velocity, learning_rate, momentum, weight_decay)


def apply_update(net, state: OptimizerState, gradients: dict):
    """v <- momentum*v + g + wd*theta; theta <- theta - lr*v (in place)."""
    if set(gradients) != set(net.params):
        raise InputError(f"Gradient keys {sorted(gradients)} do not match parameters {sorted(net.params)}")
    for name, grad in gradients.items():
        if grad.shape != net.params[name].shape:
            raise InputError(f"Gradient for {name} has shape {grad.shape}, expected {net.params[name].shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"Non-finite gradient for {name}")

    for name, theta in net.params.items():
        v = state.velocity[name]
        v *= state.momentum
        v += gradients[name] + state.weight_decay * theta
        theta -= state.learning_rate * v
    if net.params:
        net.version += 1
    return net, state


def init(
    seed: int,
    scheme: str = "uniform-fan-in",
    dropout_p: float = 0.2,
    epsilon_norm: float = 1e-8,
    pre_tanh_scale: float = 2.0,
    post_tanh_scale: float = math.pi / 4,
) -> FeatureNet:
    """Deterministic FeatureNet: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    if scheme not in INIT_SCHEMES:
        raise ConfigError(f"Unknown init scheme '{scheme}', expected one of {sorted(INIT_SCHEMES)}")
    rng = np.random.default_rng(seed)
    k = FeatureNet.KERNEL_SIZE
    channels = FeatureNet.CHANNELS
    conv_bound = 1.0 / math.sqrt(k * k)
    dense_in = channels * ((FeatureNet.IMAGE_SIZE - k + 1) // FeatureNet.POOL) ** 2
    dense_bound = 1.0 / math.sqrt(dense_in)
    params = {
        "conv_weight": rng.uniform(-conv_bound, conv_bound, size=(channels, 1, k, k)),
        "conv_bias": np.zeros(channels),
        "dense_weight": rng.uniform(-dense_bound, dense_bound, size=(FeatureNet.OUTPUT_DIM, dense_in)),
        "dense_bias": np.zeros(FeatureNet.OUTPUT_DIM),
    }
    if DEBUG:
        print(f"[Model] Initialized conv feature net from seed {seed}", file=sys.stderr)
    return FeatureNet(params, dropout_p, epsilon_norm, pre_tanh_scale, post_tanh_scale)
