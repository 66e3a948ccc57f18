"""Versioned model files.

Layout: magic ``NQSVM\\0``, little-endian uint32 format version, uint32 header
length, canonical JSON header, then the arrays listed in the header as raw
little-endian float64 in header order.
"""

from __future__ import annotations

import json
import struct
import sys
from pathlib import Path

import numpy as np

from .config import DEBUG
from .errors import FormatError

MAGIC = b"NQSVM\0"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<II")


def _canonical(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write(path, header: dict, arrays: dict):
    path = Path(path)
    header = dict(header, arrays=[{"name": name, "shape": list(a.shape)} for name, a in arrays.items()])
    header_bytes = _canonical(header)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_PREFIX.pack(FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for a in arrays.values():
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read(path) -> tuple:
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read()

    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a model file (bad magic at offset 0)")
    offset = len(MAGIC)
    if len(raw) < offset + _PREFIX.size:
        raise FormatError(f"{path}: truncated header prefix at offset {len(raw)}")
    version, header_len = _PREFIX.unpack_from(raw, offset)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: model format version {version}, this build reads version {FORMAT_VERSION}")
    offset += _PREFIX.size
    if len(raw) < offset + header_len:
        raise FormatError(f"{path}: truncated JSON header at offset {len(raw)}")
    try:
        header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable JSON header at offset {offset}: {e}") from e
    offset += header_len

    arrays = {}
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if len(raw) < offset + nbytes:
            raise FormatError(f"{path}: truncated payload '{entry['name']}' at offset {offset}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} unexpected bytes at offset {offset}")
    return header, arrays


def _net_from(description: dict, params: dict):
    from .neural import DenseNet, FeatureNet, PassThroughNet

    kind = description.get("kind")
    if kind == FeatureNet.kind:
        net = FeatureNet(
            params,
            dropout_p=description["dropout_p"],
            epsilon_norm=description["epsilon_norm"],
            pre_tanh_scale=description["pre_tanh_scale"],
            post_tanh_scale=description["post_tanh_scale"],
        )
    elif kind == PassThroughNet.kind:
        net = PassThroughNet(description["input_dim"], description["scale"])
    elif kind == DenseNet.kind:
        net = DenseNet(params)
    else:
        raise FormatError(f"Unknown network kind '{kind}' in model file")
    return net.eval()


def _kernel_from(description: dict):
    from .kernel import KernelConfig, LinearKernel, QuantumKernel, RbfKernel
    from .qsim import build_zz_feature_map

    kind = description.get("kind")
    if kind == QuantumKernel.name:
        circuit = build_zz_feature_map(
            description["num_qubits"], description["repetitions"], description["entanglement"]
        )
        return QuantumKernel(KernelConfig(circuit, description["mode"], description["shots"]))
    if kind == LinearKernel.name:
        return LinearKernel()
    if kind == RbfKernel.name:
        return RbfKernel(description["gamma"])
    raise FormatError(f"Unknown kernel kind '{kind}' in model file")


def _net_arrays(net) -> dict:
    return {f"net/{name}": value for name, value in sorted(net.params.items())}


def _split_net_arrays(arrays: dict) -> dict:
    return {name[len("net/"):]: value for name, value in arrays.items() if name.startswith("net/")}


def save_net(path, net):
    """Write network parameters and settings."""
    _write(path, {"kind": "net", "network": net.describe()}, _net_arrays(net))


def load_net(path):
    header, arrays = _read(path)
    if header.get("kind") != "net":
        raise FormatError(f"{path}: holds a '{header.get('kind')}', not a network")
    return _net_from(header["network"], _split_net_arrays(arrays))


def save_classifier(path, classifier):
    """Write a trained classifier: network, kernel settings, coefficients and features."""
    task = classifier.task
    header = {
        "kind": "classifier",
        "network": classifier.net.describe(),
        "kernel": classifier.kernel.describe(),
        "lambda": classifier.lam,
        "total_steps": classifier.total_steps,
        "task": None if task is None else {
            "positive_class": task.positive_class,
            "negative_class": task.negative_class,
        },
    }
    arrays = _net_arrays(classifier.net)
    arrays["alpha"] = classifier.alpha
    arrays["labels"] = classifier.labels.astype(np.float64)
    arrays["Z"] = classifier.Z
    _write(path, header, arrays)
    if DEBUG:
        print(f"[Model] Saved classifier with {len(classifier.support)} supports to {path}", file=sys.stderr)


def load_classifier(path):
    from .data import BinaryTask
    from .train import Classifier

    header, arrays = _read(path)
    if header.get("kind") != "classifier":
        raise FormatError(f"{path}: holds a '{header.get('kind')}', not a classifier")
    try:
        task = header["task"] and BinaryTask(**header["task"])
        return Classifier(
            alpha=arrays["alpha"],
            labels=arrays["labels"].astype(np.int64),
            Z=arrays["Z"],
            net=_net_from(header["network"], _split_net_arrays(arrays)),
            lam=header["lambda"],
            total_steps=header["total_steps"],
            kernel=_kernel_from(header["kernel"]),
            task=task or None,
        )
    except KeyError as e:
        raise FormatError(f"{path}: model file lacks {e}") from e
