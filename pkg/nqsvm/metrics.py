"""JSON-lines metrics sink for training runs."""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np

from .errors import ContractError


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


class MetricsWriter:
    """Append-only writer: one sorted-key JSON object per line, flushed per record."""

    def __init__(self, path, run_id: str, wall_clock: bool = False):
        self.path = Path(path)
        self.run_id = run_id
        self.wall_clock = wall_clock
        self.last_step = None
        self.records = 0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, "w", encoding="utf-8")

    def emit(self, step: int, event: str, payload: dict = None):
        if self._file.closed:
            raise ContractError(f"Metrics file {self.path} is already closed")
        if self.last_step is not None and step < self.last_step:
            raise ContractError(f"Metrics step {step} after step {self.last_step}")
        record = {"run_id": self.run_id, "step": int(step), "event": event, "payload": _jsonable(payload or {})}
        if self.wall_clock:
            record["wall_ms"] = int(time.time() * 1000)
        self._file.write(json.dumps(record, sort_keys=True) + "\n")
        self._file.flush()
        self.last_step = int(step)
        self.records += 1

    def emit_config(self, config: dict):
        self.emit(0, "config", config)

    def emit_steps(self, step_log: list):
        for record in step_log:
            payload = {k: v for k, v in record.items() if k != "step"}
            self.emit(record["step"], "step", payload)

    def close(self):
        if not self._file.closed:
            self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_metrics(path) -> list:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
