"""Tests for the command-line surface."""

import json
import math

import numpy as np
import pytest

from nqsvm import config, neural
from nqsvm.main import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_SELFTEST, main
from nqsvm.metrics import read_metrics


@pytest.fixture
def run_dir(tmp_path, monkeypatch):
    out = tmp_path / "run"
    monkeypatch.setattr(config, "OUTPUT_DIR_OVERRIDE", str(out))
    return out


class TestTrain:
    def test_writes_artifacts(self, toy_config, write_config, run_dir, capsys):
        assert main(["train", "--config", str(write_config(toy_config))]) == EXIT_OK
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["kernel_evaluations"] > 0
        assert math.isfinite(summary["primal_objective"])
        assert (run_dir / "model.nqsvm").exists()

        records = read_metrics(run_dir / "metrics.jsonl")
        assert records[0]["event"] == "config"
        assert records[0]["payload"]["train"]["steps"] == 100
        assert records[-1]["event"] == "summary"
        steps = [r["step"] for r in records]
        assert steps == sorted(steps)
        for record in records:
            if record["event"] == "step" and record["step"] > 1:
                assert math.isfinite(record["payload"]["objective"])
        assert "wall_ms" not in records[0]

    def test_rerun_is_byte_identical(self, toy_config, write_config, tmp_path, monkeypatch):
        path = write_config(toy_config)
        outputs = []
        for name in ("a", "b"):
            monkeypatch.setattr(config, "OUTPUT_DIR_OVERRIDE", str(tmp_path / name))
            assert main(["train", "--config", str(path)]) == EXIT_OK
            outputs.append(tmp_path / name)
        assert (outputs[0] / "metrics.jsonl").read_bytes() == (outputs[1] / "metrics.jsonl").read_bytes()
        assert (outputs[0] / "model.nqsvm").read_bytes() == (outputs[1] / "model.nqsvm").read_bytes()

    def test_invalid_config_exits_2(self, write_config, run_dir, capsys):
        assert main(["train", "--config", str(write_config({"train": {"lambda": -1}}))]) == EXIT_CONFIG
        assert "train.lambda" in capsys.readouterr().err

    def test_missing_config_exits_4(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "absent.json")]) == EXIT_IO


class TestEval:
    def test_reproduces_training_accuracy(self, toy_config, write_config, run_dir, capsys):
        path = write_config(toy_config)
        assert main(["train", "--config", str(path)]) == EXIT_OK
        summary = json.loads((run_dir / "summary.json").read_text())
        capsys.readouterr()

        assert main(["eval", "--model", str(run_dir / "model.nqsvm"), "--data", str(path)]) == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert result["accuracy"] == summary["test"]["accuracy"]
        assert result["count"] == 40

    def test_synthetic_spec(self, toy_config, write_config, run_dir, capsys):
        main(["train", "--config", str(write_config(toy_config))])
        capsys.readouterr()
        assert main(["eval", "--model", str(run_dir / "model.nqsvm"), "--data", "synthetic:30:0.05:7"]) == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert result["true_positive"] + result["true_negative"] + result["false_positive"] + result["false_negative"] == 30

    def test_empty_spec_exits_2(self, toy_config, write_config, run_dir):
        main(["train", "--config", str(write_config(toy_config))])
        assert main(["eval", "--model", str(run_dir / "model.nqsvm"), "--data", ""]) == EXIT_CONFIG

    def test_version_mismatch_exits_2(self, toy_config, write_config, run_dir):
        main(["train", "--config", str(write_config(toy_config))])
        model = run_dir / "model.nqsvm"
        raw = bytearray(model.read_bytes())
        raw[6] = 7
        model.write_bytes(bytes(raw))
        assert main(["eval", "--model", str(model), "--data", "synthetic:10:0.1:0"]) == EXIT_CONFIG


class TestKernelMatrix:
    def _run(self, tmp_path, write_config, points, qubits):
        cfg = write_config({"kernel": {"num_qubits": qubits}})
        points_path = tmp_path / "points.csv"
        points_path.write_text(points)
        out = tmp_path / "gram.csv"
        code = main(["kernel-matrix", "--config", str(cfg), "--points", str(points_path), "--out", str(out)])
        return code, out

    def test_one_point(self, tmp_path, write_config):
        code, out = self._run(tmp_path, write_config, "0.3\n", 1)
        assert code == EXIT_OK
        assert out.read_text().strip() == "1.0"

    def test_orthogonal_points(self, tmp_path, write_config):
        code, out = self._run(tmp_path, write_config, f"0.0\n{math.pi / 2!r}\n", 1)
        assert code == EXIT_OK
        np.testing.assert_allclose(np.loadtxt(out, delimiter=","), np.eye(2), atol=1e-15)

    def test_random_points_are_psd(self, tmp_path, write_config):
        rng = np.random.default_rng(0)
        points = "\n".join(",".join(repr(float(v)) for v in row) for row in rng.uniform(0, math.pi, (20, 4)))
        code, out = self._run(tmp_path, write_config, points + "\n", 4)
        assert code == EXIT_OK
        K = np.loadtxt(out, delimiter=",")
        np.testing.assert_array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-9

    def test_ragged_rows_exit_2(self, tmp_path, write_config):
        code, _ = self._run(tmp_path, write_config, "0.1,0.2\n0.3\n", 2)
        assert code == EXIT_CONFIG

    def test_writes_csv_to_stdout(self, tmp_path, write_config, capsys):
        cfg = write_config({"kernel": {"num_qubits": 1}})
        points_path = tmp_path / "points.csv"
        points_path.write_text(f"0.0\n{math.pi / 2!r}\n0.0\n")
        assert main(["kernel-matrix", "--config", str(cfg), "--points", str(points_path)]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 3
        K = np.array([[float(v) for v in line.split(",")] for line in lines])
        np.testing.assert_allclose(K, [[1, 0, 1], [0, 1, 0], [1, 0, 1]], atol=1e-15)


class TestSelftest:
    def test_passes(self, capsys):
        assert main(["selftest"]) == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 6
        assert all(": PASS" in line for line in lines)

    def test_wrong_tanh_sign_fails(self, monkeypatch, capsys):
        monkeypatch.setattr(neural, "tanh_backward", lambda t, grad: -grad * (1.0 - t * t))
        assert main(["selftest"]) == EXIT_SELFTEST
        assert "network-gradient" in capsys.readouterr().err
