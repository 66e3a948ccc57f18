#!/usr/bin/env python3
"""Command-line entry point: train, eval, kernel-matrix and selftest.

Exit codes: 0 ok, 1 selftest failure, 2 invalid config/input/file,
3 numerical failure, 4 I/O error.
"""

import argparse
import csv
import json
import os
import sys

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def load_run_datasets(run_config) -> tuple:
    """(train, validation, test, task) for a run configuration; validation/test may be None."""
    from .data import BinaryTask, load_idx_images, load_idx_labels, make_binary, split_validation, synthetic_two_arcs

    ds = run_config["dataset"]
    seed = run_config["seed"]
    if ds["source"] == "synthetic":
        syn = ds["synthetic"]
        train = synthetic_two_arcs(syn["train_count"], syn["noise"], seed)
        test = synthetic_two_arcs(syn["test_count"], syn["noise"], seed + 1) if syn["test_count"] else None
        task = None
    else:
        task = BinaryTask(ds["positive_class"], ds["negative_class"])
        train = make_binary(
            load_idx_images(run_config.resolve_path(ds["train_images"])),
            load_idx_labels(run_config.resolve_path(ds["train_labels"])),
            task,
        )
        test = None
        if ds["test_images"] and ds["test_labels"]:
            test = make_binary(
                load_idx_images(run_config.resolve_path(ds["test_images"])),
                load_idx_labels(run_config.resolve_path(ds["test_labels"])),
                task,
            )
        if ds["train_limit"]:
            train = train.subset(range(min(ds["train_limit"], train.m)))

    validation = None
    if ds["validation_per_class"]:
        train, validation = split_validation(train, ds["validation_per_class"], seed)
    return train, validation, test, task


def cmd_train(args) -> int:
    import numpy as np

    from .config import load_run_config
    from .metrics import MetricsWriter
    from .persist import save_classifier
    from .train import evaluate, primal_objective, train, uncounted

    run_config = load_run_config(args.config)
    out_dir = run_config.output_dir()
    train_set, validation, test, task = load_run_datasets(run_config)
    net = run_config.build_network(input_dim=train_set.inputs.shape[1] if train_set.inputs.ndim == 2 else 2)
    cfg = run_config.train_config()
    algorithm = run_config["algorithm"]

    print(f"[CLI] Run {run_config.run_id}: {algorithm} on {train_set.m} samples -> {out_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    with MetricsWriter(out_dir / "metrics.jsonl", run_config.run_id, run_config["metrics"]["wall_clock"]) as writer:
        writer.emit_config(run_config.to_dict())
        result = train(train_set, cfg, net, algorithm, task)
        writer.emit_steps(result.step_log)

        classifier = result.classifier
        eval_rng = np.random.default_rng(run_config["seed"])
        summary = {
            "algorithm": algorithm,
            "steps": len(result.step_log),
            "kernel_evaluations": result.kernel_evaluations,
            "support_size": int(len(classifier.support)),
            "train": evaluate(classifier, train_set, eval_rng).to_dict(),
        }
        if validation is not None and validation.m:
            summary["validation"] = evaluate(classifier, validation, eval_rng).to_dict()
        if test is not None:
            summary["test"] = evaluate(classifier, test, eval_rng).to_dict()
        if run_config["metrics"]["objective_every"] and len(classifier.support):
            support = classifier.support
            with uncounted(classifier.kernel):
                summary["primal_objective"] = primal_objective(
                    classifier.kernel, classifier.Z[support], classifier.labels[support],
                    classifier.alpha[support], classifier.lam, classifier.total_steps, eval_rng,
                )
        writer.emit((writer.last_step or 0) + 1, "summary", summary)

    save_classifier(out_dir / "model.nqsvm", classifier)
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)

    print(f"[CLI] Train accuracy: {summary['train']['accuracy']:.4f}")
    if "validation" in summary:
        print(f"[CLI] Validation accuracy: {summary['validation']['accuracy']:.4f}")
    if "test" in summary:
        print(f"[CLI] Test accuracy: {summary['test']['accuracy']:.4f}")
    print(f"[CLI] Kernel evaluations: {summary['kernel_evaluations']}")
    return EXIT_OK


def parse_data_spec(spec: str, task=None):
    """Dataset from ``idx:IMAGES:LABELS``, ``synthetic:COUNT:NOISE:SEED`` or a run config (.json)."""
    from .config import load_run_config
    from .data import load_idx_images, load_idx_labels, make_binary, synthetic_two_arcs
    from .errors import ConfigError, InputError

    if not spec:
        raise InputError("Empty dataset spec")
    if spec.endswith(".json"):
        train_set, _, test, _ = load_run_datasets(load_run_config(spec))
        return test if test is not None else train_set

    kind, _, rest = spec.partition(":")
    parts = rest.split(":") if rest else []
    if kind == "idx" and len(parts) == 2:
        if task is None:
            raise ConfigError("Model has no class mapping; it was not trained on IDX data")
        return make_binary(load_idx_images(parts[0]), load_idx_labels(parts[1]), task)
    if kind == "synthetic" and len(parts) == 3:
        try:
            count, noise, seed = int(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as e:
            raise InputError(f"Bad synthetic dataset spec '{spec}': {e}") from e
        return synthetic_two_arcs(count, noise, seed)
    raise InputError(f"Unrecognized dataset spec '{spec}'")


def cmd_eval(args) -> int:
    import numpy as np

    from .persist import load_classifier
    from .train import evaluate

    classifier = load_classifier(args.model)
    dataset = parse_data_spec(args.data, classifier.task)
    result = evaluate(classifier, dataset, np.random.default_rng(args.seed))
    print(json.dumps(result.to_dict(), sort_keys=True))
    return EXIT_OK


def read_points(path):
    import numpy as np

    from .errors import FormatError

    rows = []
    with open(path, newline="") as f:
        for number, row in enumerate(csv.reader(f), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError as e:
                raise FormatError(f"{path}: row {number} is not numeric: {e}") from e
            if rows and len(values) != len(rows[0]):
                raise FormatError(f"{path}: row {number} has {len(values)} values, expected {len(rows[0])}")
            rows.append(values)
    if not rows:
        raise FormatError(f"{path}: no points")
    return np.array(rows, dtype=np.float64)


def cmd_kernel_matrix(args) -> int:
    import numpy as np

    from .config import load_run_config

    run_config = load_run_config(args.config)
    kernel = run_config.build_kernel()
    points = read_points(args.points)
    gram = kernel.gram(points, np.random.default_rng(run_config["seed"]))
    rows = [[repr(float(v)) for v in row] for row in gram]
    if args.out:
        with open(args.out, "w", newline="") as f:
            csv.writer(f, lineterminator="\n").writerows(rows)
        print(f"[CLI] Wrote {len(points)}x{len(points)} kernel matrix to {args.out}", file=sys.stderr)
    else:
        csv.writer(sys.stdout, lineterminator="\n").writerows(rows)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_checks

    results = run_checks(args.seed)
    for result in results:
        print(result.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"[CLI] Failed checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_SELFTEST
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Neural quantum support vector machine toolkit")
    parser.add_argument("--debug", action="store_true", help="Enable debug output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train a classifier from a run config")
    p.add_argument("--config", required=True, help="Path to JSON run config")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a saved classifier")
    p.add_argument("--model", required=True, help="Path to model file")
    p.add_argument("--data", required=True, help="idx:IMAGES:LABELS, synthetic:COUNT:NOISE:SEED or a run config")
    p.add_argument("--seed", type=int, default=0, help="Seed for shot sampling")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("kernel-matrix", help="Write the Gram matrix of CSV points")
    p.add_argument("--config", required=True, help="Path to JSON run config (kernel section)")
    p.add_argument("--points", required=True, help="CSV file, one point per row")
    p.add_argument("--out", help="Output CSV (default: stdout)")
    p.set_defaults(handler=cmd_kernel_matrix)

    p = sub.add_parser("selftest", help="Run the invariant checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    # Set debug env before importing modules that read it
    if args.debug:
        os.environ["NQSVM_DEBUG"] = "1"

    from .errors import ConfigError, ContractError, FormatError, InputError, NumericalError

    try:
        return args.handler(args)
    except (ConfigError, InputError, FormatError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"Numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ContractError as e:
        print(f"Internal error: {e}", file=sys.stderr)
        return EXIT_SELFTEST
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
