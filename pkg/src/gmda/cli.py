"""Command-line surface: synth, inject, fit, predict, experiment, report.

Specs and models travel as JSON, data as CSV; every subcommand is
deterministic under fixed argv and input files. When no seed is supplied
anywhere, a default of 0 is used and printed so the run stays reproducible.

Exit codes: 0 success, 1 model or numeric failure, 2 usage or I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    NoiseSpec,
    SynthSpec,
    generate,
    inject_noise,
    load_csv,
    load_matrix_csv,
    save_csv,
    standardize,
    Scaler,
)
from .errors import GmdaError, InvalidSpec, ParseError, SpecError
from .harness import RunRecord, ExperimentSpec, emit_table, run_experiment
from .model import (
    fit,
    fit_single_gaussian,
    params_from_dict,
    params_to_dict,
    predict_posterior,
)
from .params import FitConfig

log = logging.getLogger("gmda")

MODEL_SCHEMA_VERSION = 1


def _read_json(path: str) -> dict:
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def _write_json(doc: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _resolve_seed(args: argparse.Namespace) -> int:
    if args.seed is None:
        print("no --seed given; using seed 0")
        return 0
    return args.seed


def _detect_true_label_column(path: str, has_header: bool, explicit: str | None) -> str | None:
    """Honor an explicit flag; otherwise pick up a 'true_label' header column."""
    if explicit is not None or not has_header:
        return explicit
    with open(path, newline="", encoding="utf-8") as handle:
        header = next(csv.reader(handle), [])
    return "true_label" if "true_label" in [cell.strip() for cell in header] else None


def cmd_synth(args: argparse.Namespace) -> int:
    doc = _read_json(args.spec)
    default_seed = args.seed
    if "seed" not in doc and default_seed is None:
        default_seed = _resolve_seed(args)
    spec = SynthSpec.from_dict(doc, default_seed=default_seed)
    dataset = generate(spec)
    save_csv(dataset, args.out)
    print(
        f"wrote {dataset.n} samples of dimension {dataset.dim} "
        f"({dataset.class_count} classes) to {args.out}"
    )
    return 0


def cmd_inject(args: argparse.Namespace) -> int:
    dataset, names = load_csv(
        args.data,
        label_column=args.label_column,
        has_header=not args.no_header,
        true_label_column=_detect_true_label_column(
            args.data, not args.no_header, args.true_label_column
        ),
    )
    spec = NoiseSpec.from_dict(_read_json(args.noise))
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    noisy = inject_noise(dataset, spec, treat_observed_as_true=True)
    save_csv(noisy, args.out, label_names=names)
    changed = float(np.mean(noisy.observed_labels != noisy.true_labels))
    print(f"corrupted {changed:.1%} of {noisy.n} labels; wrote {args.out}")
    return 0


def _fit_config(args: argparse.Namespace, seed: int) -> FitConfig:
    return FitConfig(
        max_iters=args.max_iters,
        rel_tol=args.tol,
        ridge=args.ridge,
        seed=seed,
        gamma_diag_init=args.gamma_init,
    )


def cmd_fit(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    dataset, names = load_csv(
        args.train,
        label_column=args.label_column,
        has_header=not args.no_header,
        true_label_column=_detect_true_label_column(
            args.train, not args.no_header, args.true_label_column
        ),
    )
    std_train, _, scaler = standardize(dataset)
    config = _fit_config(args, seed)
    if args.single_gaussian:
        report = fit_single_gaussian(std_train, config)
    else:
        report = fit(std_train, args.components, config)
    _write_json(
        {
            "schema_version": MODEL_SCHEMA_VERSION,
            "model": params_to_dict(report.final_params),
            "scaler": scaler.to_dict(),
            "labels": names,
        },
        args.model,
    )
    if args.report:
        _write_json(
            {
                "loglik_trace": [float(v) for v in report.loglik_trace],
                "iterations_run": report.iterations_run,
                "converged": report.converged,
                "seed": seed,
            },
            args.report,
        )
    print(
        f"fit {dataset.class_count} classes x "
        f"{report.final_params.n_components} components in "
        f"{report.iterations_run} iterations "
        f"(converged={report.converged}, log-likelihood={report.loglik_trace[-1]:.6f}); "
        f"wrote {args.model}"
    )
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    doc = _read_json(args.model)
    params = params_from_dict(doc["model"])
    scaler = Scaler.from_dict(doc["scaler"])
    names = doc["labels"]
    features = scaler.transform(load_matrix_csv(args.data, has_header=not args.no_header))
    posterior = predict_posterior(features, params)
    labels = posterior.argmax(axis=1)
    with open(args.out, "w", encoding="utf-8") as handle:
        handle.write(",".join([f"p_{name}" for name in names] + ["label"]) + "\n")
        for i in range(features.shape[0]):
            cells = [repr(float(v)) for v in posterior[i]] + [names[labels[i]]]
            handle.write(",".join(cells) + "\n")
    print(f"wrote posteriors and labels for {features.shape[0]} rows to {args.out}")
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    doc = _read_json(args.spec)
    if args.seed is not None:
        doc["seed"] = args.seed
    elif "seed" not in doc:
        doc["seed"] = _resolve_seed(args)
    spec = ExperimentSpec.from_dict(doc)
    if args.dry_run:
        print(f"dataset: {spec.dataset_name}")
        print(
            f"plan: {len(spec.noise_grid)} noise x {len(spec.model_grid)} models "
            f"x {spec.fold_count} folds x {spec.repetitions} repetitions "
            f"(seed {spec.seed})"
        )
        for ni, noise in enumerate(spec.noise_grid):
            for mi, (comps, _) in enumerate(spec.model_grid):
                for fi in range(spec.fold_count):
                    print(
                        f"  cell noise={noise.kind}@{noise.rate if noise.rate is not None else 'table'} "
                        f"components={comps} fold={fi}"
                    )
        return 0
    record = run_experiment(spec, threads=args.threads)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "record.json").write_text(record.to_json(), encoding="utf-8")
    _write_json(record.wall_times(), str(out_dir / "timings.json"))
    emit_table(record, "csv", str(out_dir / "table.csv"))
    emit_table(record, "markdown", str(out_dir / "table.md"))
    failed = sum(1 for cell in record.cells if cell.error is not None)
    print(
        f"ran {len(record.cells)} cells ({failed} with errors); "
        f"wrote record.json, timings.json, table.csv, table.md to {out_dir}"
    )
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    doc = _read_json(args.record)
    record = RunRecord.from_canonical_dict(doc)
    emit_table(record, args.format, args.out)
    print(f"wrote {args.format} table to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmda",
        description="Mixture discriminant analysis that tolerates noisy training labels.",
    )
    parser.add_argument("--version", action="version", version=f"gmda {__version__}")
    parser.add_argument("--seed", type=int, default=None, help="global random seed")
    parser.add_argument(
        "--threads", type=int, default=1, help="worker threads for experiment cells"
    )
    parser.add_argument(
        "--log-level",
        default=os.environ.get("GMDA_LOG", "warning"),
        choices=["debug", "info", "warning", "error"],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a JSON spec")
    p.add_argument("spec", help="SynthSpec JSON file")
    p.add_argument("out", help="output CSV path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inject", help="corrupt labels of a CSV dataset")
    p.add_argument("data", help="input CSV")
    p.add_argument("noise", help="NoiseSpec JSON file")
    p.add_argument("out", help="output CSV path")
    p.add_argument("--label-column", default="label")
    p.add_argument("--true-label-column", default=None)
    p.add_argument("--no-header", action="store_true")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("fit", help="fit the model to a training CSV")
    p.add_argument("train", help="training CSV")
    p.add_argument("model", help="output model JSON path")
    p.add_argument("--components", type=int, default=1, help="mixture components per class")
    p.add_argument(
        "--single-gaussian",
        action="store_true",
        help="one Gaussian per class (same as --components 1)",
    )
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--gamma-init", type=float, default=0.8)
    p.add_argument("--ridge", type=float, default=None)
    p.add_argument("--report", default=None, help="also write a fit report JSON")
    p.add_argument("--label-column", default="label")
    p.add_argument("--true-label-column", default=None)
    p.add_argument("--no-header", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="score a CSV with a fitted model")
    p.add_argument("model", help="model JSON from fit")
    p.add_argument("data", help="CSV of points (label columns are ignored)")
    p.add_argument("out", help="output CSV of posteriors and labels")
    p.add_argument("--no-header", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("experiment", help="run a sweep described by a JSON spec")
    p.add_argument("spec", help="ExperimentSpec JSON file")
    p.add_argument("out_dir", help="output directory")
    p.add_argument("--dry-run", action="store_true", help="print the cell plan and stop")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="render tables from an experiment record")
    p.add_argument("record", help="record.json from a previous run")
    p.add_argument("--format", choices=["csv", "json", "markdown"], default="markdown")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper())
    try:
        return args.func(args)
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})", file=sys.stderr)
        return 2
    except (ParseError, InvalidSpec, SpecError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except GmdaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
