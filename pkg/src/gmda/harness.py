"""Experiment harness: noise sweeps, recovery reports, and table emission.

A sweep is a grid of (noise spec) x (model config) x (fold), repeated over a
seed ladder. Noise is injected into training labels only; test predictions are
scored against clean labels. Every random draw is seeded from the experiment
seed plus the cell coordinates, so serial and parallel execution produce the
same record, and rerunning a spec reproduces it byte for byte. Wall times are
kept out of the canonical record for exactly that reason.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import linear_sum_assignment

from .data import (
    Dataset,
    NoiseSpec,
    SynthSpec,
    _child_seed,
    flip_matrix,
    generate,
    inject_noise,
    kfold,
    load_csv,
    split,
    standardize,
)
from .errors import EmptyInput, GmdaError, LengthMismatch, ShapeMismatch, SpecError
from .model import fit, predict_label
from .params import FitConfig, FitReport

SCHEMA_VERSION = 1


def error_rate(predicted: ArrayLike, reference: ArrayLike) -> float:
    """Fraction of label mismatches; the reference should be the clean labels."""
    pred = np.asarray(predicted)
    ref = np.asarray(reference)
    if pred.shape != ref.shape or pred.ndim != 1:
        raise LengthMismatch(f"predicted {pred.shape} vs reference {ref.shape}")
    if pred.size == 0:
        raise EmptyInput("error_rate of empty label vectors")
    return float(np.mean(pred != ref))


def recovery_report(
    report: FitReport,
    true_flip_table: ArrayLike,
    true_pi: ArrayLike | None = None,
    reference_means: ArrayLike | None = None,
) -> dict:
    """Recovered flipping matrix and priors next to ground truth.

    ``true_flip_table`` is row-stochastic p(observed | true) as injected. When
    ``reference_means`` (the per-true-class generating means) are given, the
    fitted classes are aligned to them by minimum-cost assignment of the
    fitted mixture means before comparison, so a class relabeling inside EM
    does not show up as a bogus deviation.
    """
    params = report.final_params
    k = params.n_classes
    true_flip = np.asarray(true_flip_table, dtype=float)
    if true_flip.shape != (k, k):
        raise ShapeMismatch(f"truth is {true_flip.shape}, model has {k} classes")
    fitted_means = np.einsum(
        "km,kmd->kd",
        params.weights,
        np.stack([[c.mean for c in row] for row in params.components]),
    )
    if reference_means is not None:
        ref = np.asarray(reference_means, dtype=float)
        if ref.shape != fitted_means.shape:
            raise ShapeMismatch(f"reference means {ref.shape} vs fitted {fitted_means.shape}")
        cost = np.linalg.norm(fitted_means[:, np.newaxis] - ref[np.newaxis], axis=2)
        rows, cols = linear_sum_assignment(cost)
        true_of_fitted = cols[np.argsort(rows)]
    else:
        true_of_fitted = np.arange(k)
    fitted_of_true = np.empty(k, dtype=int)
    fitted_of_true[true_of_fitted] = np.arange(k)
    gamma = params.gamma[np.ix_(fitted_of_true, fitted_of_true)]
    pi = params.pi[fitted_of_true]
    gamma_true = true_flip.T  # observed-major, like the model's gamma
    out: dict[str, Any] = {
        "permutation": true_of_fitted.tolist(),
        "gamma": gamma.tolist(),
        "gamma_true": gamma_true.tolist(),
        "gamma_abs_dev": np.abs(gamma - gamma_true).tolist(),
        "gamma_diag": np.diag(gamma).tolist(),
        "pi": pi.tolist(),
    }
    if true_pi is not None:
        true_pi = np.asarray(true_pi, dtype=float)
        out["pi_true"] = true_pi.tolist()
        out["pi_abs_dev"] = np.abs(pi - true_pi).tolist()
    return out


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """A full sweep: data source, noise grid, model grid, split policy, seeds."""

    noise_grid: tuple[NoiseSpec, ...]
    model_grid: tuple[tuple[int, FitConfig], ...]
    synth: SynthSpec | None = None
    csv_path: str | None = None
    csv_label_column: int | str = "label"
    csv_has_header: bool = True
    csv_true_label_column: int | str | None = None
    train_fraction: float | None = 0.5
    folds: int | None = None
    repetitions: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.noise_grid:
            raise SpecError("noise grid is empty")
        if not self.model_grid:
            raise SpecError("model grid is empty")
        if (self.synth is None) == (self.csv_path is None):
            raise SpecError("exactly one of synth or csv_path must be given")
        if (self.train_fraction is None) == (self.folds is None):
            raise SpecError("exactly one of train_fraction or folds must be given")
        if self.repetitions < 1:
            raise SpecError("repetitions must be at least 1")

    @property
    def fold_count(self) -> int:
        return self.folds if self.folds is not None else 1

    @property
    def dataset_name(self) -> str:
        if self.synth is not None:
            s = self.synth
            return f"synth(n={s.n},d={s.dim},K={s.class_count},C={s.components_per_class})"
        return str(self.csv_path)

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {
            "seed": self.seed,
            "repetitions": self.repetitions,
            "noise": [n.to_dict() for n in self.noise_grid],
            "models": [
                {
                    "components": comps,
                    "max_iters": cfg.max_iters,
                    "rel_tol": cfg.rel_tol,
                    "ridge": cfg.ridge,
                    "gamma_diag_init": cfg.gamma_diag_init,
                }
                for comps, cfg in self.model_grid
            ],
        }
        if self.synth is not None:
            doc["dataset"] = {"synth": self.synth.to_dict()}
        else:
            doc["dataset"] = {
                "csv": self.csv_path,
                "label_column": self.csv_label_column,
                "has_header": self.csv_has_header,
                "true_label_column": self.csv_true_label_column,
            }
        if self.folds is not None:
            doc["split"] = {"folds": self.folds}
        else:
            doc["split"] = {"train_fraction": self.train_fraction}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        try:
            seed = int(doc.get("seed", 0))
            noise = tuple(NoiseSpec.from_dict(n) for n in doc["noise"])
            models = []
            for entry in doc["models"]:
                cfg = FitConfig(
                    max_iters=int(entry.get("max_iters", 100)),
                    rel_tol=float(entry.get("rel_tol", 1e-6)),
                    ridge=entry.get("ridge"),
                    gamma_diag_init=float(entry.get("gamma_diag_init", 0.8)),
                )
                models.append((int(entry["components"]), cfg))
            dataset = doc["dataset"]
            synth = None
            csv_path = None
            label_col: int | str = "label"
            has_header = True
            true_col = None
            if "synth" in dataset:
                synth = SynthSpec.from_dict(dataset["synth"], default_seed=seed)
            else:
                csv_path = dataset["csv"]
                label_col = dataset.get("label_column", "label")
                has_header = bool(dataset.get("has_header", True))
                true_col = dataset.get("true_label_column")
            split_doc = doc.get("split", {"train_fraction": 0.5})
            folds = split_doc.get("folds")
            fraction = split_doc.get("train_fraction")
            if folds is not None:
                folds = int(folds)
                fraction = None
            elif fraction is not None:
                fraction = float(fraction)
            return cls(
                noise_grid=noise,
                model_grid=tuple(models),
                synth=synth,
                csv_path=csv_path,
                csv_label_column=label_col,
                csv_has_header=has_header,
                csv_true_label_column=true_col,
                train_fraction=fraction,
                folds=folds,
                repetitions=int(doc.get("repetitions", 1)),
                seed=seed,
            )
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed experiment spec: {exc!r}") from exc


@dataclass(eq=False)
class CellResult:
    """One grid cell: a (noise, model, fold) combination across repetitions."""

    noise_index: int
    model_index: int
    fold: int
    noise: dict
    components: int
    repetitions: list[dict] = field(default_factory=list)
    mean_error_rate: float | None = None
    error: str | None = None
    wall_time: float = 0.0

    def to_canonical_dict(self) -> dict:
        return {
            "noise_index": self.noise_index,
            "model_index": self.model_index,
            "fold": self.fold,
            "noise": self.noise,
            "components": self.components,
            "repetitions": self.repetitions,
            "mean_error_rate": self.mean_error_rate,
            "error": self.error,
        }


@dataclass(eq=False)
class RunRecord:
    """Everything a sweep produced, minus wall times (kept separately)."""

    spec: dict
    cells: list[CellResult]
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> None:
        for cell in self.cells:
            for rep in cell.repetitions:
                rate = rep.get("error_rate")
                if rate is not None and not 0.0 <= rate <= 1.0:
                    raise SpecError(f"error rate {rate} outside [0, 1]")

    def to_canonical_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "spec": self.spec,
            "cells": [cell.to_canonical_dict() for cell in self.cells],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_canonical_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_canonical_dict(cls, doc: dict) -> "RunRecord":
        cells = [
            CellResult(
                noise_index=c["noise_index"],
                model_index=c["model_index"],
                fold=c["fold"],
                noise=c["noise"],
                components=c["components"],
                repetitions=c["repetitions"],
                mean_error_rate=c["mean_error_rate"],
                error=c["error"],
            )
            for c in doc["cells"]
        ]
        return cls(
            spec=doc["spec"], cells=cells, schema_version=doc.get("schema_version", SCHEMA_VERSION)
        )

    def wall_times(self) -> dict:
        return {
            "total": sum(cell.wall_time for cell in self.cells),
            "cells": [
                {
                    "noise_index": c.noise_index,
                    "model_index": c.model_index,
                    "fold": c.fold,
                    "seconds": c.wall_time,
                }
                for c in self.cells
            ],
        }


def _load_source(spec: ExperimentSpec, rep: int) -> Dataset:
    if spec.synth is not None:
        data_seed = _child_seed(spec.seed, rep, 101)
        return generate(replace(spec.synth, seed=data_seed))
    dataset, _ = load_csv(
        spec.csv_path,
        label_column=spec.csv_label_column,
        has_header=spec.csv_has_header,
        true_label_column=spec.csv_true_label_column,
    )
    return dataset


def _rep_folds(spec: ExperimentSpec, dataset: Dataset, rep: int) -> list[tuple[Dataset, Dataset]]:
    split_seed = _child_seed(spec.seed, rep, 202)
    if spec.folds is not None:
        return kfold(dataset, spec.folds, split_seed)
    train, test = split(dataset, spec.train_fraction, split_seed)
    return [(train, test)]


def _true_class_means(dataset: Dataset) -> NDArray[np.float64] | None:
    labels = dataset.true_labels
    if labels is None:
        return None
    means = np.empty((dataset.class_count, dataset.dim))
    for c in range(dataset.class_count):
        members = dataset.features[labels == c]
        if members.shape[0] == 0:
            return None
        means[c] = members.mean(axis=0)
    return means


def _run_cell(
    spec: ExperimentSpec,
    rep_folds: list[list[tuple[Dataset, Dataset]]],
    noise_index: int,
    model_index: int,
    fold: int,
) -> CellResult:
    noise = spec.noise_grid[noise_index]
    components, config = spec.model_grid[model_index]
    cell = CellResult(
        noise_index=noise_index,
        model_index=model_index,
        fold=fold,
        noise=noise.to_dict(),
        components=components,
    )
    started = time.perf_counter()
    for rep in range(spec.repetitions):
        try:
            train, test = rep_folds[rep][fold]
            noise_seed = _child_seed(spec.seed, rep, noise_index, fold, 303)
            fit_seed = _child_seed(spec.seed, rep, noise_index, fold, model_index, 404)
            noisy = inject_noise(
                train, noise.with_seed(noise_seed), treat_observed_as_true=True
            )
            std_train, std_test, _ = standardize(noisy, test)
            report = fit(std_train, components, replace(config, seed=fit_seed))
            predictions = predict_label(std_test.features, report.final_params)
            reference = (
                test.true_labels if test.true_labels is not None else test.observed_labels
            )
            rate = error_rate(predictions, reference)
            true_labels = std_train.true_labels
            counts = np.bincount(true_labels, minlength=train.class_count)
            recovery = recovery_report(
                report,
                flip_matrix(noise, train.class_count),
                true_pi=counts / counts.sum(),
                reference_means=_true_class_means(std_train),
            )
            trace = report.loglik_trace
            cell.repetitions.append(
                {
                    "rep": rep,
                    "fit_seed": fit_seed,
                    "noise_seed": noise_seed,
                    "error_rate": rate,
                    "iterations": report.iterations_run,
                    "converged": report.converged,
                    "loglik_first": float(trace[0]),
                    "loglik_last": float(trace[-1]),
                    "recovery": recovery,
                }
            )
        except GmdaError as exc:
            cell.repetitions.append({"rep": rep, "error": f"{type(exc).__name__}: {exc}"})
            if cell.error is None:
                cell.error = f"{type(exc).__name__}: {exc}"
    rates = [r["error_rate"] for r in cell.repetitions if "error_rate" in r]
    cell.mean_error_rate = float(np.mean(rates)) if rates else None
    cell.wall_time = time.perf_counter() - started
    return cell


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> RunRecord:
    """Execute the full grid; cell results are deterministic per derived seed.

    Grid cells are independent jobs: with ``threads > 1`` they run on a thread
    pool, and because every random stream is derived from (experiment seed,
    cell coordinates, repetition), the record is identical to a serial run.
    Cells that fail with a model error are recorded and skipped, not fatal.
    """
    rep_folds = []
    for rep in range(spec.repetitions):
        dataset = _load_source(spec, rep)
        rep_folds.append(_rep_folds(spec, dataset, rep))
    coords = [
        (ni, mi, fi)
        for ni in range(len(spec.noise_grid))
        for mi in range(len(spec.model_grid))
        for fi in range(spec.fold_count)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(
                pool.map(lambda c: _run_cell(spec, rep_folds, *c), coords)
            )
    else:
        cells = [_run_cell(spec, rep_folds, *c) for c in coords]
    record = RunRecord(spec=spec.to_dict(), cells=cells)
    record.validate()
    return record


def _table_grid(record: RunRecord) -> tuple[list[str], list[str], list[list[float | None]]]:
    """Collapse folds: rows per model, columns per noise spec, mean error cells."""
    spec = record.spec
    noise_labels = [
        f"{n['kind']}@{n.get('rate', 'table')}" for n in spec["noise"]
    ]
    model_labels = [f"components={m['components']}" for m in spec["models"]]
    grid: list[list[float | None]] = []
    for mi in range(len(model_labels)):
        row: list[float | None] = []
        for ni in range(len(noise_labels)):
            rates = [
                cell.mean_error_rate
                for cell in record.cells
                if cell.noise_index == ni
                and cell.model_index == mi
                and cell.mean_error_rate is not None
            ]
            row.append(float(np.mean(rates)) if rates else None)
        grid.append(row)
    return noise_labels, model_labels, grid


def emit_table(record: RunRecord, format: str, path: str) -> None:
    """Write the error-rate table as csv, json, or markdown.

    Columns are ordered dataset, method, then the noise grid. The markdown
    form bolds each column's minimum (all minima on ties), mirroring how such
    comparison tables usually mark the winner.
    """
    noise_labels, model_labels, grid = _table_grid(record)
    dataset_name = _dataset_name(record.spec)
    if format == "json":
        doc = {
            "schema_version": record.schema_version,
            "dataset": dataset_name,
            "columns": noise_labels,
            "rows": [
                {"method": model_labels[mi], "values": grid[mi]}
                for mi in range(len(model_labels))
            ],
        }
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(doc, handle, indent=2, sort_keys=True)
            handle.write("\n")
        return
    if format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["dataset", "method"] + noise_labels)
            for mi, label in enumerate(model_labels):
                cells = ["" if v is None else repr(v) for v in grid[mi]]
                writer.writerow([dataset_name, label] + cells)
        return
    if format == "markdown":
        minima = []
        for ni in range(len(noise_labels)):
            column = [grid[mi][ni] for mi in range(len(model_labels)) if grid[mi][ni] is not None]
            minima.append(min(column) if column else None)
        lines = [
            "| dataset | method | " + " | ".join(noise_labels) + " |",
            "|" + "---|" * (2 + len(noise_labels)),
        ]
        for mi, label in enumerate(model_labels):
            cells = []
            for ni in range(len(noise_labels)):
                v = grid[mi][ni]
                if v is None:
                    cells.append("")
                elif minima[ni] is not None and v == minima[ni]:
                    cells.append(f"**{v:.4f}**")
                else:
                    cells.append(f"{v:.4f}")
            lines.append("| " + " | ".join([dataset_name, label] + cells) + " |")
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("\n".join(lines) + "\n")
        return
    raise ValueError(f"unknown table format {format!r}")


def _dataset_name(spec_doc: dict) -> str:
    dataset = spec_doc.get("dataset", {})
    if "synth" in dataset:
        s = dataset["synth"]
        return f"synth(n={s['n']},d={s['dim']},K={s['class_count']},C={s['components_per_class']})"
    return str(dataset.get("csv", "unknown"))
