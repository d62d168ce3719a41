"""Datasets, synthetic generation, label-noise injection, splits, and CSV I/O.

The training data model is a feature matrix plus *observed* labels that may
have been corrupted away from the (optionally known) *true* labels. Noise
injection, splitting, and generation are all pure functions of their inputs
plus an explicit seed, so every downstream experiment is reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    DegenerateSplit,
    InvalidSpec,
    MissingTrueLabels,
    ParseError,
    RaggedRows,
    ShapeMismatch,
    TooFewSamples,
)

_SIMPLEX_TOL = 1e-10


def _child_seed(*entropy: int) -> int:
    """Deterministic derived seed from a tuple of nonnegative integers."""
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class Dataset:
    """An n x d feature matrix with observed labels and optional true labels."""

    features: NDArray[np.float64]
    observed_labels: NDArray[np.int64]
    class_count: int
    true_labels: NDArray[np.int64] | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        obs = np.asarray(self.observed_labels, dtype=np.int64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "observed_labels", obs)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise ValueError(f"features must be a nonempty 2-d matrix, got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite values")
        if obs.shape != (feats.shape[0],):
            raise ValueError("observed_labels must have one entry per sample")
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if obs.min() < 0 or obs.max() >= self.class_count:
            raise ValueError("observed labels out of range for class_count")
        if self.true_labels is not None:
            true = np.asarray(self.true_labels, dtype=np.int64)
            object.__setattr__(self, "true_labels", true)
            if true.shape != obs.shape:
                raise ValueError("true_labels must match observed_labels in length")
            if true.min() < 0 or true.max() >= self.class_count:
                raise ValueError("true labels out of range for class_count")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: ArrayLike) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        true = None if self.true_labels is None else self.true_labels[idx]
        return Dataset(
            self.features[idx], self.observed_labels[idx], self.class_count, true
        )

    def with_features(self, features: ArrayLike) -> "Dataset":
        return Dataset(features, self.observed_labels, self.class_count, self.true_labels)


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """How to corrupt labels: a symmetric rate or an explicit flip table.

    ``flip_table[i, j]`` is the probability that true class ``i`` is observed
    as class ``j`` (rows sum to 1).
    """

    kind: str
    rate: float | None = None
    flip_table: NDArray[np.float64] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("symmetric", "asymmetric"):
            raise InvalidSpec(f"unknown noise kind {self.kind!r}")
        if self.kind == "symmetric":
            if self.rate is None or not (0.0 <= self.rate <= 1.0):
                raise InvalidSpec("symmetric noise needs a rate in [0, 1]")
        else:
            if self.flip_table is None:
                raise InvalidSpec("asymmetric noise needs a flip_table")
            table = np.asarray(self.flip_table, dtype=float)
            object.__setattr__(self, "flip_table", table)
            if table.ndim != 2 or table.shape[0] != table.shape[1]:
                raise InvalidSpec("flip_table must be square")
            if np.any(table < 0) or np.any(np.abs(table.sum(axis=1) - 1.0) > _SIMPLEX_TOL):
                raise InvalidSpec("flip_table rows must be nonnegative and sum to 1")

    @classmethod
    def symmetric(cls, rate: float, seed: int = 0) -> "NoiseSpec":
        return cls(kind="symmetric", rate=rate, seed=seed)

    @classmethod
    def asymmetric(cls, flip_table: ArrayLike, seed: int = 0) -> "NoiseSpec":
        return cls(kind="asymmetric", flip_table=np.asarray(flip_table, float), seed=seed)

    def with_seed(self, seed: int) -> "NoiseSpec":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "seed": self.seed}
        if self.kind == "symmetric":
            out["rate"] = self.rate
        else:
            out["flip_table"] = self.flip_table.tolist()
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseSpec":
        kind = doc.get("kind")
        seed = int(doc.get("seed", 0))
        if kind == "symmetric":
            return cls.symmetric(float(doc["rate"]), seed=seed)
        if kind == "asymmetric":
            if "flip_table" in doc:
                return cls.asymmetric(doc["flip_table"], seed=seed)
            # Convenience form: directed corruptions applied to an identity table.
            k = int(doc["classes"])
            table = np.eye(k)
            for flip in doc.get("flips", []):
                a, b, r = int(flip["from"]), int(flip["to"]), float(flip["rate"])
                table[a, a] -= r
                table[a, b] += r
            return cls.asymmetric(table, seed=seed)
        raise InvalidSpec(f"unknown noise kind {kind!r}")


def flip_matrix(spec: NoiseSpec, class_count: int) -> NDArray[np.float64]:
    """Row-stochastic generating table p(observed | true) implied by a spec."""
    if spec.kind == "symmetric":
        k = class_count
        return (1.0 - spec.rate) * np.eye(k) + (spec.rate / k) * np.ones((k, k))
    table = spec.flip_table
    if table.shape[0] != class_count:
        raise ShapeMismatch(
            f"flip_table is {table.shape[0]}x{table.shape[0]} but data has {class_count} classes"
        )
    return table


@dataclass(frozen=True, eq=False)
class SynthSpec:
    """Recipe for a seeded mixture-of-Gaussians classification dataset."""

    n: int
    dim: int
    class_count: int
    components_per_class: int = 1
    class_priors: NDArray[np.float64] | None = None
    mean_separation: float = 6.0
    covariance_scale: float = 1.0
    cross_class_covariance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.dim < 1 or self.class_count < 1 or self.components_per_class < 1:
            raise InvalidSpec("n, dim, class_count, components_per_class must be positive")
        if self.n < self.class_count * self.components_per_class:
            raise InvalidSpec("need at least one sample per component")
        priors = self.class_priors
        if priors is None:
            priors = np.full(self.class_count, 1.0 / self.class_count)
        priors = np.asarray(priors, dtype=float)
        object.__setattr__(self, "class_priors", priors)
        if priors.shape != (self.class_count,) or np.any(priors < 0) or abs(
            priors.sum() - 1.0
        ) > _SIMPLEX_TOL:
            raise InvalidSpec("class_priors must be a length-K simplex")
        if self.covariance_scale <= 0:
            raise InvalidSpec("covariance_scale must be positive")
        if self.cross_class_covariance < 0 or self.mean_separation < 0:
            raise InvalidSpec("mean_separation and cross_class_covariance must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "dim": self.dim,
            "class_count": self.class_count,
            "components_per_class": self.components_per_class,
            "class_priors": self.class_priors.tolist(),
            "mean_separation": self.mean_separation,
            "covariance_scale": self.covariance_scale,
            "cross_class_covariance": self.cross_class_covariance,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict, default_seed: int | None = None) -> "SynthSpec":
        seed = doc.get("seed", default_seed)
        if seed is None:
            raise InvalidSpec("synthetic spec needs a seed")
        return cls(
            n=int(doc["n"]),
            dim=int(doc["dim"]),
            class_count=int(doc["class_count"]),
            components_per_class=int(doc.get("components_per_class", 1)),
            class_priors=doc.get("class_priors"),
            mean_separation=float(doc.get("mean_separation", 6.0)),
            covariance_scale=float(doc.get("covariance_scale", 1.0)),
            cross_class_covariance=float(doc.get("cross_class_covariance", 0.0)),
            seed=int(seed),
        )


def _place_means(
    rng: np.random.Generator, count: int, dim: int, separation: float
) -> NDArray[np.float64]:
    """Seeded rejection placement of component means with pairwise distance >= separation."""
    side = max(separation, 1.0) * 2.0 * np.ceil(count ** (1.0 / dim))
    means = np.empty((count, dim))
    placed = 0
    rejections = 0
    while placed < count:
        candidate = rng.uniform(-side / 2.0, side / 2.0, size=dim)
        if placed == 0 or np.min(
            np.linalg.norm(means[:placed] - candidate, axis=1)
        ) >= separation:
            means[placed] = candidate
            placed += 1
            rejections = 0
        else:
            rejections += 1
            if rejections >= 200:
                side *= 2.0
                rejections = 0
    return means


def generate(spec: SynthSpec) -> Dataset:
    """Draw a dataset from the spec; observed labels start out clean.

    Component means are placed deterministically from the seed with pairwise
    distance at least ``mean_separation``. Every component shares the
    covariance ``covariance_scale * I + cross_class_covariance * u u^T`` where
    ``u`` is one seeded unit vector common to all classes, so raising the
    cross-class knob stretches every class along the same direction and
    increases their overlap.
    """
    rng = np.random.default_rng(spec.seed)
    k, c, d = spec.class_count, spec.components_per_class, spec.dim
    means = _place_means(rng, k * c, d, spec.mean_separation)
    cov = spec.covariance_scale * np.eye(d)
    if spec.cross_class_covariance > 0:
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        cov = cov + spec.cross_class_covariance * np.outer(direction, direction)
    chol = np.linalg.cholesky(cov)
    classes = rng.choice(k, size=spec.n, p=spec.class_priors)
    comps = rng.integers(0, c, size=spec.n)
    noise = rng.standard_normal((spec.n, d))
    features = means[classes * c + comps] + noise @ chol.T
    return Dataset(features, classes, k, true_labels=classes.copy())


def inject_noise(
    dataset: Dataset, spec: NoiseSpec, treat_observed_as_true: bool = False
) -> Dataset:
    """Corrupt labels per the spec; features and true labels are never touched.

    Symmetric noise redraws each hit label uniformly over *all* classes, so
    the realized disagreement rate is ``rate * (K-1)/K`` rather than ``rate``.
    Asymmetric noise draws each observed label from the flip-table row of the
    sample's true label.

    Raises
    ------
    MissingTrueLabels
        If the dataset has no true labels and ``treat_observed_as_true`` is
        not set.
    """
    if dataset.true_labels is not None:
        base = dataset.true_labels
    elif treat_observed_as_true:
        base = dataset.observed_labels
    else:
        raise MissingTrueLabels(
            "dataset has no true labels; pass treat_observed_as_true=True to use the observed ones"
        )
    rng = np.random.default_rng(spec.seed)
    k = dataset.class_count
    if spec.kind == "symmetric":
        hit = rng.random(dataset.n) < spec.rate
        redraw = rng.integers(0, k, size=dataset.n)
        observed = np.where(hit, redraw, base)
    else:
        table = flip_matrix(spec, k)
        cumulative = np.cumsum(table[base], axis=1)
        cumulative[:, -1] = 1.0
        observed = (rng.random(dataset.n)[:, None] < cumulative).argmax(axis=1)
    return Dataset(dataset.features, observed, k, true_labels=base.copy())


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split by observed label; a seeded permutation."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    train_idx: list[NDArray[np.int64]] = []
    test_idx: list[NDArray[np.int64]] = []
    for c in range(dataset.class_count):
        idx = np.flatnonzero(dataset.observed_labels == c)
        n_train = int(round(train_fraction * idx.size))
        if idx.size == 0 or n_train == 0 or n_train == idx.size:
            raise DegenerateSplit(
                f"class {c}: {idx.size} samples cannot be split at fraction {train_fraction}"
            )
        perm = rng.permutation(idx)
        train_idx.append(perm[:n_train])
        test_idx.append(perm[n_train:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    return dataset.subset(train), dataset.subset(test)


def kfold(dataset: Dataset, folds: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    """Stratified k-fold partition; every sample lands in exactly one test fold."""
    if folds < 2:
        raise ValueError("folds must be at least 2")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(dataset.n, dtype=np.int64)
    for c in range(dataset.class_count):
        idx = np.flatnonzero(dataset.observed_labels == c)
        if idx.size < folds:
            raise TooFewSamples(f"class {c} has {idx.size} samples, fewer than {folds} folds")
        perm = rng.permutation(idx)
        fold_of[perm] = np.arange(idx.size) % folds
    pairs = []
    for f in range(folds):
        test = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        pairs.append((dataset.subset(train), dataset.subset(test)))
    return pairs


def _parse_label_column(
    column: int | str, header: list[str] | None, width: int, what: str
) -> int:
    if isinstance(column, str):
        if header is None:
            raise ParseError(f"{what} {column!r} needs a header row", line=1)
        if column not in header:
            raise ParseError(f"{what} {column!r} not found in header", line=1)
        return header.index(column)
    idx = int(column)
    if idx < 0:
        idx += width
    if not 0 <= idx < width:
        raise ParseError(f"{what} index {column} out of range for {width} columns", line=1)
    return idx


def _map_labels(raw: list[str]) -> tuple[NDArray[np.int64], list[str]]:
    """Map label strings to 0..K-1.

    Labels that already form the dense integer set {0..K-1} keep their numeric
    values (so save/load round-trips are the identity); anything else is mapped
    in first-appearance order.
    """
    distinct = list(dict.fromkeys(raw))
    try:
        numeric = [int(s) for s in distinct]
    except ValueError:
        numeric = None
    if numeric is not None and sorted(numeric) == list(range(len(numeric))):
        mapping = {str(v): v for v in numeric}
        names = [str(v) for v in range(len(numeric))]
    else:
        mapping = {name: i for i, name in enumerate(distinct)}
        names = distinct
    return np.array([mapping[s] for s in raw], dtype=np.int64), names


def load_csv(
    path: str,
    label_column: int | str = "label",
    has_header: bool = True,
    true_label_column: int | str | None = None,
) -> tuple[Dataset, list[str]]:
    """Read a comma-delimited dataset; returns the dataset and its label names.

    Feature cells must parse as reals ('.' decimal point); the label column is
    selected by index or header name. Label values are mapped to class indices
    0..K-1 (see :func:`_map_labels`); the returned name list inverts that map.

    Raises
    ------
    RaggedRows
        If rows disagree on the number of fields.
    ParseError
        On an unparseable cell, with its 1-based line and column.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise ParseError("empty file", line=1)
    header: list[str] | None = None
    first_data_line = 1
    if has_header:
        header = [cell.strip() for cell in rows[0]]
        rows = rows[1:]
        first_data_line = 2
        if not rows:
            raise ParseError("no data rows after header", line=2)
    width = len(rows[0])
    for offset, row in enumerate(rows):
        if len(row) != width:
            raise RaggedRows(
                f"row has {len(row)} fields, expected {width}",
                line=first_data_line + offset,
            )
    label_idx = _parse_label_column(label_column, header, width, "label column")
    skip = {label_idx}
    true_idx: int | None = None
    if true_label_column is not None:
        true_idx = _parse_label_column(true_label_column, header, width, "true-label column")
        skip.add(true_idx)
    feature_cols = [j for j in range(width) if j not in skip]
    features = np.empty((len(rows), len(feature_cols)))
    for i, row in enumerate(rows):
        for jj, j in enumerate(feature_cols):
            try:
                features[i, jj] = float(row[j])
            except ValueError:
                raise ParseError(
                    f"cannot parse {row[j]!r} as a real number",
                    line=first_data_line + i,
                    column=j + 1,
                ) from None
    observed_raw = [row[label_idx].strip() for row in rows]
    true_raw = [row[true_idx].strip() for row in rows] if true_idx is not None else []
    labels, names = _map_labels(observed_raw + true_raw)
    observed = labels[: len(rows)]
    true = labels[len(rows):] if true_idx is not None else None
    return Dataset(features, observed, len(names), true_labels=true), names


def load_matrix_csv(
    path: str,
    has_header: bool = True,
    drop_columns: Sequence[str] = ("label", "true_label"),
) -> NDArray[np.float64]:
    """Read a bare feature matrix; named label columns are dropped if a header names them."""
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise ParseError("empty file", line=1)
    first_data_line = 1
    keep: list[int] | None = None
    if has_header:
        header = [cell.strip() for cell in rows[0]]
        keep = [j for j, name in enumerate(header) if name not in drop_columns]
        rows = rows[1:]
        first_data_line = 2
        if not rows:
            raise ParseError("no data rows after header", line=2)
    width = len(rows[0])
    if keep is None:
        keep = list(range(width))
    features = np.empty((len(rows), len(keep)))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise RaggedRows(
                f"row has {len(row)} fields, expected {width}",
                line=first_data_line + i,
            )
        for jj, j in enumerate(keep):
            try:
                features[i, jj] = float(row[j])
            except ValueError:
                raise ParseError(
                    f"cannot parse {row[j]!r} as a real number",
                    line=first_data_line + i,
                    column=j + 1,
                ) from None
    return features


def save_csv(dataset: Dataset, path: str, label_names: Sequence[str] | None = None) -> None:
    """Write a dataset as CSV: feature columns, label, and true_label if present.

    Floats are written with ``repr`` so a save/load round trip reproduces the
    exact values.
    """
    names = (
        list(label_names)
        if label_names is not None
        else [str(i) for i in range(dataset.class_count)]
    )
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        header = [f"f{j}" for j in range(dataset.dim)] + ["label"]
        if dataset.true_labels is not None:
            header.append("true_label")
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(names[dataset.observed_labels[i]])
            if dataset.true_labels is not None:
                row.append(names[dataset.true_labels[i]])
            writer.writerow(row)


@dataclass(frozen=True, eq=False)
class Scaler:
    """Per-feature affine transform fit on training data: ``(x - mean) / scale``."""

    mean: NDArray[np.float64]
    scale: NDArray[np.float64]

    def transform(self, features: ArrayLike) -> NDArray[np.float64]:
        return (np.asarray(features, dtype=float) - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Scaler":
        return cls(np.asarray(doc["mean"], float), np.asarray(doc["scale"], float))


def standardize(
    train: Dataset, test: Dataset | None = None
) -> tuple[Dataset, Dataset | None, Scaler]:
    """Z-score features using training statistics only (sd with denominator n-1).

    Constant columns are centered but not divided. The test set, when given,
    is transformed with the training scaler.
    """
    feats = train.features
    mean = feats.mean(axis=0)
    sd = feats.std(axis=0, ddof=1) if train.n > 1 else np.zeros(train.dim)
    scale = np.where(sd > 0, sd, 1.0)
    scaler = Scaler(mean=mean, scale=scale)
    train_out = train.with_features(scaler.transform(feats))
    test_out = None if test is None else test.with_features(scaler.transform(test.features))
    return train_out, test_out, scaler
