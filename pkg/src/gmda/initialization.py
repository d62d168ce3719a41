"""Seeded k-means and the starting parameters for the EM fit.

The initializer clusters each observed class separately, turns the clusters
into that class's starting mixture, sets the class priors to the observed
label frequencies, and seeds the flipping matrix diagonally dominant so the
optimizer does not start from a label-permutation saddle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .data import Dataset, _child_seed
from .errors import ClassMissing, ClassTooSmall, TooFewPoints
from .gaussian import GaussianComponent
from .params import GmdaParams


@dataclass(frozen=True, eq=False)
class KMeansResult:
    """Cluster centers, per-point assignments, and the total squared distance."""

    centers: NDArray[np.float64]
    assignments: NDArray[np.int64]
    inertia: float


def _nearest(points: NDArray[np.float64], centers: NDArray[np.float64]) -> NDArray[np.int64]:
    """Index of the closest center per point; ties go to the lowest index."""
    d2 = np.empty((points.shape[0], centers.shape[0]))
    for m in range(centers.shape[0]):
        d2[:, m] = np.sum((points - centers[m]) ** 2, axis=1)
    return d2.argmin(axis=1)


def _seed_centers(
    points: NDArray[np.float64], n_clusters: int, rng: np.random.Generator
) -> NDArray[np.float64]:
    """k-means++ seeding: each next center drawn proportional to squared distance."""
    n = points.shape[0]
    centers = np.empty((n_clusters, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for m in range(1, n_clusters):
        total = float(d2.sum())
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers[m] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[m]) ** 2, axis=1))
    return centers


def _update_centers(
    points: NDArray[np.float64],
    assignments: NDArray[np.int64],
    centers: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Recompute centroids; empty clusters steal the point farthest from its center."""
    out = centers.copy()
    empty = []
    for m in range(centers.shape[0]):
        members = assignments == m
        if members.any():
            out[m] = points[members].mean(axis=0)
        else:
            empty.append(m)
    if empty:
        dist = np.sum((points - out[assignments]) ** 2, axis=1)
        for m in empty:
            farthest = int(dist.argmax())
            out[m] = points[farthest]
            dist[farthest] = -1.0
    return out


def kmeans(
    points: ArrayLike, n_clusters: int, seed: int, max_iters: int = 100
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding; deterministic for a fixed seed.

    Stops when the assignments no longer change or ``max_iters`` is reached.
    The returned assignments always index the nearest stored center, and the
    inertia is the exact sum of squared distances under the stored state.

    Raises
    ------
    TooFewPoints
        If there are fewer points than clusters.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must be an (n, d) matrix")
    if n_clusters < 1 or max_iters < 1:
        raise ValueError("n_clusters and max_iters must be positive")
    if pts.shape[0] < n_clusters:
        raise TooFewPoints(f"{pts.shape[0]} points cannot form {n_clusters} clusters")
    rng = np.random.default_rng(seed)
    centers = _seed_centers(pts, n_clusters, rng)
    assignments = _nearest(pts, centers)
    for _ in range(max_iters):
        centers = _update_centers(pts, assignments, centers)
        fresh = _nearest(pts, centers)
        if np.array_equal(fresh, assignments):
            break
        assignments = fresh
    inertia = float(np.sum((pts - centers[assignments]) ** 2))
    return KMeansResult(centers=centers, assignments=assignments, inertia=inertia)


def init_params(
    dataset: Dataset,
    components_per_class: int,
    seed: int,
    gamma_diag: float = 0.8,
    ridge: float | None = None,
) -> GmdaParams:
    """Starting parameters: per-class k-means mixtures, frequency priors, diagonal gamma.

    For each class the observed members are clustered into
    ``components_per_class`` groups; cluster centers become component means,
    within-cluster sample covariances (regularized) become component
    covariances, and cluster-size fractions become component weights. Class
    priors are the observed-label relative frequencies. The flipping matrix
    gets ``gamma_diag`` on the diagonal and spreads the remainder evenly, so
    its columns sum to one; a single-class problem pins it to ``[[1.0]]``.

    Raises
    ------
    ClassMissing
        If some label in 0..K-1 never occurs.
    ClassTooSmall
        If some class has fewer members than ``components_per_class``.
    """
    k = dataset.class_count
    m = components_per_class
    if m < 1:
        raise ValueError("components_per_class must be positive")
    if k > 1 and not (1.0 / k < gamma_diag <= 1.0):
        raise ValueError(f"gamma_diag must lie in (1/{k}, 1]")
    weights = np.empty((k, m))
    components: list[tuple[GaussianComponent, ...]] = []
    pi = np.empty(k)
    for cls in range(k):
        members = dataset.features[dataset.observed_labels == cls]
        if members.shape[0] == 0:
            raise ClassMissing(cls)
        if members.shape[0] < m:
            raise ClassTooSmall(cls, members.shape[0], m)
        pi[cls] = members.shape[0] / dataset.n
        result = kmeans(members, m, seed=_child_seed(seed, cls))
        class_centered = members - members.mean(axis=0)
        class_cov = class_centered.T @ class_centered / members.shape[0]
        row = []
        for comp in range(m):
            cluster = members[result.assignments == comp]
            weights[cls, comp] = cluster.shape[0] / members.shape[0]
            centered = cluster - cluster.mean(axis=0)
            cov = centered.T @ centered / cluster.shape[0]
            if cluster.shape[0] < 2 or float(np.trace(cov)) <= 0.0:
                # A singleton or duplicate-point cluster carries no spread;
                # starting it as a near-delta spike would glue it to one
                # sample forever, so it inherits the class-level covariance.
                cov = class_cov
            row.append(
                GaussianComponent.from_moments(result.centers[comp], cov, ridge=ridge)
            )
        components.append(tuple(row))
    if k == 1:
        gamma = np.array([[1.0]])
    else:
        gamma = np.full((k, k), (1.0 - gamma_diag) / (k - 1))
        np.fill_diagonal(gamma, gamma_diag)
    params = GmdaParams(
        weights=weights, components=tuple(components), gamma=gamma, pi=pi
    )
    params.validate()
    return params
