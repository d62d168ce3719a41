"""E-step, M-step, EM driver, and clean-label prediction.

The latent structure per sample is (true class w, component m within w). The
E-step produces the class posterior ``q`` given the observed label and the
within-class component posterior ``h``; their product ``q * h`` is the joint
posterior over (class, component), and it is exactly this product that weights
every M-step moment update. Prediction of a fresh point marginalizes the true
class directly from priors and class densities; the flipping matrix plays no
role there because no observed label exists to condition on.
"""

from __future__ import annotations

import json
import math
import warnings
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .data import Dataset
from .errors import (
    DeadComponentWarning,
    DimensionMismatch,
    MonotonicityViolation,
    NumericalCollapse,
)
from .gaussian import GaussianComponent, log_pdf, log_sum_exp
from .initialization import init_params
from .params import MONOTONE_SLACK, FitConfig, FitReport, GmdaParams, Responsibilities

DEAD_MASS = 1e-12
DEAD_WEIGHT_FLOOR = 1e-6


def _component_log_pdfs(features: NDArray[np.float64], params: GmdaParams) -> NDArray[np.float64]:
    """(n, K, M) Gaussian log-densities of every sample under every component."""
    n = features.shape[0]
    k, m = params.weights.shape
    out = np.empty((n, k, m))
    for ki in range(k):
        for mi in range(m):
            out[:, ki, mi] = log_pdf(features, params.components[ki][mi])
    return out


def _log_class_density_matrix(
    features: NDArray[np.float64], params: GmdaParams
) -> NDArray[np.float64]:
    """(n, K) log mixture densities log p(x | class)."""
    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights)
    return log_sum_exp(log_w[np.newaxis] + _component_log_pdfs(features, params), axis=2)


def log_class_density(point: ArrayLike, params: GmdaParams, class_index: int):
    """Log mixture density of one class at ``point`` (float for a vector input).

    Computed as a log-sum-exp over the class's components, so zero-weight
    components contribute nothing rather than underflowing.
    """
    if not 0 <= class_index < params.n_classes:
        raise IndexError(f"class index {class_index} out of range")
    x = np.asarray(point, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[np.newaxis, :]
    if x.shape[1] != params.dim:
        raise DimensionMismatch(
            f"point of dimension {x.shape[1]} against model of dimension {params.dim}"
        )
    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights[class_index])
    stacked = np.stack(
        [log_pdf(x, comp) for comp in params.components[class_index]], axis=1
    )
    out = log_sum_exp(log_w[np.newaxis] + stacked, axis=1)
    return float(out[0]) if single else out


def e_step(dataset: Dataset, params: GmdaParams) -> Responsibilities:
    """Posteriors over (class, component) for every sample, all in the log domain.

    ``q[i, w]`` is proportional to ``p(x_i | w) * gamma[obs_i, w] * pi[w]``
    normalized over classes; ``h[i, w, m]`` is proportional to
    ``weights[w, m] * g(x_i | w, m)`` normalized over components.

    Raises
    ------
    NumericalCollapse
        If every class has zero posterior probability for some sample, which
        means a hard zero in gamma or pi blocks all explanations of it.
    """
    if dataset.dim != params.dim:
        raise DimensionMismatch(
            f"dataset of dimension {dataset.dim} against model of dimension {params.dim}"
        )
    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights)
        log_gamma = np.log(params.gamma)
        log_pi = np.log(params.pi)
    log_joint = log_w[np.newaxis] + _component_log_pdfs(dataset.features, params)
    log_density = log_sum_exp(log_joint, axis=2)  # (n, K)
    h = np.exp(log_joint - log_density[:, :, np.newaxis])
    scores = log_density + log_gamma[dataset.observed_labels] + log_pi[np.newaxis]
    norm = log_sum_exp(scores, axis=1)
    collapsed = np.flatnonzero(np.isneginf(norm))
    if collapsed.size:
        raise NumericalCollapse(int(collapsed[0]))
    q = np.exp(scores - norm[:, np.newaxis])
    return Responsibilities(q=q, h=h)


def m_step(dataset: Dataset, resp: Responsibilities, ridge: float | None = None) -> GmdaParams:
    """Closed-form parameter updates from the joint responsibilities ``q * h``.

    Component moments are responsibility-weighted means and covariances (no
    Bessel correction); component weights renormalize within each class; each
    flipping-matrix column collects the class's posterior mass per observed
    label; priors average the class posteriors. Components whose total mass
    falls below ``DEAD_MASS`` are revived deterministically: the mean moves to
    the sample least claimed by any component, the covariance resets to the
    class average, and the weight is floored before renormalization.
    """
    x = dataset.features
    q, h = resp.q, resp.h
    n, k = q.shape
    m = h.shape[2]
    if x.shape[0] != n:
        raise DimensionMismatch("responsibilities do not match the dataset size")
    joint = q[:, :, np.newaxis] * h  # (n, K, M)
    mass = joint.sum(axis=0)  # (K, M)
    class_mass = mass.sum(axis=1)  # (K,)
    dead = mass < DEAD_MASS

    means = np.zeros((k, m, dataset.dim))
    covs = np.zeros((k, m, dataset.dim, dataset.dim))
    for ki in range(k):
        for mi in range(m):
            if dead[ki, mi]:
                continue
            w = joint[:, ki, mi]
            mu = w @ x / mass[ki, mi]
            diff = x - mu
            means[ki, mi] = mu
            covs[ki, mi] = (w[:, np.newaxis] * diff).T @ diff / mass[ki, mi]

    raw_weights = np.zeros((k, m))
    np.divide(mass, class_mass[:, np.newaxis], out=raw_weights, where=class_mass[:, np.newaxis] > 0)

    if dead.any():
        dead_coords = np.argwhere(dead)
        warnings.warn(
            f"reviving {len(dead_coords)} dead component(s): "
            + ", ".join(f"(class {ki}, component {mi})" for ki, mi in dead_coords),
            DeadComponentWarning,
            stacklevel=2,
        )
        global_centered = x - x.mean(axis=0)
        global_cov = global_centered.T @ global_centered / n
        claim = joint.max(axis=(1, 2))
        least_claimed = np.argsort(claim, kind="stable")
        for j, (ki, mi) in enumerate(dead_coords):
            live = ~dead[ki]
            class_cov = covs[ki][live].mean(axis=0) if live.any() else global_cov
            means[ki, mi] = x[least_claimed[j % n]]
            covs[ki, mi] = class_cov
            raw_weights[ki, mi] = max(raw_weights[ki, mi], DEAD_WEIGHT_FLOOR)
    weights = raw_weights / raw_weights.sum(axis=1, keepdims=True)

    group = np.zeros((k, k))  # [observed, true] posterior mass
    for j in range(k):
        members = dataset.observed_labels == j
        if members.any():
            group[j] = q[members].sum(axis=0)
    column_mass = group.sum(axis=0)
    gamma = np.empty((k, k))
    for w_i in range(k):
        if column_mass[w_i] > 0:
            gamma[:, w_i] = group[:, w_i] / column_mass[w_i]
        else:
            gamma[:, w_i] = 1.0 / k  # dead class: keep the column a valid simplex

    pi = q.sum(axis=0) / n

    # Default conditioning: maximize the bound subject to an eigenvalue floor
    # of 1e-6 times the data's variance scale. The constrained maximizer is
    # the eigenvalue clip of the scatter matrix, so healthy components keep
    # their exact update (monotone EM at machine precision) while a component
    # collapsing onto one sample gets pinned at the floor instead of turning
    # into a delta spike with unbounded likelihood. An additive ridge cannot
    # do both: it either vanishes along with the collapse or re-perturbs
    # every healthy update enough to break the monotone trace. The floor must
    # not be much smaller than 1e-6 of scale: a pinned eigenvalue is only
    # representable to eps * norm(cov) absolute, and the likelihood is O(1)-
    # sensitive to its logarithm, so a deeper floor jitters the trace.
    data_scale = float(np.mean(np.var(x, axis=0)))
    eig_floor = 1e-6 * data_scale if data_scale > 0 else 1e-12

    def conditioned(mean, cov):
        if ridge is not None:
            return GaussianComponent.from_moments(mean, cov, ridge=ridge)
        eigvals, eigvecs = np.linalg.eigh(cov)
        if eigvals[0] < eig_floor:
            cov = (eigvecs * np.maximum(eigvals, eig_floor)) @ eigvecs.T
        return GaussianComponent.from_moments(mean, cov, ridge=0.0)

    components = tuple(
        tuple(conditioned(means[ki, mi], covs[ki, mi]) for mi in range(m))
        for ki in range(k)
    )
    params = GmdaParams(weights=weights, components=components, gamma=gamma, pi=pi)
    params.validate()
    return params


def log_likelihood(dataset: Dataset, params: GmdaParams) -> float:
    """Observed-data log-likelihood: per-sample log-sum over classes of
    ``p(x | w) * gamma[obs, w] * pi[w]``, summed exactly with ``math.fsum``."""
    with np.errstate(divide="ignore"):
        log_gamma = np.log(params.gamma)
        log_pi = np.log(params.pi)
    scores = (
        _log_class_density_matrix(dataset.features, params)
        + log_gamma[dataset.observed_labels]
        + log_pi[np.newaxis]
    )
    return math.fsum(log_sum_exp(scores, axis=1))


def fit(
    dataset: Dataset,
    components_per_class: int,
    config: FitConfig = FitConfig(),
    initial: GmdaParams | None = None,
    callback: Callable[[int, GmdaParams, float], None] | None = None,
) -> FitReport:
    """Alternate E- and M-steps from a k-means start until the likelihood settles.

    The log-likelihood is recorded after every M-step; iteration stops once
    the relative change drops below ``config.rel_tol`` or ``config.max_iters``
    is reached. A decrease beyond numerical slack raises
    :class:`MonotonicityViolation` immediately, since the update equations
    guarantee a non-decreasing trace and any drop signals an implementation
    bug. ``initial`` overrides the built-in initialization (useful for warm
    starts); ``callback(iteration, params, loglik)`` observes every iterate.
    """
    params = (
        initial
        if initial is not None
        else init_params(
            dataset,
            components_per_class,
            seed=config.seed,
            gamma_diag=config.gamma_diag_init,
            ridge=config.ridge,
        )
    )
    trace: list[float] = []
    previous: float | None = None
    converged = False
    for iteration in range(config.max_iters):
        resp = e_step(dataset, params)
        params = m_step(dataset, resp, ridge=config.ridge)
        current = log_likelihood(dataset, params)
        trace.append(current)
        if callback is not None:
            callback(iteration, params, current)
        if previous is not None:
            slack = MONOTONE_SLACK * (1.0 + abs(previous))
            if current < previous - slack:
                raise MonotonicityViolation(
                    f"log-likelihood fell from {previous!r} to {current!r} "
                    f"at iteration {iteration + 1}"
                )
            if abs(current - previous) < config.rel_tol * (1.0 + abs(previous)):
                converged = True
                break
        previous = current
    return FitReport(
        loglik_trace=np.asarray(trace),
        iterations_run=len(trace),
        converged=converged,
        final_params=params,
    )


def fit_single_gaussian(dataset: Dataset, config: FitConfig = FitConfig()) -> FitReport:
    """One Gaussian per class (the classical noisy-label discriminant model).

    Definitionally identical to ``fit`` with a single component per class; the
    moment updates then reduce to plain responsibility-weighted means and
    covariances.
    """
    return fit(dataset, 1, config)


def predict_posterior(point: ArrayLike, params: GmdaParams):
    """Posterior over true classes for an unlabeled point: prior times density.

    Accepts one vector (returns a length-K simplex) or an (n, d) matrix
    (returns n rows of posteriors). The flipping matrix is deliberately
    absent: an unlabeled point carries no observed label to condition on.
    """
    x = np.asarray(point, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[np.newaxis, :]
    if x.ndim != 2 or x.shape[1] != params.dim:
        raise DimensionMismatch(
            f"point of dimension {x.shape[-1]} against model of dimension {params.dim}"
        )
    with np.errstate(divide="ignore"):
        scores = _log_class_density_matrix(x, params) + np.log(params.pi)[np.newaxis]
    posterior = np.exp(scores - log_sum_exp(scores, axis=1)[:, np.newaxis])
    return posterior[0] if single else posterior


def predict_label(point: ArrayLike, params: GmdaParams):
    """Most probable true class; ties resolve to the lowest class index."""
    posterior = predict_posterior(point, params)
    if posterior.ndim == 1:
        return int(posterior.argmax())
    return posterior.argmax(axis=1)


def params_to_dict(params: GmdaParams) -> dict:
    """JSON-ready document: {k, m, d, pi, gamma (row-major), classes}."""
    return {
        "k": params.n_classes,
        "m": params.n_components,
        "d": params.dim,
        "pi": params.pi.tolist(),
        "gamma": params.gamma.tolist(),
        "classes": [
            {
                "weights": params.weights[ki].tolist(),
                "means": [comp.mean.tolist() for comp in params.components[ki]],
                "covariances": [comp.covariance.tolist() for comp in params.components[ki]],
            }
            for ki in range(params.n_classes)
        ],
    }


def params_from_dict(doc: dict) -> GmdaParams:
    """Rebuild parameters from their JSON document.

    Stored covariances are already conditioned, so they are factored directly
    rather than re-regularized; the round trip is value-exact.
    """
    k, m, d = int(doc["k"]), int(doc["m"]), int(doc["d"])
    weights = np.empty((k, m))
    components: list[tuple[GaussianComponent, ...]] = []
    for ki, cls in enumerate(doc["classes"]):
        weights[ki] = np.asarray(cls["weights"], dtype=float)
        row = []
        for mi in range(m):
            mean = np.asarray(cls["means"][mi], dtype=float)
            cov = np.asarray(cls["covariances"][mi], dtype=float)
            if mean.shape != (d,) or cov.shape != (d, d):
                raise DimensionMismatch("stored component shapes disagree with d")
            chol = np.linalg.cholesky(cov)
            log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
            row.append(GaussianComponent(mean=mean, covariance=cov, chol=chol, log_det=log_det))
        components.append(tuple(row))
    params = GmdaParams(
        weights=weights,
        components=tuple(components),
        gamma=np.asarray(doc["gamma"], dtype=float),
        pi=np.asarray(doc["pi"], dtype=float),
    )
    params.validate()
    return params


def save_params(params: GmdaParams, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(params_to_dict(params), handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_params(path: str) -> GmdaParams:
    with open(path, encoding="utf-8") as handle:
        return params_from_dict(json.load(handle))
