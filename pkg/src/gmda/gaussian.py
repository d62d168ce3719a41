"""Numerically stable multivariate Gaussian kernel.

Everything downstream (responsibilities, likelihoods, posteriors) is built on
three primitives kept here: a cached-Cholesky Gaussian log-density, covariance
conditioning, and a log-sum-exp reduction. All density arithmetic stays in the
log domain; probabilities are exponentiated only after normalization, because
ratios of raw densities underflow once the dimension grows past a few dozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import solve_triangular

from .errors import (
    DimensionMismatch,
    EmptyInput,
    FactorizationError,
    NonSquare,
    NotFactorized,
)

LOG_2PI = math.log(2.0 * math.pi)

# Ridge escalation: initial epsilon, then x10 up to this many retries.
_MAX_RIDGE_ESCALATIONS = 3


def log_sum_exp(values: ArrayLike, axis: int | None = None):
    """Stable ``log(sum(exp(values)))`` along ``axis`` (whole array if None).

    Returns ``max + log(sum(exp(v - max)))``; a slice that is entirely ``-inf``
    reduces to ``-inf`` without raising. The result is exact under permutation
    of the inputs up to floating-point reassociation.

    Raises
    ------
    EmptyInput
        If the reduced axis has no elements.
    """
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        raise EmptyInput("log_sum_exp of an empty collection")
    m = np.max(a, axis=axis, keepdims=True)
    # A -inf maximum means the whole slice is -inf; shift by 0 there so the
    # subtraction does not produce nan.
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - shift), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def regularize(covariance: ArrayLike, epsilon: float) -> NDArray[np.float64]:
    """Symmetrize a square matrix and add a ridge: ``(A + A.T)/2 + epsilon*I``.

    For PSD input and ``epsilon > 0`` the result is positive-definite.

    Raises
    ------
    NonSquare
        If the input is not a square 2-d matrix.
    """
    a = np.asarray(covariance, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {a.shape}")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    return 0.5 * (a + a.T) + epsilon * np.eye(a.shape[0])


def default_ridge(covariance: NDArray[np.float64]) -> float:
    """Default conditioning ridge: ``1e-6 * mean(diagonal)``.

    Falls back to an absolute 1e-6 when the diagonal carries no scale (an
    all-zero covariance from a degenerate cluster).
    """
    mean_diag = float(np.mean(np.diag(np.asarray(covariance, dtype=float))))
    return 1e-6 * mean_diag if mean_diag > 0.0 else 1e-6


def _cholesky_with_escalation(
    covariance: NDArray[np.float64], epsilon: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Regularize and factor, escalating the ridge x10 a bounded number of times."""
    trace = float(np.abs(np.diag(covariance)).sum())
    floor = max(1e-10 * trace, 1e-12)
    eps = epsilon
    for _ in range(1 + _MAX_RIDGE_ESCALATIONS):
        conditioned = regularize(covariance, eps)
        try:
            return conditioned, np.linalg.cholesky(conditioned)
        except np.linalg.LinAlgError:
            eps = eps * 10.0 if eps > 0.0 else floor
    raise FactorizationError(
        f"covariance not positive-definite after ridge escalation to {eps/10.0:g}"
    )


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    """One mixture component: mean, conditioned covariance, cached factorization.

    Instances are immutable after construction and safe to share across
    threads. ``covariance`` is the stored (already regularized) matrix;
    ``chol`` is its lower-triangular Cholesky factor and ``log_det`` equals
    ``2 * sum(log(diag(chol)))``.
    """

    mean: NDArray[np.float64]
    covariance: NDArray[np.float64]
    chol: NDArray[np.float64] | None = None
    log_det: float | None = None

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_moments(
        cls,
        mean: ArrayLike,
        covariance: ArrayLike,
        ridge: float | None = None,
    ) -> "GaussianComponent":
        """Build a component, conditioning the covariance before factorization.

        ``ridge=None`` applies the default ``1e-6 * mean(diagonal)`` ridge;
        pass an explicit value (possibly 0) to control conditioning exactly.
        If Cholesky fails, the ridge is escalated x10 up to 3 times before
        :class:`FactorizationError` is raised.
        """
        mu = np.asarray(mean, dtype=float)
        if mu.ndim != 1:
            raise DimensionMismatch(f"mean must be 1-d, got shape {mu.shape}")
        cov = np.asarray(covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise NonSquare(f"covariance must be square, got shape {cov.shape}")
        if cov.shape[0] != mu.shape[0]:
            raise DimensionMismatch(
                f"mean has dimension {mu.shape[0]} but covariance is {cov.shape}"
            )
        eps = default_ridge(cov) if ridge is None else float(ridge)
        conditioned, chol = _cholesky_with_escalation(cov, eps)
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return cls(mean=mu, covariance=conditioned, chol=chol, log_det=log_det)

    def log_pdf(self, point: ArrayLike):
        return log_pdf(point, self)


def log_pdf(point: ArrayLike, component: GaussianComponent):
    """Gaussian log-density (nats) at ``point``, via the cached Cholesky factor.

    Accepts a single length-d vector (returns a float) or an (n, d) matrix
    (returns a length-n vector). The quadratic form is evaluated with a
    triangular solve; the inverse covariance is never materialized.

    Raises
    ------
    DimensionMismatch
        If the point dimension disagrees with the component.
    NotFactorized
        If the component lacks its cached factorization (a caller bug).
    """
    if component.chol is None or component.log_det is None:
        raise NotFactorized("component has no cached Cholesky factorization")
    x = np.asarray(point, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[np.newaxis, :]
    if x.ndim != 2 or x.shape[1] != component.dim:
        raise DimensionMismatch(
            f"point of dimension {x.shape[-1]} against component of dimension {component.dim}"
        )
    diff = x - component.mean
    y = solve_triangular(component.chol, diff.T, lower=True, check_finite=False)
    mahal = np.einsum("dn,dn->n", y, y)
    out = -0.5 * (component.dim * LOG_2PI + component.log_det + mahal)
    return float(out[0]) if single else out
