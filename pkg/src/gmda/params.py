"""Parameter and result containers for the noisy-label mixture classifier.

``GmdaParams`` bundles, for K classes, the per-class mixture (M weighted
Gaussian components each), the K x K label-flipping matrix, and the class
priors. The flipping matrix is stored observed-major: ``gamma[j, i]`` is the
probability that true class ``i`` is *observed* as class ``j``, so the
constraint "each true class's flip probabilities sum to one" is a column sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import InvalidParams, MonotonicityViolation
from .gaussian import GaussianComponent

SIMPLEX_TOL = 1e-10
MONOTONE_SLACK = 1e-8


@dataclass(frozen=True, eq=False)
class GmdaParams:
    """Full parameter set: mixture weights/components, flipping matrix, priors."""

    weights: NDArray[np.float64]  # (K, M) per-class component weights
    components: tuple[tuple[GaussianComponent, ...], ...]  # K classes x M components
    gamma: NDArray[np.float64]  # (K, K), [observed, true], columns sum to 1
    pi: NDArray[np.float64]  # (K,) class priors

    @property
    def n_classes(self) -> int:
        return self.pi.shape[0]

    @property
    def n_components(self) -> int:
        return self.weights.shape[1]

    @property
    def dim(self) -> int:
        return self.components[0][0].dim

    def validate(self) -> None:
        """Check every structural invariant; raises InvalidParams on violation."""
        k, m = self.weights.shape
        if len(self.components) != k or any(len(row) != m for row in self.components):
            raise InvalidParams("component grid does not match the weight matrix shape")
        if self.gamma.shape != (k, k) or self.pi.shape != (k,):
            raise InvalidParams("gamma or pi shape inconsistent with the class count")
        for name, arr in (("weights", self.weights), ("gamma", self.gamma), ("pi", self.pi)):
            if not np.all(np.isfinite(arr)):
                raise InvalidParams(f"{name} contains non-finite entries")
            if np.any(arr < 0):
                raise InvalidParams(f"{name} contains negative entries")
        if np.any(np.abs(self.weights.sum(axis=1) - 1.0) > SIMPLEX_TOL):
            raise InvalidParams("component weights of some class do not sum to 1")
        if np.any(np.abs(self.gamma.sum(axis=0) - 1.0) > SIMPLEX_TOL):
            raise InvalidParams("some gamma column does not sum to 1")
        if abs(float(self.pi.sum()) - 1.0) > SIMPLEX_TOL:
            raise InvalidParams("class priors do not sum to 1")
        for row in self.components:
            for comp in row:
                if comp.chol is None or comp.log_det is None:
                    raise InvalidParams("a component is missing its factorization")
                if comp.dim != self.dim:
                    raise InvalidParams("components disagree on dimension")


@dataclass(frozen=True, eq=False)
class Responsibilities:
    """E-step output: class posteriors ``q`` and per-class component posteriors ``h``.

    ``q[i, w]`` is the posterior that sample i's true class is w given its
    observed label; ``h[i, w, m]`` is the posterior over components within
    class w. Rows of ``q`` and every ``(i, w)`` slice of ``h`` sum to one.
    """

    q: NDArray[np.float64]  # (n, K)
    h: NDArray[np.float64]  # (n, K, M)

    def validate(self) -> None:
        if self.q.ndim != 2 or self.h.ndim != 3 or self.h.shape[:2] != self.q.shape:
            raise InvalidParams("responsibility shapes are inconsistent")
        for name, arr in (("q", self.q), ("h", self.h)):
            if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
                raise InvalidParams(f"{name} entries must lie in [0, 1]")
        if np.any(np.abs(self.q.sum(axis=1) - 1.0) > SIMPLEX_TOL):
            raise InvalidParams("some q row does not sum to 1")
        if np.any(np.abs(self.h.sum(axis=2) - 1.0) > SIMPLEX_TOL):
            raise InvalidParams("some h slice does not sum to 1")


@dataclass(frozen=True)
class FitConfig:
    """Knobs for the EM driver.

    ``rel_tol`` stops the loop once the log-likelihood change falls below
    ``rel_tol * (1 + |L|)``. ``ridge=None`` applies the default covariance
    conditioning (1e-6 times the mean diagonal) at every factorization.
    """

    max_iters: int = 100
    rel_tol: float = 1e-6
    ridge: float | None = None
    seed: int = 0
    gamma_diag_init: float = 0.8

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")


@dataclass(frozen=True, eq=False)
class FitReport:
    """Outcome of one EM run: the likelihood trace and the final parameters."""

    loglik_trace: NDArray[np.float64]
    iterations_run: int
    converged: bool
    final_params: GmdaParams

    def validate(self) -> None:
        """Monotone-EM check: the trace may never drop beyond numerical slack."""
        trace = self.loglik_trace
        for t in range(1, len(trace)):
            slack = MONOTONE_SLACK * (1.0 + abs(trace[t - 1]))
            if trace[t] < trace[t - 1] - slack:
                raise MonotonicityViolation(
                    f"log-likelihood fell from {trace[t - 1]!r} to {trace[t]!r} at step {t}"
                )
