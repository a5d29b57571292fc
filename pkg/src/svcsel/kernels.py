"""Correlation functions, anisotropic distances, and covariance matrices.

Only the half-integer Matern families with closed forms are supported
(exponential, Matern 3/2, Matern 5/2), which avoids any special-function
dependency.  All functions are pure; no shared mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack
from scipy.spatial.distance import cdist

from .exceptions import NumericalError

_SQRT3 = np.sqrt(3.0)
_SQRT5 = np.sqrt(5.0)

FAMILIES = ("exp", "matern32", "matern52")
_SMOOTHNESS = {"exp": 0.5, "matern32": 1.5, "matern52": 2.5}


@dataclass(frozen=True)
class KernelSpec:
    """Correlation family, fixed at model construction and shared by all SVCs."""

    family: str = "exp"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(
                f"unknown kernel family {self.family!r}; choose from {FAMILIES}"
            )

    @property
    def smoothness(self) -> float:
        return _SMOOTHNESS[self.family]


@dataclass(frozen=True)
class GpParams:
    """Range and variance of one GP coefficient process.

    The range must stay positive even for a zero-variance process; the
    parameter slot remains although it is then not identifiable.
    """

    rho: float
    sigma2: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"range must be positive, got {self.rho}")
        if not self.sigma2 >= 0:
            raise ValueError(f"variance must be nonnegative, got {self.sigma2}")


def check_anisotropy(A: np.ndarray, dim: int) -> np.ndarray:
    """Validate a symmetric positive-definite scaling matrix for coordinates."""
    A = np.asarray(A, dtype=float)
    if A.shape != (dim, dim):
        raise ValueError(f"anisotropy matrix must be {dim}x{dim}, got {A.shape}")
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12):
        raise ValueError("anisotropy matrix must be symmetric")
    if np.any(np.linalg.eigvalsh(A) <= 0):
        raise ValueError("anisotropy matrix must be positive definite")
    return A


def aniso_distance(s_l, s_m, A=None) -> float:
    """Scaled norm sqrt((s_l - s_m)' A (s_l - s_m)); Euclidean when A is None."""
    s_l = np.atleast_1d(np.asarray(s_l, dtype=float))
    s_m = np.atleast_1d(np.asarray(s_m, dtype=float))
    if s_l.shape != s_m.shape:
        raise ValueError(f"coordinate dimensions differ: {s_l.shape} vs {s_m.shape}")
    diff = s_l - s_m
    if A is None:
        return float(np.sqrt(diff @ diff))
    A = check_anisotropy(A, diff.size)
    return float(np.sqrt(diff @ A @ diff))


def _aniso_factor(A, dim):
    # A = L L' so that ||x||_A = ||L' x||_2; coordinates transform as X @ L.
    return np.linalg.cholesky(check_anisotropy(A, dim))


def aniso_distance_matrix(locations, A=None) -> np.ndarray:
    """Pairwise scaled distances between rows of ``locations``."""
    locs = np.atleast_2d(np.asarray(locations, dtype=float))
    if A is not None:
        locs = locs @ _aniso_factor(A, locs.shape[1])
    return cdist(locs, locs)


def aniso_cross_distance_matrix(locs_a, locs_b, A=None) -> np.ndarray:
    """Scaled distances between two location sets, shape (len(a), len(b))."""
    a = np.atleast_2d(np.asarray(locs_a, dtype=float))
    b = np.atleast_2d(np.asarray(locs_b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError("location sets have different coordinate dimensions")
    if A is not None:
        L = _aniso_factor(A, a.shape[1])
        a = a @ L
        b = b @ L
    return cdist(a, b)


def correlation(u, spec: KernelSpec = KernelSpec()):
    """Correlation r(u) at scaled distance u >= 0, elementwise for arrays.

    r(0) = 1, r is nonincreasing, and 0 <= r <= 1 for every family.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("scaled distance must be nonnegative")
    if spec.family == "exp":
        r = np.exp(-u)
    elif spec.family == "matern32":
        t = _SQRT3 * u
        r = (1.0 + t) * np.exp(-t)
    else:
        t = _SQRT5 * u
        r = (1.0 + t + t * t / 3.0) * np.exp(-t)
    return r if r.ndim else float(r)


def correlation_derivative(u, spec: KernelSpec = KernelSpec()):
    """Derivative dr/du; bounded on [0, inf) for every supported family."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("scaled distance must be nonnegative")
    if spec.family == "exp":
        d = -np.exp(-u)
    elif spec.family == "matern32":
        d = -3.0 * u * np.exp(-_SQRT3 * u)
    else:
        d = -(5.0 / 3.0) * u * (1.0 + _SQRT5 * u) * np.exp(-_SQRT5 * u)
    return d if d.ndim else float(d)


def correlation_and_derivative(u, spec: KernelSpec):
    """(r(u), r'(u)) sharing a single exponential evaluation."""
    u = np.asarray(u, dtype=float)
    if spec.family == "exp":
        r = np.exp(-u)
        return r, -r
    if spec.family == "matern32":
        e = np.exp(-_SQRT3 * u)
        return (1.0 + _SQRT3 * u) * e, -3.0 * u * e
    e = np.exp(-_SQRT5 * u)
    t = _SQRT5 * u
    return (1.0 + t + t * t / 3.0) * e, -(5.0 / 3.0) * u * (1.0 + t) * e


def covariance_matrix(locations, params: GpParams, spec: KernelSpec = KernelSpec(),
                      A=None, dists=None) -> np.ndarray:
    """Covariance matrix sigma2 * r(||s_l - s_m||_A / rho) over all pairs.

    ``dists`` may carry a precomputed scaled distance matrix to avoid
    repeating the pairwise-distance work across evaluations.
    """
    if dists is None:
        dists = aniso_distance_matrix(locations, A)
    if params.sigma2 == 0.0:
        return np.zeros_like(dists)
    return params.sigma2 * correlation(dists / params.rho, spec)


def covariance_matrix_range_derivative(locations, params: GpParams,
                                       spec: KernelSpec = KernelSpec(),
                                       A=None, dists=None) -> np.ndarray:
    """Elementwise derivative of the covariance matrix in the range rho.

    Equals sigma2 * r'(U/rho) * (-U/rho^2); identically zero when sigma2 = 0.
    """
    if dists is None:
        dists = aniso_distance_matrix(locations, A)
    if params.sigma2 == 0.0:
        return np.zeros_like(dists)
    u = dists / params.rho
    return params.sigma2 * correlation_derivative(u, spec) * (-u / params.rho)


def cholesky_lower(mat: np.ndarray, jitter: float = 0.0) -> np.ndarray:
    """Lower Cholesky factor, optionally adding a diagonal jitter first.

    Raises :class:`NumericalError` carrying the 1-based pivot index of the
    first non-positive-definite leading minor.
    """
    a = np.array(mat, dtype=float, order="F")
    if jitter:
        a[np.diag_indices_from(a)] += jitter
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=1)
    if info != 0:
        raise NumericalError(
            f"Cholesky factorization failed at pivot {info}", pivot=int(info)
        )
    return c
