"""SVC model containers, response covariance assembly, and likelihoods.

The response covariance is built column-wise via Hadamard products,

    Sigma_Y(theta) = sum_k (w_k w_k') .* Sigma_k + tau2 * I,

so the n x nq random-effect design is never materialized.  Cholesky is the
single factorization primitive (log-determinant, solves, whitening) for
numerical consistency across modules.

All evaluation functions are pure; concurrent calls at different parameter
points are the intended parallelism unit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .exceptions import NumericalError
from .kernels import (
    GpParams,
    KernelSpec,
    aniso_distance_matrix,
    cholesky_lower,
    correlation,
    correlation_and_derivative,
)

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class Dataset:
    """Observed responses, covariates and locations.

    ``X`` holds the fixed-effect covariates (n x p) and ``W`` the
    random-effect covariates (n x q); the two may share columns.  Locations
    are coordinates in R^d.
    """

    y: np.ndarray
    X: np.ndarray
    W: np.ndarray
    locations: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        n = self.y.size
        self.X = np.asarray(self.X, dtype=float).reshape(n, -1)
        self.W = np.asarray(self.W, dtype=float).reshape(n, -1)
        self.locations = np.atleast_2d(np.asarray(self.locations, dtype=float))
        if n < 1:
            raise ValueError("dataset must contain at least one observation")
        if self.locations.shape[0] != n:
            raise ValueError(
                f"locations rows ({self.locations.shape[0]}) != n ({n})"
            )
        if self.p == 0 and self.q == 0:
            raise ValueError("need at least one fixed- or random-effect covariate")
        for name, arr in (("y", self.y), ("X", self.X), ("W", self.W),
                          ("locations", self.locations)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.W.shape[1]

    def subset_rows(self, idx) -> "Dataset":
        """Dataset restricted to the given row indices (copies)."""
        idx = np.asarray(idx)
        return Dataset(self.y[idx], self.X[idx], self.W[idx], self.locations[idx])


@dataclass
class SvcParams:
    """Model parameters: fixed effects, GP ranges/variances, and nugget.

    The covariance parameters are ordered (rho_1, sigma2_1, ..., rho_q,
    sigma2_q, tau2) whenever flattened into a vector.
    """

    mu: np.ndarray
    rho: np.ndarray
    sigma2: np.ndarray
    tau2: float

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).reshape(-1)
        self.rho = np.asarray(self.rho, dtype=float).reshape(-1)
        self.sigma2 = np.asarray(self.sigma2, dtype=float).reshape(-1)
        self.tau2 = float(self.tau2)
        if self.rho.shape != self.sigma2.shape:
            raise ValueError("rho and sigma2 must have equal length")
        if not self.tau2 > 0:
            raise ValueError(f"nugget variance must be positive, got {self.tau2}")
        if np.any(self.sigma2 < 0):
            raise ValueError("GP variances must be nonnegative")
        if np.any(self.rho <= 0):
            raise ValueError("GP ranges must be positive")

    @property
    def q(self) -> int:
        return self.rho.size

    @property
    def theta(self) -> np.ndarray:
        """Covariance parameters as (rho_1, sigma2_1, ..., rho_q, sigma2_q, tau2)."""
        out = np.empty(2 * self.q + 1)
        out[0:-1:2] = self.rho
        out[1:-1:2] = self.sigma2
        out[-1] = self.tau2
        return out

    @classmethod
    def from_theta(cls, mu, theta) -> "SvcParams":
        theta = np.asarray(theta, dtype=float)
        return cls(mu=mu, rho=theta[0:-1:2], sigma2=theta[1:-1:2], tau2=theta[-1])

    @property
    def gp(self) -> tuple[GpParams, ...]:
        return tuple(GpParams(r, s) for r, s in zip(self.rho, self.sigma2))

    def unidentified_ranges(self) -> np.ndarray:
        """Boolean mask of ranges whose variance is exactly zero."""
        return self.sigma2 == 0.0


@dataclass
class PenaltyConfig:
    """Shrinkage pair with per-parameter adaptive multipliers.

    Effective penalties are lambda_mu * weights_mu[j] and
    lambda_theta * weights_var[k]; an infinite weight pins the coordinate
    to exactly zero.
    """

    lambda_mu: float
    lambda_theta: float
    weights_mu: np.ndarray
    weights_var: np.ndarray

    def __post_init__(self):
        self.lambda_mu = float(self.lambda_mu)
        self.lambda_theta = float(self.lambda_theta)
        self.weights_mu = np.asarray(self.weights_mu, dtype=float).reshape(-1)
        self.weights_var = np.asarray(self.weights_var, dtype=float).reshape(-1)
        if self.lambda_mu < 0 or self.lambda_theta < 0:
            raise ValueError("shrinkage parameters must be nonnegative")
        if np.any(self.weights_mu < 0) or np.any(self.weights_var < 0):
            raise ValueError("penalty weights must be nonnegative")

    @classmethod
    def none(cls, p: int, q: int) -> "PenaltyConfig":
        """Zero penalties (plain likelihood)."""
        return cls(0.0, 0.0, np.ones(p), np.ones(q))

    def mu_penalties(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(np.isinf(self.weights_mu), np.inf,
                            self.lambda_mu * self.weights_mu)

    def var_penalties(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(np.isinf(self.weights_var), np.inf,
                            self.lambda_theta * self.weights_var)


@dataclass
class CdStep:
    """One coordinate-descent iterate: parameters and objective values."""

    t: int
    mu: np.ndarray
    theta: np.ndarray
    loglik: float
    pen_loglik: float


@dataclass
class FitResult:
    """Estimates plus objective values and the coordinate-descent trace."""

    params: SvcParams
    loglik: float
    pen_loglik: float
    bic: float
    iterations: list[CdStep] = field(default_factory=list)
    converged: bool = True
    penalty: PenaltyConfig | None = None

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)

    def to_dict(self, fixed_names=None, svc_names=None) -> dict:
        """JSON-ready summary of the fit."""
        prm = self.params
        p, q = prm.mu.size, prm.q
        fixed_names = list(fixed_names) if fixed_names else [f"x{j+1}" for j in range(p)]
        svc_names = list(svc_names) if svc_names else [f"w{k+1}" for k in range(q)]
        unident = prm.unidentified_ranges()
        return {
            "estimates": {
                "mu": {name: float(v) for name, v in zip(fixed_names, prm.mu)},
                "gp": [
                    {
                        "name": svc_names[k],
                        "rho": float(prm.rho[k]),
                        "sigma2": float(prm.sigma2[k]),
                        "range_identifiable": bool(not unident[k]),
                    }
                    for k in range(q)
                ],
                "tau2": float(prm.tau2),
            },
            "loglik": float(self.loglik),
            "pen_loglik": float(self.pen_loglik),
            "bic": float(self.bic),
            "converged": bool(self.converged),
            "n_iterations": self.n_iterations,
            "trace": [
                {
                    "t": step.t,
                    "mu": [float(v) for v in step.mu],
                    "theta": [float(v) for v in step.theta],
                    "loglik": float(step.loglik),
                    "pen_loglik": float(step.pen_loglik),
                }
                for step in self.iterations
            ],
        }


def assemble_sigma_y(data: Dataset, params: SvcParams,
                     spec: KernelSpec = KernelSpec(), A=None,
                     dists=None) -> np.ndarray:
    """Response covariance sum_k (w_k w_k') .* Sigma_k + tau2 * I.

    Zero-variance components contribute an exact zero matrix and are
    skipped, which keeps the result bit-identical under changes of their
    (non-identifiable) range parameters.
    """
    if params.q != data.q:
        raise ValueError(f"params have q={params.q}, data has q={data.q}")
    n = data.n
    if dists is None and np.any(params.sigma2 > 0):
        dists = aniso_distance_matrix(data.locations, A)
    sigma = np.zeros((n, n))
    for k in range(data.q):
        s2 = params.sigma2[k]
        if s2 == 0.0:
            continue
        w = data.W[:, k]
        cov_k = s2 * correlation(dists / params.rho[k], spec)
        sigma += (w[:, None] * cov_k) * w[None, :]
    sigma[np.diag_indices(n)] += params.tau2
    if not np.all(np.isfinite(sigma)):
        raise NumericalError("non-finite entries in assembled response covariance")
    return sigma


def _chol_logdet_solve(sigma, resid, jitter=0.0):
    # Returns (L, logdet, quadratic form r' Sigma^{-1} r).
    L = cholesky_lower(sigma, jitter=jitter)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    z = solve_triangular(L, resid, lower=True)
    return L, logdet, float(z @ z)


def log_likelihood(data: Dataset, params: SvcParams,
                   spec: KernelSpec = KernelSpec(), A=None, dists=None,
                   jitter: float = 0.0) -> float:
    """Gaussian log-likelihood of the SVC model, computed via Cholesky."""
    sigma = assemble_sigma_y(data, params, spec, A, dists)
    resid = data.y - data.X @ params.mu
    _, logdet, quad = _chol_logdet_solve(sigma, resid, jitter)
    return -0.5 * (data.n * _LOG_2PI + logdet + quad)


def penalty_term(pen: PenaltyConfig, params: SvcParams) -> float:
    """Total penalty sum_j lam_j |mu_j| + sum_k lam_{p+k} sigma2_k.

    Coordinates sitting exactly at zero contribute nothing even under an
    infinite (pinning) weight.
    """
    lam_mu = pen.mu_penalties()
    lam_var = pen.var_penalties()
    with np.errstate(invalid="ignore"):
        tm = np.where(params.mu == 0.0, 0.0, lam_mu * np.abs(params.mu))
        tv = np.where(params.sigma2 == 0.0, 0.0, lam_var * params.sigma2)
    return float(np.sum(tm) + np.sum(tv))


def penalized_log_likelihood(data: Dataset, params: SvcParams,
                             pen: PenaltyConfig,
                             spec: KernelSpec = KernelSpec(), A=None,
                             dists=None, jitter: float = 0.0) -> float:
    """log-likelihood minus n times the weighted L1 penalty."""
    ll = log_likelihood(data, params, spec, A, dists, jitter)
    return ll - data.n * penalty_term(pen, params)


def _sigma_inverse(L):
    # Full symmetric inverse from a lower Cholesky factor.
    inv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise NumericalError(f"matrix inversion failed with code {info}")
    inv = np.tril(inv) + np.tril(inv, -1).T
    return inv


def neg_pll_theta(data: Dataset, params: SvcParams, pen: PenaltyConfig,
                  spec: KernelSpec = KernelSpec(), A=None, dists=None,
                  jitter: float = 0.0) -> float:
    """Covariance-step objective: -loglik plus n * variance penalty.

    The mean penalty is constant in theta and therefore omitted.
    """
    ll = log_likelihood(data, params, spec, A, dists, jitter)
    lam_var = pen.var_penalties()
    with np.errstate(invalid="ignore"):
        tv = np.where(params.sigma2 == 0.0, 0.0, lam_var * params.sigma2)
    return -ll + data.n * float(np.sum(tv))


def neg_pll_theta_gradient(data: Dataset, params: SvcParams,
                           pen: PenaltyConfig,
                           spec: KernelSpec = KernelSpec(), A=None,
                           dists=None, jitter: float = 0.0) -> np.ndarray:
    """Analytic gradient of :func:`neg_pll_theta` in theta.

    Component ordering is (rho_1, sigma2_1, ..., rho_q, sigma2_q, tau2).
    For any k with sigma2_k = 0 the rho_k component is exactly zero, since
    the covariance derivative is then the zero matrix.
    """
    if dists is None:
        dists = aniso_distance_matrix(data.locations, A)
    sigma = assemble_sigma_y(data, params, spec, A, dists)
    resid = data.y - data.X @ params.mu
    L = cholesky_lower(sigma, jitter=jitter)
    sigma_inv = _sigma_inverse(L)
    alpha = sigma_inv @ resid
    lam_var = pen.var_penalties()

    q = data.q
    grad = np.empty(2 * q + 1)
    for k in range(q):
        w = data.W[:, k]
        u = dists / params.rho[k]
        corr, dcorr = correlation_and_derivative(u, spec)
        aw = alpha * w
        # d Sigma / d sigma2_k = (w w') .* corr
        tr_s = float(w @ (sigma_inv * corr) @ w)
        quad_s = float(aw @ corr @ aw)
        grad[2 * k + 1] = 0.5 * tr_s - 0.5 * quad_s + data.n * lam_var[k]
        if params.sigma2[k] == 0.0:
            grad[2 * k] = 0.0
            continue
        # d Sigma / d rho_k = (w w') .* (sigma2 * r'(u) * (-u / rho))
        drho = params.sigma2[k] * dcorr * (-u / params.rho[k])
        tr_r = float(w @ (sigma_inv * drho) @ w)
        quad_r = float(aw @ drho @ aw)
        grad[2 * k] = 0.5 * tr_r - 0.5 * quad_r
    grad[-1] = 0.5 * float(np.trace(sigma_inv)) - 0.5 * float(alpha @ alpha)
    return grad
