"""Synthetic data generation and the desk-scale replication harness.

Locations come from a perturbed grid on the unit square, covariates from a
zero-mean normal with AR(1)-style correlation, and responses from the SVC
model with chosen true parameters.  The study fits MLE, PMLE (with tuned
shrinkage), and an oracle MLE restricted to the true support, then reports
relative model errors and correct/incorrect zero-selection counts.

Replicates are driven by independent RNG streams keyed on (master seed,
replicate index), so serial and parallel runs produce identical output.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import cho_solve

from .exceptions import NumericalError, SvcselError
from .kernels import GpParams, KernelSpec, aniso_distance_matrix, \
    cholesky_lower, covariance_matrix
from .mbo import TuneConfig, tune_shrinkage
from .model import Dataset, SvcParams, assemble_sigma_y
from .pmle import CdConfig, count_nonzero, default_theta_bounds, fit_mle

# True parameters of the reference simulation design: eight covariates with
# a balanced mix of zero/non-zero fixed effects and GP variances.
TRUE_MU = np.array([3.0, 1.5, 0.0, 0.0, 2.0, 0.0, 1.0, 0.0])
TRUE_SIGMA2 = np.array([0.2, 0.0, 0.25, 0.0, 0.25, 0.2, 0.0, 0.0])
# Ranges for zero-variance components are not identifiable; the 0.1 entries
# in those slots are placeholders and never enter the generated data.
TRUE_RHO = np.array([0.2, 0.1, 0.1, 0.1, 0.075, 0.1, 0.1, 0.1])


@dataclass
class SimConfig:
    """Configuration of the synthetic study."""

    m: int = 15                       # grid side; n = m^2
    gamma: float = 0.5                # covariate correlation base
    true_mu: np.ndarray = field(default_factory=lambda: TRUE_MU.copy())
    true_rho: np.ndarray = field(default_factory=lambda: TRUE_RHO.copy())
    true_sigma2: np.ndarray = field(default_factory=lambda: TRUE_SIGMA2.copy())
    tau2: float = 0.1
    n_reps: int = 100
    rng_seed: int = 0
    margin_fraction: float = 0.05
    resample_covariates: bool = True  # fresh covariate draw per replicate
    kernel: str = "exp"

    def __post_init__(self):
        self.true_mu = np.asarray(self.true_mu, dtype=float)
        self.true_rho = np.asarray(self.true_rho, dtype=float)
        self.true_sigma2 = np.asarray(self.true_sigma2, dtype=float)
        if self.m < 2:
            raise ValueError("grid side must be at least 2")
        if not abs(self.gamma) < 1:
            raise ValueError("covariate correlation base must satisfy |gamma| < 1")
        if not (self.true_mu.size == self.true_rho.size == self.true_sigma2.size):
            raise ValueError("true parameter vectors must have equal length")
        if np.any(self.true_rho <= 0):
            raise ValueError("true ranges must be positive")
        if not self.tau2 > 0:
            raise ValueError("true nugget must be positive")
        if self.n_reps < 1:
            raise ValueError("need at least one replicate")

    @property
    def p(self) -> int:
        return self.true_mu.size

    @property
    def n(self) -> int:
        return self.m * self.m

    def spec(self) -> KernelSpec:
        return KernelSpec(self.kernel)

    def true_params(self) -> SvcParams:
        return SvcParams(mu=self.true_mu, rho=self.true_rho,
                         sigma2=self.true_sigma2, tau2=self.tau2)


@dataclass
class SimTruth:
    """Everything needed to reconstruct a generated response exactly."""

    params: SvcParams
    eta: np.ndarray            # GP draws, shape (n, q)
    eps: np.ndarray            # nugget draw, shape (n,)


@dataclass
class SelectionCounts:
    """Correct / incorrect zero-selection counts per parameter block."""

    c_fixed: int
    ic_fixed: int
    c_random: int
    ic_random: int


def perturbed_grid(m: int, margin_fraction: float = 0.05, rng=None) -> np.ndarray:
    """m^2 locations, one drawn uniformly from each grid cell's sub-square.

    Each cell of the m x m tiling of the unit square contributes exactly one
    point, sampled from the centered sub-square of side
    (1 - 2 * margin_fraction) / m.
    """
    if m < 2:
        raise ValueError("grid side must be at least 2")
    if not 0 <= margin_fraction < 0.5:
        raise ValueError("margin fraction must lie in [0, 0.5)")
    rng = np.random.default_rng(rng)
    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    centers = (np.column_stack([ii.ravel(), jj.ravel()]) + 0.5) / m
    side = (1.0 - 2.0 * margin_fraction) / m
    return centers + rng.uniform(-0.5, 0.5, size=(m * m, 2)) * side


def sample_covariates(n: int, p: int, gamma: float, rng=None) -> np.ndarray:
    """Rows i.i.d. N_p(0, Gamma) with Gamma_jk = gamma^|j-k|."""
    if not abs(gamma) < 1:
        raise ValueError("|gamma| must be below 1")
    rng = np.random.default_rng(rng)
    idx = np.arange(p)
    corr = gamma ** np.abs(idx[:, None] - idx[None, :])
    L = np.linalg.cholesky(corr)
    return rng.standard_normal((n, p)) @ L.T


def sample_gp(locations, params: GpParams, spec: KernelSpec = KernelSpec(),
              A=None, rng=None, dists=None) -> np.ndarray:
    """One draw of a zero-mean GP at the given locations."""
    rng = np.random.default_rng(rng)
    locations = np.atleast_2d(np.asarray(locations, dtype=float))
    n = locations.shape[0]
    if params.sigma2 == 0.0:
        return np.zeros(n)
    cov = covariance_matrix(locations, params, spec, A, dists=dists)
    try:
        L = cholesky_lower(cov)
    except NumericalError:
        L = cholesky_lower(cov, jitter=1e-10 * params.sigma2)
    return L @ rng.standard_normal(n)


def generate_dataset(cfg: SimConfig, rep_index: int) -> tuple[Dataset, SimTruth]:
    """Simulate one replicate; deterministic given (cfg.rng_seed, rep_index)."""
    rng = np.random.default_rng([cfg.rng_seed, rep_index])
    n, p = cfg.n, cfg.p
    spec = cfg.spec()
    locs = perturbed_grid(cfg.m, cfg.margin_fraction, rng)
    if cfg.resample_covariates:
        X = sample_covariates(n, p, cfg.gamma, rng)
    else:
        X = sample_covariates(n, p, cfg.gamma,
                              np.random.default_rng([cfg.rng_seed, 1 << 30]))
    dists = aniso_distance_matrix(locs)
    eta = np.zeros((n, p))
    for k in range(p):
        if cfg.true_sigma2[k] > 0:
            eta[:, k] = sample_gp(locs, GpParams(cfg.true_rho[k], cfg.true_sigma2[k]),
                                  spec, rng=rng, dists=dists)
    eps = np.sqrt(cfg.tau2) * rng.standard_normal(n)
    y = X @ cfg.true_mu + np.sum(eta * X, axis=1) + eps
    data = Dataset(y=y, X=X, W=X, locations=locs)
    return data, SimTruth(params=cfg.true_params(), eta=eta, eps=eps)


def in_sample_prediction(data: Dataset, params: SvcParams,
                         spec: KernelSpec = KernelSpec(), A=None,
                         dists=None) -> np.ndarray:
    """Fitted values X mu + sum_k w_k .* E[eta_k | y].

    By joint normality the conditional SVC means satisfy
    sum_k w_k .* E[eta_k | y] = (Sigma_Y - tau2 I) Sigma_Y^{-1} (y - X mu),
    so the fitted values equal y - tau2 * Sigma_Y^{-1} (y - X mu).
    """
    resid = data.y - data.X @ params.mu
    if not np.any(params.sigma2 > 0):
        return data.X @ params.mu
    sigma = assemble_sigma_y(data, params, spec, A, dists)
    L = cholesky_lower(sigma)
    alpha = cho_solve((L, True), resid)
    return data.y - params.tau2 * alpha


def rme(y, y_hat) -> float:
    """Relative model error ||y - y_hat||_1 / ||y - mean(y)||_1."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError("prediction length does not match response length")
    denom = float(np.sum(np.abs(y - np.mean(y))))
    if denom == 0.0:
        raise ZeroDivisionError("relative model error undefined for constant response")
    return float(np.sum(np.abs(y - y_hat))) / denom


def selection_counts(estimate: SvcParams, truth: SvcParams) -> SelectionCounts:
    """Cross-tabulate exact-zero estimates against the truth."""
    if estimate.mu.size != truth.mu.size or estimate.q != truth.q:
        raise ValueError("estimate and truth dimensions differ")
    est_mu0 = estimate.mu == 0.0
    tru_mu0 = truth.mu == 0.0
    est_s20 = estimate.sigma2 == 0.0
    tru_s20 = truth.sigma2 == 0.0
    return SelectionCounts(
        c_fixed=int(np.sum(est_mu0 & tru_mu0)),
        ic_fixed=int(np.sum(est_mu0 & ~tru_mu0)),
        c_random=int(np.sum(est_s20 & tru_s20)),
        ic_random=int(np.sum(est_s20 & ~tru_s20)),
    )


def _study_bounds(cfg, data):
    # Range floor (3m)^-1 per the effective-range argument on an m x m grid.
    return default_theta_bounds(data, rho_lower=1.0 / (3.0 * cfg.m))


def _fit_oracle(cfg, data, truth, spec, bounds_full, cd):
    """MLE on the true-support model, scattered back to full-size parameters."""
    mu_support = truth.params.mu != 0.0
    var_support = truth.params.sigma2 != 0.0
    sub = Dataset(y=data.y, X=data.X[:, mu_support], W=data.W[:, var_support],
                  locations=data.locations)
    sub_bounds = _study_bounds(cfg, sub)
    fit = fit_mle(sub, spec, bounds=sub_bounds, cd=cd)
    mu = np.zeros(cfg.p)
    mu[mu_support] = fit.params.mu
    rho = np.full(cfg.p, bounds_full.lower[0])
    rho[var_support] = fit.params.rho
    sigma2 = np.zeros(cfg.p)
    sigma2[var_support] = fit.params.sigma2
    params = SvcParams(mu=mu, rho=rho, sigma2=sigma2, tau2=fit.params.tau2)
    return fit, params


def _method_row(cfg, rep, method, fit, params, data, truth, spec, dists,
                lam=None):
    counts = selection_counts(params, truth.params)
    yhat = in_sample_prediction(data, params, spec, dists=dists)
    nz_mu, nz_var = count_nonzero(params)
    row = {
        "rep": rep,
        "method": method,
        "rme": rme(data.y, yhat),
        "c_fixed": counts.c_fixed,
        "ic_fixed": counts.ic_fixed,
        "c_random": counts.c_random,
        "ic_random": counts.ic_random,
        "n_mu_nonzero": nz_mu,
        "n_var_nonzero": nz_var,
        "cd_iterations": fit.n_iterations,
        "converged": bool(fit.converged),
        "loglik": float(fit.loglik),
        "bic": float(fit.bic),
        "lambda_mu": None if lam is None else float(lam[0]),
        "lambda_theta": None if lam is None else float(lam[1]),
        "error": "",
    }
    for j, v in enumerate(params.mu):
        row[f"mu_{j+1}"] = float(v)
    for k in range(params.q):
        row[f"rho_{k+1}"] = float(params.rho[k])
        row[f"sigma2_{k+1}"] = float(params.sigma2[k])
    row["tau2"] = float(params.tau2)
    return row


def _failure_row(rep, method, err):
    return {"rep": rep, "method": method, "error": f"{type(err).__name__}: {err}"}


def run_replicate(cfg: SimConfig, rep: int, methods=("MLE", "PMLE", "Oracle"),
                  tune: TuneConfig | None = None,
                  cd: CdConfig | None = None) -> list[dict]:
    """Generate one dataset and fit every requested method on it.

    ``cd`` controls the penalized coordinate descent; the unpenalized MLE
    and oracle fits use the higher default iteration cap of
    :func:`fit_mle`.
    """
    cd = cd or CdConfig()
    spec = cfg.spec()
    data, truth = generate_dataset(cfg, rep)
    dists = aniso_distance_matrix(data.locations)
    bounds = _study_bounds(cfg, data)
    rows = []

    mle = None
    need_mle = any(m in methods for m in ("MLE", "PMLE"))
    if need_mle:
        try:
            mle = fit_mle(data, spec, bounds=bounds)
        except SvcselError as err:
            if "MLE" in methods:
                rows.append(_failure_row(rep, "MLE", err))
            if "PMLE" in methods:
                rows.append(_failure_row(rep, "PMLE", err))
    if mle is not None and "MLE" in methods:
        rows.append(_method_row(cfg, rep, "MLE", mle, mle.params, data, truth,
                                spec, dists))
    if mle is not None and "PMLE" in methods:
        try:
            base = tune or TuneConfig()
            tune_cfg = TuneConfig(bounds=base.bounds, n_init=base.n_init,
                                  n_iter=base.n_iter,
                                  rng_seed=[cfg.rng_seed, rep, 1])
            result = tune_shrinkage(data, mle, tune_cfg, spec=spec,
                                    bounds=bounds, cd=cd)
            if result.best_fit is None:
                raise NumericalError("all shrinkage evaluations failed")
            rows.append(_method_row(cfg, rep, "PMLE", result.best_fit,
                                    result.best_fit.params, data, truth, spec,
                                    dists, lam=result.best_lambda))
        except SvcselError as err:
            rows.append(_failure_row(rep, "PMLE", err))
    if "Oracle" in methods:
        try:
            fit, params = _fit_oracle(cfg, data, truth, spec, bounds, None)
            rows.append(_method_row(cfg, rep, "Oracle", fit, params, data,
                                    truth, spec, dists))
        except SvcselError as err:
            rows.append(_failure_row(rep, "Oracle", err))
    return rows


def summarize(rows: list[dict], methods) -> dict:
    """Median RME and mean selection counts per method, failures tallied."""
    summary = {}
    for method in methods:
        ok = [r for r in rows if r["method"] == method and not r.get("error")]
        failed = [r for r in rows if r["method"] == method and r.get("error")]
        entry = {"n_ok": len(ok), "n_failed": len(failed)}
        if ok:
            entry["mrme"] = float(np.median([r["rme"] for r in ok]))
            for key in ("c_fixed", "ic_fixed", "c_random", "ic_random"):
                entry[f"mean_{key}"] = float(np.mean([r[key] for r in ok]))
            entry["median_cd_iterations"] = float(
                np.median([r["cd_iterations"] for r in ok]))
            entry["max_cd_iterations"] = int(
                np.max([r["cd_iterations"] for r in ok]))
        summary[method] = entry
    return summary


def run_study(cfg: SimConfig, methods=("MLE", "PMLE", "Oracle"),
              n_jobs: int = 1, tune: TuneConfig | None = None,
              cd: CdConfig | None = None, progress=None) -> tuple[list[dict], dict]:
    """Run the full replication study; returns (per-rep rows, summary)."""
    start = time.time()
    if n_jobs == 1:
        all_rows = []
        for rep in range(cfg.n_reps):
            all_rows.append(run_replicate(cfg, rep, methods, tune, cd))
            if progress:
                progress(rep + 1, cfg.n_reps)
    else:
        all_rows = Parallel(n_jobs=n_jobs)(
            delayed(run_replicate)(cfg, rep, methods, tune, cd)
            for rep in range(cfg.n_reps)
        )
    rows = [row for rep_rows in all_rows for row in rep_rows]
    summary = summarize(rows, methods)
    summary["runtime_seconds"] = time.time() - start
    summary["n_reps"] = cfg.n_reps
    return rows, summary
