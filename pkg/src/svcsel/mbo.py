"""Shrinkage-parameter tuning by model-based optimization of a BIC objective.

The tuner evaluates the BIC of penalized fits at an initial Latin-hypercube
design over the shrinkage-parameter box, then repeatedly fits a kriging
surrogate (constant trend, Matern-3/2 correlation, small estimated nugget)
and evaluates the expected-improvement maximizer.  The shrinkage space is
modeled on the log10 scale throughout; BIC values are used raw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from scipy.spatial.distance import cdist
from scipy.stats import norm

from .exceptions import SvcselError
from .kernels import KernelSpec, cholesky_lower, correlation
from .model import Dataset, FitResult
from .optim import BoxBounds, minimize_box
from .pmle import CdConfig, bic_value, count_nonzero, fit_pmle

bic = bic_value


@dataclass
class TuneConfig:
    """Search box and evaluation budget for the shrinkage tuner."""

    bounds: tuple = ((1e-6, 1.0), (1e-6, 1.0))
    n_init: int = 10
    n_iter: int = 10
    rng_seed: object = 0

    def __post_init__(self):
        self.bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        for lo, hi in self.bounds:
            if not (0 < lo < hi):
                raise ValueError("shrinkage bounds must be strictly positive and ordered")
        if self.n_init < 2:
            raise ValueError("need at least two initial evaluations")
        if self.n_iter < 0:
            raise ValueError("n_iter must be nonnegative")


def latin_hypercube(n: int, bounds, rng) -> np.ndarray:
    """Latin hypercube sample of size n over the box, stratified on log10 scale.

    Each dimension is split into n equal-probability strata in log space and
    every stratum receives exactly one point.
    """
    if n < 1:
        raise ValueError("sample size must be at least 1")
    bounds = tuple(bounds)
    d = len(bounds)
    u = np.empty((n, d))
    for j in range(d):
        u[:, j] = (rng.permutation(n) + rng.uniform(size=n)) / n
    lo = np.log10([b[0] for b in bounds])
    hi = np.log10([b[1] for b in bounds])
    return 10.0 ** (lo + u * (hi - lo))


@dataclass
class Surrogate:
    """Kriging model over log10 shrinkage space.

    Constant trend, Matern-3/2 correlation, and a small nugget for
    conditioning; hyperparameters fitted by profile maximum likelihood.
    A design with (numerically) constant values collapses to a degenerate
    surrogate with zero process variance.
    """

    designs: np.ndarray          # raw shrinkage pairs, shape (N, d)
    values: np.ndarray           # observed objective values, shape (N,)
    rho: float
    nugget: float                # relative nugget g; absolute is sigma2 * g
    sigma2: float
    beta0: float
    degenerate: bool = False
    _z: np.ndarray = field(default=None, repr=False)
    _chol: np.ndarray = field(default=None, repr=False)
    _resid_weights: np.ndarray = field(default=None, repr=False)
    _ones_weights: np.ndarray = field(default=None, repr=False)

    def predict(self, lam):
        """Predictive mean and variance at raw shrinkage pair(s) ``lam``."""
        lam = np.atleast_2d(np.asarray(lam, dtype=float))
        if self.degenerate:
            m = np.full(lam.shape[0], self.beta0)
            s2 = np.zeros(lam.shape[0])
        else:
            z = np.log10(lam)
            k = correlation(cdist(z, self._z) / self.rho, KernelSpec("matern32"))
            m = self.beta0 + k @ self._resid_weights
            kc = cho_solve((self._chol, True), k.T)
            ones = np.ones(self._z.shape[0])
            denom = float(ones @ self._ones_weights)
            trend = (1.0 - k @ self._ones_weights) ** 2 / denom
            s2 = self.sigma2 * np.maximum(1.0 - np.einsum("ij,ji->i", k, kc) + trend, 0.0)
        if m.size == 1:
            return float(m[0]), float(s2[0])
        return m, s2


def _profile_nll(z, values, rho, nugget):
    # Profile likelihood of a constant-trend kriging model; beta0 and the
    # process variance are concentrated out.
    n = values.size
    corr = correlation(cdist(z, z) / rho, KernelSpec("matern32"))
    corr[np.diag_indices(n)] += nugget
    try:
        L = cholesky_lower(corr)
    except SvcselError:
        return np.inf, None
    ones = np.ones(n)
    ci_ones = cho_solve((L, True), ones)
    beta0 = float(ones @ cho_solve((L, True), values)) / float(ones @ ci_ones)
    resid = values - beta0
    ci_resid = cho_solve((L, True), resid)
    sigma2 = float(resid @ ci_resid) / n
    if sigma2 <= 0:
        return np.inf, None
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    nll = 0.5 * (n * np.log(sigma2) + logdet)
    return nll, (beta0, sigma2, L, ci_resid, ci_ones)


def fit_surrogate(designs, values) -> Surrogate:
    """Fit the kriging surrogate to (shrinkage pair, value) tuples."""
    designs = np.atleast_2d(np.asarray(designs, dtype=float))
    values = np.asarray(values, dtype=float).reshape(-1)
    if designs.shape[0] != values.size:
        raise ValueError("designs and values must have matching lengths")
    if np.unique(designs, axis=0).shape[0] < 2:
        raise ValueError("need at least two distinct design points")
    z = np.log10(designs)

    spread = float(np.ptp(values))
    if spread <= 1e-12 * max(1.0, float(np.max(np.abs(values)))):
        return Surrogate(designs=designs, values=values, rho=1.0, nugget=0.0,
                         sigma2=0.0, beta0=float(np.mean(values)),
                         degenerate=True)

    pd = cdist(z, z)
    dmax = float(np.max(pd))
    pos = pd[pd > 0]
    dmin = float(np.min(pos)) if pos.size else dmax
    rho_grid = np.geomspace(max(dmin / 2.0, 1e-3 * dmax, 1e-8), 4.0 * dmax, 8)
    nug_grid = np.array([1e-8, 1e-6, 1e-4, 1e-2])
    best = None
    for r in rho_grid:
        for g in nug_grid:
            nll, _ = _profile_nll(z, values, r, g)
            if best is None or nll < best[0]:
                best = (nll, r, g)
    _, r0, g0 = best

    # nugget capped small: the objective is deterministic and the nugget is
    # only there to condition nearly coincident designs
    lo = np.log10([max(dmin / 4.0, 1e-3 * dmax, 1e-8), 1e-8])
    hi = np.log10([8.0 * dmax, 1e-2])
    box = BoxBounds(lower=lo, upper=hi)
    x0 = np.clip(np.log10([r0, g0]), lo, hi)

    def obj(x):
        return _profile_nll(z, values, 10.0 ** x[0], 10.0 ** x[1])[0]

    try:
        report = minimize_box(obj, None, x0, box, max_iter=100)
        rho_hat, nug_hat = 10.0 ** report.x_star
    except SvcselError:
        rho_hat, nug_hat = r0, g0
    nll, parts = _profile_nll(z, values, rho_hat, nug_hat)
    if parts is None:
        rho_hat, nug_hat = r0, g0
        _, parts = _profile_nll(z, values, rho_hat, nug_hat)
    beta0, sigma2, L, ci_resid, ci_ones = parts
    return Surrogate(designs=designs, values=values, rho=float(rho_hat),
                     nugget=float(nug_hat), sigma2=float(sigma2),
                     beta0=float(beta0), _z=z, _chol=L,
                     _resid_weights=ci_resid, _ones_weights=ci_ones)


def expected_improvement(surrogate: Surrogate, lam, xi_min: float):
    """Closed-form expected improvement of the surrogate below ``xi_min``."""
    m, s2 = surrogate.predict(lam)
    m = np.atleast_1d(m)
    s = np.sqrt(np.maximum(np.atleast_1d(s2), 0.0))
    impr = xi_min - m
    out = np.maximum(impr, 0.0)
    pos = s > 0
    if np.any(pos):
        zz = impr[pos] / s[pos]
        out[pos] = impr[pos] * norm.cdf(zz) + s[pos] * norm.pdf(zz)
    out = np.maximum(out, 0.0)
    return float(out[0]) if out.size == 1 else out


def _maximize_ei(surrogate, bounds, xi_min, rng, n_restarts=64):
    # Multi-start search: LHS candidates then a shrinking pattern refinement
    # on the best one, all in log10 space.
    cand = latin_hypercube(n_restarts, bounds, rng)
    ei = np.atleast_1d(expected_improvement(surrogate, cand, xi_min))
    z = np.log10(cand[int(np.argmax(ei))])
    best_ei = float(np.max(ei))
    lo = np.log10([b[0] for b in bounds])
    hi = np.log10([b[1] for b in bounds])
    step = (hi - lo) / 8.0
    for _ in range(60):
        improved = False
        for j in range(z.size):
            for sgn in (1.0, -1.0):
                trial = z.copy()
                trial[j] = np.clip(trial[j] + sgn * step[j], lo[j], hi[j])
                val = expected_improvement(surrogate, 10.0 ** trial, xi_min)
                if val > best_ei:
                    best_ei, z = val, trial
                    improved = True
        if not improved:
            step *= 0.5
            if np.max(step) < 1e-3:
                break
    return 10.0 ** z


@dataclass
class TuneEval:
    """One tuner evaluation: design point, objective value, and the fit."""

    index: int
    lam: tuple
    bic: float
    stage: str                     # "init" or "infill"
    fit: FitResult | None = None


@dataclass
class TuneResult:
    best_lambda: tuple
    best_index: int
    best_fit: FitResult | None
    trace: list[TuneEval]

    @property
    def best_bic(self) -> float:
        return self.trace[self.best_index].bic


def tune_shrinkage(data: Dataset, mle: FitResult, cfg: TuneConfig | None = None,
                   spec: KernelSpec = KernelSpec(), A=None, bounds=None,
                   cd: CdConfig | None = None, jitter: float = 0.0) -> TuneResult:
    """Pick the BIC-minimizing shrinkage pair by expected-improvement search.

    The MLE is computed once by the caller; its adaptive weights and
    covariance parameters warm-start every penalized fit.  Failed fits are
    recorded with an infinite BIC and the search continues.  Returns the
    argmin over all evaluated points (ties broken by evaluation order)
    together with the full evaluation trace.
    """
    cfg = cfg or TuneConfig()
    rng = np.random.default_rng(cfg.rng_seed)

    def evaluate(lam, index, stage):
        try:
            fit = fit_pmle(data, lam, mle, spec=spec, A=A, bounds=bounds,
                           cd=cd, jitter=jitter)
            nz_mu, nz_var = count_nonzero(fit.params)
            val = bic_value(fit.loglik, nz_mu, nz_var, data.n)
        except SvcselError:
            fit, val = None, np.inf
        return TuneEval(index=index, lam=(float(lam[0]), float(lam[1])),
                        bic=float(val), stage=stage, fit=fit)

    trace: list[TuneEval] = []
    for i, lam in enumerate(latin_hypercube(cfg.n_init, cfg.bounds, rng)):
        trace.append(evaluate(lam, i, "init"))

    for i in range(cfg.n_iter):
        finite = [t for t in trace if np.isfinite(t.bic)]
        lam_next = None
        if len(finite) >= 2:
            designs = np.array([t.lam for t in finite])
            values = np.array([t.bic for t in finite])
            if np.unique(designs, axis=0).shape[0] >= 2:
                try:
                    surr = fit_surrogate(designs, values)
                    xi_min = float(np.min(values))
                    lam_next = _maximize_ei(surr, cfg.bounds, xi_min, rng)
                except (SvcselError, ValueError):
                    lam_next = None
        if lam_next is None:
            lam_next = latin_hypercube(1, cfg.bounds, rng)[0]
        trace.append(evaluate(lam_next, cfg.n_init + i, "infill"))

    bics = np.array([t.bic for t in trace])
    best_index = int(np.argmin(bics))  # argmin takes the earliest on ties
    best = trace[best_index]
    return TuneResult(best_lambda=best.lam, best_index=best_index,
                      best_fit=best.fit, trace=trace)
