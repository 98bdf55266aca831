"""AR(1)-X mean / GARCH(p,q)-X variance estimation by Gaussian
quasi-maximum likelihood.

The variance recursion is

    s2[t] = omega + sum_i alpha_i * eps2[t-i] + sum_j beta_j * s2[t-j]
            + delta' z[t-1]

with pre-sample eps2/s2 terms set to a caller-supplied ``init`` and a hard
positivity floor (exogenous terms carry unrestricted sign). The optimizer
works in an unconstrained space: ``omega = exp(.)``, total persistence
``logistic(.) in (0,1)`` split across the ARCH/GARCH coefficients by a
softmax allocation, and the AR(1) coefficient through ``tanh``. Every point
the search can propose therefore satisfies omega > 0, alpha_i > 0,
beta_j > 0, sum(alpha) + sum(beta) < 1 by construction.

Estimation runs on an internally rescaled return series (unit variance) so
the likelihood is well conditioned regardless of the raw return scale; all
reported quantities are mapped back to natural units exactly. Standard
errors come from the inverse negative numerical Hessian in the natural
parameterization, with a QMLE sandwich variant available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from numba import njit
from scipy import optimize

from .errors import (InsufficientData, InvariantViolation, NonPositiveInit,
                     NonPositiveVariance, BadCounts, UnknownColumn,
                     DegenerateRegressor, ZeroVariance)
from .series import Flag, HourlyPanel, HourlySeries
from .special import norm_p_two_sided

LN_2PI = math.log(2.0 * math.pi)
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class GarchSpec:
    """Declarative model description.

    Regressors are panel column names; both lists enter their equations
    lagged one hour. ``p`` counts ARCH (squared-residual) lags, ``q`` GARCH
    (variance) lags.
    """

    mean_regressors: tuple[str, ...] = ()
    variance_regressors: tuple[str, ...] = ()
    p: int = 1
    q: int = 1
    include_ar1: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mean_regressors", tuple(self.mean_regressors))
        object.__setattr__(self, "variance_regressors",
                           tuple(self.variance_regressors))
        if self.p < 1 or self.q < 1:
            raise ValueError("p and q must both be >= 1")
        if len(set(self.mean_regressors)) != len(self.mean_regressors):
            raise ValueError("duplicate mean regressor")
        if len(set(self.variance_regressors)) != len(self.variance_regressors):
            raise ValueError("duplicate variance regressor")

    def n_params(self) -> int:
        return (1 + int(self.include_ar1) + len(self.mean_regressors)
                + 1 + self.p + self.q + len(self.variance_regressors))

    def n_theta(self) -> int:
        return (1 + int(self.include_ar1) + len(self.mean_regressors)
                + 2 + self.p + self.q + len(self.variance_regressors))

    def param_names(self) -> tuple[str, ...]:
        names = ["mean.const"]
        if self.include_ar1:
            names.append("mean.ar1")
        names += [f"mean.{c}" for c in self.mean_regressors]
        names.append("var.omega")
        names += [f"var.arch[{i + 1}]" for i in range(self.p)]
        names += [f"var.garch[{j + 1}]" for j in range(self.q)]
        names += [f"var.{c}" for c in self.variance_regressors]
        return tuple(names)


@dataclass(frozen=True)
class ParamVector:
    """One point in the model's parameter space (natural scale)."""

    beta0: float = 0.0
    beta1: float = 0.0
    gamma: tuple[float, ...] = ()
    omega: float = 1.0
    alpha: tuple[float, ...] = (0.05,)
    beta: tuple[float, ...] = (0.80,)
    delta: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "delta", tuple(float(d) for d in self.delta))

    def validate(self, include_ar1: bool = True) -> None:
        """Raise InvariantViolation unless the positivity/stationarity
        restrictions hold."""
        vals = [self.beta0, self.beta1, self.omega, *self.gamma,
                *self.alpha, *self.beta, *self.delta]
        if not all(math.isfinite(v) for v in vals):
            raise InvariantViolation("non-finite parameter")
        if not self.omega > 0:
            raise InvariantViolation("omega must be positive")
        if not self.alpha or not self.beta:
            raise InvariantViolation("need at least one ARCH and one GARCH term")
        if any(a <= 0 for a in self.alpha) or any(b <= 0 for b in self.beta):
            raise InvariantViolation("ARCH/GARCH coefficients must be positive")
        if not sum(self.alpha) + sum(self.beta) < 1.0:
            raise InvariantViolation("sum(alpha) + sum(beta) must be < 1")
        if include_ar1 and not abs(self.beta1) < 1.0:
            raise InvariantViolation("|ar1 coefficient| must be < 1")

    def persistence(self) -> float:
        return sum(self.alpha) + sum(self.beta)


def flatten_params(params: ParamVector, spec: GarchSpec) -> np.ndarray:
    out = [params.beta0]
    if spec.include_ar1:
        out.append(params.beta1)
    out += list(params.gamma)
    out.append(params.omega)
    out += list(params.alpha) + list(params.beta) + list(params.delta)
    return np.asarray(out, dtype=np.float64)


def unflatten_params(vec: np.ndarray, spec: GarchSpec) -> ParamVector:
    m = len(spec.mean_regressors)
    v = len(spec.variance_regressors)
    i = 0
    beta0 = float(vec[i]); i += 1
    beta1 = 0.0
    if spec.include_ar1:
        beta1 = float(vec[i]); i += 1
    gamma = tuple(vec[i:i + m]); i += m
    omega = float(vec[i]); i += 1
    alpha = tuple(vec[i:i + spec.p]); i += spec.p
    beta = tuple(vec[i:i + spec.q]); i += spec.q
    delta = tuple(vec[i:i + v])
    return ParamVector(beta0, beta1, gamma, omega, alpha, beta, delta)


# --- unconstrained reparameterization ---------------------------------------

_EXP_CLIP = 700.0
_PERSISTENCE_MAX = 1.0 - 1e-9
_PERSISTENCE_MIN = 1e-12
_AR_MAX = 1.0 - 1e-12


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-min(x, _EXP_CLIP)))
    e = math.exp(max(x, -_EXP_CLIP))
    return e / (1.0 + e)


def from_unconstrained(theta: np.ndarray, spec: GarchSpec) -> ParamVector:
    """Map any finite theta to a ParamVector satisfying all restrictions."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.n_theta(),):
        raise ValueError(f"theta must have length {spec.n_theta()}")
    m = len(spec.mean_regressors)
    v = len(spec.variance_regressors)
    i = 0
    beta0 = float(theta[i]); i += 1
    beta1 = 0.0
    if spec.include_ar1:
        beta1 = float(np.clip(math.tanh(theta[i]), -_AR_MAX, _AR_MAX)); i += 1
    gamma = tuple(theta[i:i + m]); i += m
    omega = math.exp(float(np.clip(theta[i], -_EXP_CLIP, _EXP_CLIP))); i += 1
    s = float(np.clip(_logistic(float(theta[i])),
                      _PERSISTENCE_MIN, _PERSISTENCE_MAX)); i += 1
    logits = theta[i:i + spec.p + spec.q]
    i += spec.p + spec.q
    shifted = np.clip(logits - np.max(logits), -_EXP_CLIP, 0.0)
    w = np.exp(shifted)
    w /= w.sum()
    coeffs = s * w
    alpha = tuple(coeffs[:spec.p])
    beta = tuple(coeffs[spec.p:])
    delta = tuple(theta[i:i + v])
    return ParamVector(beta0, beta1, gamma, omega, alpha, beta, delta)


def to_unconstrained(params: ParamVector, spec: GarchSpec) -> np.ndarray:
    """Canonical inverse of from_unconstrained (share logits centered at 0)."""
    params.validate(spec.include_ar1)
    out = [params.beta0]
    if spec.include_ar1:
        out.append(math.atanh(params.beta1))
    out += list(params.gamma)
    out.append(math.log(params.omega))
    s = params.persistence()
    out.append(math.log(s / (1.0 - s)))
    logw = np.log(np.asarray(params.alpha + params.beta) / s)
    out += list(logw - logw.mean())
    out += list(params.delta)
    theta = np.asarray(out, dtype=np.float64)
    if len(theta) != spec.n_theta():
        raise InvariantViolation("parameter shape does not match the spec")
    return theta


# --- core recursions ---------------------------------------------------------

@njit(cache=True)
def _variance_core(eps2, exog_dot, omega, alpha, beta, init, floor, out):
    n = eps2.shape[0]
    p = alpha.shape[0]
    q = beta.shape[0]
    clamps = 0
    for t in range(n):
        acc = omega
        for i in range(p):
            k = t - 1 - i
            acc += alpha[i] * (eps2[k] if k >= 0 else init)
        for j in range(q):
            k = t - 1 - j
            acc += beta[j] * (out[k] if k >= 0 else init)
        acc += exog_dot[t]
        if acc < floor:
            acc = floor
            clamps += 1
        out[t] = acc
    return clamps


@njit(cache=True)
def _simulate_core(eta, exog_dot, mean_exog_dot, omega, alpha, beta,
                   beta0, beta1, init, floor, sigma2, eps, eps2, r):
    n = eta.shape[0]
    p = alpha.shape[0]
    q = beta.shape[0]
    clamps = 0
    for t in range(n):
        acc = omega
        for i in range(p):
            k = t - 1 - i
            acc += alpha[i] * (eps2[k] if k >= 0 else init)
        for j in range(q):
            k = t - 1 - j
            acc += beta[j] * (sigma2[k] if k >= 0 else init)
        acc += exog_dot[t]
        if acc < floor:
            acc = floor
            clamps += 1
        sigma2[t] = acc
        eps[t] = math.sqrt(acc) * eta[t]
        eps2[t] = eps[t] * eps[t]
        r_prev = r[t - 1] if t >= 1 else 0.0
        r[t] = beta0 + beta1 * r_prev + mean_exog_dot[t] + eps[t]
    return clamps


def variance_recursion(residuals: np.ndarray, params: ParamVector, init: float,
                       exog: np.ndarray | None = None,
                       floor: float = VARIANCE_FLOOR) -> tuple[np.ndarray, int]:
    """Run the conditional-variance recursion over a residual series.

    ``exog`` holds the already-lagged variance regressors, one row per
    residual. Returns (variances, clamp_events); every output is >= floor.
    """
    if not init > 0:
        raise NonPositiveInit(f"init must be positive, got {init}")
    eps = np.ascontiguousarray(residuals, dtype=np.float64)
    n = len(eps)
    if exog is None or len(params.delta) == 0:
        exog_dot = np.zeros(n)
    else:
        exog = np.ascontiguousarray(exog, dtype=np.float64)
        if exog.shape != (n, len(params.delta)):
            raise ValueError("exog shape does not match residuals/delta")
        exog_dot = exog @ np.asarray(params.delta)
    out = np.empty(n)
    clamps = _variance_core(np.square(eps), exog_dot, params.omega,
                            np.asarray(params.alpha), np.asarray(params.beta),
                            float(init), float(floor), out)
    return out, int(clamps)


def log_likelihood(residuals: np.ndarray, variances: np.ndarray) -> float:
    """Gaussian log likelihood sum_t [-(ln 2pi)/2 - (ln s2_t)/2 - e2_t/(2 s2_t)]."""
    eps = np.asarray(residuals, dtype=np.float64)
    s2 = np.asarray(variances, dtype=np.float64)
    if eps.shape != s2.shape:
        raise ValueError("residuals and variances must be aligned")
    if np.any(~(s2 > 0)):
        raise NonPositiveVariance("all variances must be strictly positive")
    return float(-0.5 * len(eps) * LN_2PI - 0.5 * np.sum(np.log(s2))
                 - 0.5 * np.sum(np.square(eps) / s2))


def information_criteria(log_lik: float, k: int, n: float) -> tuple[float, float]:
    """(aic, bic) = (2k - 2 logL, k ln(n) - 2 logL)."""
    if k < 1 or not n > k:
        raise BadCounts(f"need n > k >= 1, got k={k}, n={n}")
    return 2.0 * k - 2.0 * log_lik, k * math.log(n) - 2.0 * log_lik


# --- estimation --------------------------------------------------------------

@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-8                # successive log-likelihood tolerance
    grad_tol: float = 1e-4           # max-norm gradient tolerance
    min_obs: int = 500
    nm_max_iter_per_dim: int = 200
    max_polish_rounds: int = 6
    grad_step: float = 1e-6          # relative central-difference step
    hessian_step: float = 1e-4       # relative step for standard errors
    se_method: str = "hessian"       # hessian | sandwich | none
    variance_floor: float = VARIANCE_FLOOR
    param_hook: Callable[[ParamVector], None] | None = None

    def __post_init__(self):
        if self.se_method not in ("hessian", "sandwich", "none"):
            raise ValueError("se_method must be hessian, sandwich or none")


@dataclass(frozen=True)
class FitResult:
    spec: GarchSpec
    param_names: tuple[str, ...]
    params: ParamVector
    estimates: np.ndarray
    std_errors: np.ndarray
    z_stats: np.ndarray
    p_values: np.ndarray
    log_likelihood: float
    aic: float
    bic: float
    n_obs: int
    conditional_variance: HourlySeries
    residuals: HourlySeries
    converged: bool
    iterations: int
    clamp_events: int
    se_available: bool
    regressor_stats: dict[str, tuple[float, float]]
    estimates_raw: np.ndarray
    std_errors_raw: np.ndarray

    @property
    def k_params(self) -> int:
        return len(self.estimates)


class _Design:
    """Effective-sample arrays extracted from a panel for one spec."""

    def __init__(self, panel: HourlyPanel, spec: GarchSpec):
        if "r" not in panel.columns:
            raise UnknownColumn("panel has no return column 'r'")
        for name in set(spec.mean_regressors) | set(spec.variance_regressors):
            if name not in panel.columns:
                raise UnknownColumn(f"panel has no column {name!r}")
        mask = panel.estimation_mask
        ok = mask.copy()
        ok[0] = False
        ok[1:] &= mask[:-1]  # lagged terms need the previous hour too
        self.idx = np.flatnonzero(ok)
        r = panel["r"].values
        self.r = r[self.idx]
        self.r_lag = r[self.idx - 1]
        self.x_mean = np.column_stack(
            [panel[c].values[self.idx - 1] for c in spec.mean_regressors]
        ) if spec.mean_regressors else np.empty((len(self.idx), 0))
        self.z_var = np.column_stack(
            [panel[c].values[self.idx - 1] for c in spec.variance_regressors]
        ) if spec.variance_regressors else np.empty((len(self.idx), 0))
        self.panel = panel
        self.spec = spec

    @property
    def n(self) -> int:
        return len(self.idx)


def mean_residuals(panel: HourlyPanel, spec: GarchSpec,
                   params: ParamVector) -> np.ndarray:
    """Residuals of the AR(1)-X mean equation over the estimation sample.

    Uses raw (unstandardized) regressor values; the caller controls scaling.
    """
    design = _Design(panel, spec)
    if design.n < 100:
        raise InsufficientData(f"only {design.n} usable points")
    return _residuals_from(design, params, design.r, design.r_lag, design.x_mean)


def _residuals_from(design: _Design, params: ParamVector,
                    r: np.ndarray, r_lag: np.ndarray,
                    x_mean: np.ndarray) -> np.ndarray:
    eps = r - params.beta0
    if design.spec.include_ar1:
        eps = eps - params.beta1 * r_lag
    if x_mean.shape[1]:
        eps = eps - x_mean @ np.asarray(params.gamma)
    return eps


class FitProblem:
    """The optimizable objective for one (panel, spec) pair.

    Works on the variance-rescaled return series and standardized regressors;
    exposes the negative log likelihood over unconstrained theta and its
    central finite-difference gradient (the same gradient the quasi-Newton
    polish consumes).
    """

    def __init__(self, panel: HourlyPanel, spec: GarchSpec,
                 options: FitOptions | None = None):
        self.options = options or FitOptions()
        self.spec = spec
        self.design = _Design(panel, spec)
        if self.design.n < self.options.min_obs:
            raise InsufficientData(
                f"effective sample {self.design.n} below minimum "
                f"{self.options.min_obs}")
        r_sd = float(np.std(self.design.r))
        if not r_sd > 0:
            raise ZeroVariance("returns have zero variance")
        self.scale = 1.0 / r_sd
        self.r = self.design.r * self.scale
        self.r_lag = self.design.r_lag * self.scale
        self.x_mean, self.mean_stats = _standardize(
            self.design.x_mean, spec.mean_regressors)
        self.z_var, self.var_stats = _standardize(
            self.design.z_var, spec.variance_regressors)
        self.n_evals = 0

    def start_theta(self) -> np.ndarray:
        start = ParamVector(
            beta0=0.0, beta1=0.0,
            gamma=(0.0,) * len(self.spec.mean_regressors),
            omega=0.1 * float(np.var(self.r)),
            alpha=(0.05,) * self.spec.p,
            beta=(0.80 / self.spec.q,) * self.spec.q,
            delta=(0.0,) * len(self.spec.variance_regressors))
        return to_unconstrained(start, self.spec)

    def _filter(self, params: ParamVector):
        eps = _residuals_from(self.design, params, self.r, self.r_lag,
                              self.x_mean)
        init = max(float(np.var(eps)), 1e-300)
        s2, clamps = variance_recursion(
            eps, params, init, self.z_var if self.z_var.shape[1] else None,
            self.options.variance_floor)
        return eps, s2, clamps

    def nll_params(self, params: ParamVector) -> float:
        eps, s2, _ = self._filter(params)
        n = len(eps)
        ll = (-0.5 * n * LN_2PI - 0.5 * np.sum(np.log(s2))
              - 0.5 * np.sum(np.square(eps) / s2))
        return float(-ll) if math.isfinite(ll) else 1e300

    def objective(self, theta: np.ndarray) -> float:
        params = from_unconstrained(theta, self.spec)
        if self.options.param_hook is not None:
            self.options.param_hook(params)
        self.n_evals += 1
        return self.nll_params(params)

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        """Central finite-difference gradient of the objective."""
        theta = np.asarray(theta, dtype=np.float64)
        g = np.empty_like(theta)
        for i in range(len(theta)):
            h = self.options.grad_step * (1.0 + abs(theta[i]))
            up = theta.copy()
            up[i] += h
            dn = theta.copy()
            dn[i] -= h
            g[i] = (self.objective(up) - self.objective(dn)) / (2.0 * h)
        return g


def _standardize(x: np.ndarray, names: tuple[str, ...]):
    stats: dict[str, tuple[float, float]] = {}
    if not x.shape[1]:
        return x, stats
    out = np.empty_like(x)
    for j, name in enumerate(names):
        mu = float(np.mean(x[:, j]))
        sd = float(np.std(x[:, j]))
        if not sd > 0:
            raise DegenerateRegressor(f"regressor {name!r} is constant "
                                      "over the estimation sample")
        out[:, j] = (x[:, j] - mu) / sd
        stats[name] = (mu, sd)
    return out, stats


def fit(panel: HourlyPanel, spec: GarchSpec,
        options: FitOptions | None = None) -> FitResult:
    """Simultaneous QML estimation of the mean and variance equations.

    Simplex warm start, then quasi-Newton polish with central-difference
    gradients. ``converged`` requires both a log-likelihood change below
    ``tol`` between polish rounds and a gradient max-norm below ``grad_tol``;
    on failure the best point found is still returned with converged=False.
    """
    options = options or FitOptions()
    problem = FitProblem(panel, spec, options)
    theta = problem.start_theta()
    best = problem.objective(theta)

    nm = optimize.minimize(
        problem.objective, theta, method="Nelder-Mead",
        options={"maxiter": options.nm_max_iter_per_dim * len(theta),
                 "fatol": options.tol, "xatol": 1e-8, "adaptive": True})
    if nm.fun <= best:
        theta, best = nm.x, float(nm.fun)

    converged = False
    for _ in range(options.max_polish_rounds):
        qn = optimize.minimize(
            problem.objective, theta, jac=problem.gradient, method="BFGS",
            options={"gtol": options.grad_tol * 1e-2, "maxiter": 200})
        improvement = 0.0
        if qn.fun <= best:
            improvement = best - float(qn.fun)
            theta, best = qn.x, float(qn.fun)
        gmax = float(np.max(np.abs(problem.gradient(theta))))
        if improvement < options.tol and gmax < options.grad_tol:
            converged = True
            break

    params_scaled = from_unconstrained(theta, problem.spec)
    return _assemble_result(problem, params_scaled, converged,
                            problem.n_evals, options)


def _assemble_result(problem: FitProblem, params_scaled: ParamVector,
                     converged: bool, iterations: int,
                     options: FitOptions) -> FitResult:
    spec = problem.spec
    c = problem.scale
    # exact de-scaling of the return units; standardized regressors stay as-is
    params = replace(
        params_scaled,
        beta0=params_scaled.beta0 / c,
        gamma=tuple(g / c for g in params_scaled.gamma),
        omega=params_scaled.omega / (c * c),
        delta=tuple(d / (c * c) for d in params_scaled.delta))

    design = problem.design
    eps = _residuals_from(design, params, design.r, design.r_lag,
                          problem.x_mean)
    init = max(float(np.var(eps)), 1e-300)
    exog = problem.z_var if problem.z_var.shape[1] else None
    s2, clamps = variance_recursion(eps, params, init, exog,
                                    options.variance_floor)
    ll = log_likelihood(eps, s2)
    k = spec.n_params()
    aic, bic = information_criteria(ll, k, design.n)

    estimates = flatten_params(params, spec)
    se = np.full(k, np.nan)
    se_available = False
    if options.se_method != "none":
        cov = _param_covariance(problem, params, options)
        if cov is not None:
            se = np.sqrt(np.diag(cov))
            se_available = True
    with np.errstate(invalid="ignore", divide="ignore"):
        z = estimates / se
    p = np.array([norm_p_two_sided(v) if math.isfinite(v) else math.nan
                  for v in z])

    est_raw, se_raw = _raw_scale(estimates, se, spec, problem)

    panel = design.panel
    grid_eps = np.full(panel.length, np.nan)
    grid_s2 = np.full(panel.length, np.nan)
    flags = np.full(panel.length, int(Flag.MISSING), dtype=np.uint8)
    grid_eps[design.idx] = eps
    grid_s2[design.idx] = s2
    flags[design.idx] = Flag.OBSERVED
    residual_series = HourlySeries("residuals", panel.start_hour, grid_eps, flags)
    variance_series = HourlySeries("cond_variance", panel.start_hour,
                                   grid_s2, flags)

    return FitResult(
        spec=spec, param_names=spec.param_names(), params=params,
        estimates=estimates, std_errors=se, z_stats=z, p_values=p,
        log_likelihood=ll, aic=aic, bic=bic, n_obs=design.n,
        conditional_variance=variance_series, residuals=residual_series,
        converged=converged, iterations=iterations, clamp_events=clamps,
        se_available=se_available,
        regressor_stats={
            **{f"mean.{name}": v for name, v in problem.mean_stats.items()},
            **{f"var.{name}": v for name, v in problem.var_stats.items()}},
        estimates_raw=est_raw, std_errors_raw=se_raw)


def _nll_natural(problem: FitProblem, vec: np.ndarray) -> float:
    """Negative log likelihood as a function of the natural parameter vector
    (de-scaled returns, standardized regressors)."""
    params = unflatten_params(vec, problem.spec)
    design = problem.design
    eps = _residuals_from(design, params, design.r, design.r_lag,
                          problem.x_mean)
    init = max(float(np.var(eps)), 1e-300)
    exog = problem.z_var if problem.z_var.shape[1] else None
    try:
        s2, _ = variance_recursion(eps, params, init, exog,
                                   problem.options.variance_floor)
    except NonPositiveInit:
        return 1e300
    n = len(eps)
    ll = (-0.5 * n * LN_2PI - 0.5 * np.sum(np.log(s2))
          - 0.5 * np.sum(np.square(eps) / s2))
    return float(-ll) if math.isfinite(ll) else 1e300


def _per_obs_loglik(problem: FitProblem, vec: np.ndarray) -> np.ndarray:
    params = unflatten_params(vec, problem.spec)
    design = problem.design
    eps = _residuals_from(design, params, design.r, design.r_lag,
                          problem.x_mean)
    init = max(float(np.var(eps)), 1e-300)
    exog = problem.z_var if problem.z_var.shape[1] else None
    s2, _ = variance_recursion(eps, params, init, exog,
                               problem.options.variance_floor)
    return -0.5 * LN_2PI - 0.5 * np.log(s2) - 0.5 * np.square(eps) / s2


def _param_covariance(problem: FitProblem, params: ParamVector,
                      options: FitOptions) -> np.ndarray | None:
    """Inverse negative numerical Hessian (optionally sandwiched) at the
    optimum, in natural parameter space."""
    vec = flatten_params(params, problem.spec)
    k = len(vec)
    steps = options.hessian_step * (1.0 + np.abs(vec))
    hess = np.empty((k, k))
    f = lambda v: _nll_natural(problem, v)
    for i in range(k):
        for j in range(i, k):
            vpp = vec.copy(); vpp[i] += steps[i]; vpp[j] += steps[j]
            vpm = vec.copy(); vpm[i] += steps[i]; vpm[j] -= steps[j]
            vmp = vec.copy(); vmp[i] -= steps[i]; vmp[j] += steps[j]
            vmm = vec.copy(); vmm[i] -= steps[i]; vmm[j] -= steps[j]
            hij = (f(vpp) - f(vpm) - f(vmp) + f(vmm)) / (4.0 * steps[i] * steps[j])
            hess[i, j] = hij
            hess[j, i] = hij
    if not np.all(np.isfinite(hess)):
        return None
    try:
        cov = np.linalg.inv(hess)  # hess is the Hessian of the NEGATIVE loglik
    except np.linalg.LinAlgError:
        return None
    if np.any(~np.isfinite(np.diag(cov))) or np.any(np.diag(cov) <= 0):
        return None
    if options.se_method == "sandwich":
        scores = np.empty((problem.design.n, k))
        for i in range(k):
            h = options.grad_step * (1.0 + abs(vec[i]))
            up = vec.copy(); up[i] += h
            dn = vec.copy(); dn[i] -= h
            scores[:, i] = (_per_obs_loglik(problem, up)
                            - _per_obs_loglik(problem, dn)) / (2.0 * h)
        cov = cov @ (scores.T @ scores) @ cov
        if np.any(~np.isfinite(np.diag(cov))) or np.any(np.diag(cov) <= 0):
            return None
    return cov


def _raw_scale(estimates: np.ndarray, se: np.ndarray, spec: GarchSpec,
               problem: FitProblem) -> tuple[np.ndarray, np.ndarray]:
    """De-standardize slope coefficients back to raw regressor units."""
    est = estimates.copy()
    ses = se.copy()
    base = 1 + int(spec.include_ar1)
    for j, name in enumerate(spec.mean_regressors):
        sd = problem.mean_stats[name][1]
        est[base + j] /= sd
        ses[base + j] /= sd
    vbase = base + len(spec.mean_regressors) + 1 + spec.p + spec.q
    for j, name in enumerate(spec.variance_regressors):
        sd = problem.var_stats[name][1]
        est[vbase + j] /= sd
        ses[vbase + j] /= sd
    return est, ses
