"""Pre-estimation specification tests.

Implements the intercept-only augmented Dickey-Fuller unit-root test (with
embedded asymptotic critical values and optional AIC lag selection), Engle's
n*R^2 Lagrange-multiplier test for ARCH effects, and sample moment summaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularRegression, TooShort, ZeroVariance
from .special import chi2_sf

# Asymptotic critical values for the ADF t-statistic, intercept-only case
# (MacKinnon-style large-sample constants).
ADF_CRITICAL_VALUES = {0.01: -3.43, 0.05: -2.86, 0.10: -2.57}


@dataclass(frozen=True)
class TestReport:
    test_name: str
    statistic: float
    lags: int
    verdict: str  # "reject" | "fail_to_reject"
    alpha: float
    p_value: float | None = None
    critical_values: dict[float, float] | None = None

    @property
    def p_value_or_band(self):
        return self.p_value if self.p_value is not None else self.critical_values

    def summary(self) -> str:
        if self.p_value is not None:
            tail = f"p={self.p_value:.6g}"
        else:
            tail = "critical values " + ", ".join(
                f"{int(a * 100)}%: {cv:.2f}"
                for a, cv in sorted(self.critical_values.items()))
        return (f"{self.test_name}: stat={self.statistic:.6g} lags={self.lags} "
                f"{tail} -> {self.verdict} at {self.alpha:.0%}")


@dataclass(frozen=True)
class MomentSummary:
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    n: int


def _ols(y: np.ndarray, x: np.ndarray):
    """Least squares with coefficient standard errors; raises on rank loss."""
    n, k = x.shape
    if n <= k:
        raise TooShort(f"{n} observations for {k} regressors")
    coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < k:
        raise SingularRegression("regressor matrix is rank deficient")
    resid = y - x @ coef
    ssr = float(resid @ resid)
    dof = n - k
    sigma2 = ssr / dof
    try:
        xtx_inv = np.linalg.inv(x.T @ x)
    except np.linalg.LinAlgError:
        raise SingularRegression("normal equations are singular") from None
    se = np.sqrt(np.maximum(sigma2 * np.diag(xtx_inv), 0.0))
    if np.any(se == 0):
        raise SingularRegression("zero coefficient standard error")
    return coef, se, resid, ssr


def adf_max_lag(n: int) -> int:
    """Schwert-style upper bound 12 * (n/100)^(1/4) for automatic selection."""
    return int(math.floor(12.0 * (n / 100.0) ** 0.25))


def adf_test(series, lags: int = 0, alpha: float = 0.05) -> TestReport:
    """Augmented Dickey-Fuller test (intercept only).

    Regresses dy_t on a constant, y_{t-1} and ``lags`` lagged differences;
    the statistic is the t-ratio on y_{t-1} compared against embedded
    asymptotic critical values. A negative ``lags`` selects the order by AIC
    over 0..adf_max_lag(n), all candidates fitted on a common sample.
    """
    y = np.asarray(series, dtype=np.float64)
    if np.any(~np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    if alpha not in ADF_CRITICAL_VALUES:
        raise ValueError(f"alpha must be one of {sorted(ADF_CRITICAL_VALUES)}")
    n = len(y)
    if lags < 0:
        lags = _adf_select_lags(y)
    if n <= lags + 10:
        raise TooShort(f"need more than lags + 10 = {lags + 10} observations")
    stat = _adf_stat(y, lags, start=lags)
    cv = ADF_CRITICAL_VALUES[alpha]
    verdict = "reject" if stat < cv else "fail_to_reject"
    return TestReport("adf", stat, lags, verdict, alpha,
                      critical_values=dict(ADF_CRITICAL_VALUES))


def _adf_design(y: np.ndarray, lags: int, start: int):
    dy = np.diff(y)
    t0 = start  # index into dy; all candidate regressions share it
    resp = dy[t0:]
    cols = [np.ones(len(resp)), y[t0:-1]]
    for i in range(1, lags + 1):
        cols.append(dy[t0 - i:len(dy) - i])
    return resp, np.column_stack(cols)


def _adf_stat(y: np.ndarray, lags: int, start: int) -> float:
    resp, x = _adf_design(y, lags, start)
    coef, se, _, _ = _ols(resp, x)
    return float(coef[1] / se[1])


def _adf_select_lags(y: np.ndarray) -> int:
    n = len(y)
    kmax = adf_max_lag(n)
    kmax = min(kmax, max(0, n - 12))
    best_k, best_aic = 0, math.inf
    for k in range(kmax + 1):
        resp, x = _adf_design(y, k, start=kmax)
        try:
            _, _, _, ssr = _ols(resp, x)
        except SingularRegression:
            continue
        m = len(resp)
        aic = m * math.log(max(ssr / m, 1e-300)) + 2.0 * (k + 2)
        if aic < best_aic:
            best_k, best_aic = k, aic
    return best_k


def arch_lm_test(residuals, q: int = 5, alpha: float = 0.05) -> TestReport:
    """Engle's LM test: regress squared residuals on q of their own lags.

    The statistic n*R^2 is chi-square with q degrees of freedom under the
    no-ARCH null; scale-free in the residuals.
    """
    e = np.asarray(residuals, dtype=np.float64)
    if np.any(~np.isfinite(e)):
        raise ValueError("residuals contain non-finite values")
    if q < 1:
        raise ValueError("lag order must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    n = len(e)
    if n <= q + 10:
        raise TooShort(f"need more than q + 10 = {q + 10} observations")
    e2 = e * e
    resp = e2[q:]
    cols = [np.ones(len(resp))]
    for i in range(1, q + 1):
        cols.append(e2[q - i:n - i])
    x = np.column_stack(cols)
    _, _, resid, ssr = _ols(resp, x)
    tss = float(np.sum((resp - resp.mean()) ** 2))
    if tss <= 0:
        raise SingularRegression("squared residuals have zero variance")
    r2 = 1.0 - ssr / tss
    stat = len(resp) * max(r2, 0.0)
    p = chi2_sf(stat, q)
    verdict = "reject" if p < alpha else "fail_to_reject"
    return TestReport("arch_lm", float(stat), q, verdict, alpha, p_value=p)


def moments(series) -> MomentSummary:
    """Sample mean/variance/skewness/excess kurtosis from central moments."""
    y = np.asarray(series, dtype=np.float64)
    if np.any(~np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    n = len(y)
    if n < 4:
        raise TooShort("need at least 4 observations for kurtosis")
    mean = float(np.mean(y))
    d = y - mean
    m2 = float(np.mean(d ** 2))
    if m2 <= 0:
        raise ZeroVariance("skewness and kurtosis are undefined")
    m3 = float(np.mean(d ** 3))
    m4 = float(np.mean(d ** 4))
    return MomentSummary(mean=mean, variance=m2,
                         skewness=m3 / m2 ** 1.5,
                         excess_kurtosis=m4 / m2 ** 2 - 3.0, n=n)
