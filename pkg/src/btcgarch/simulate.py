"""Data-generating processes and Monte Carlo harnesses.

Everything here is seed-deterministic: uniforms come from a PCG64 stream and
normal variates from the inverse-cdf transform (Acklam rational approximation
with a Halley refinement), so identical configs reproduce identical artifacts
across runs. The generator name and seed are recorded in every fixture
manifest.

Draw order inside one stream: first the regressor innovation blocks in listed
order, then the return innovations.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import AllReplicationsFailed
from .garch import (VARIANCE_FLOOR, FitOptions, GarchSpec, ParamVector,
                    _simulate_core, fit, flatten_params)
from .ingest import (DailyRecord, HalvingSchedule, PanelRecipe, _advance,
                     total_stock_hourly, velocity)
from .series import HOUR, HourlyPanel, HourlySeries, full_series, safe_log
from .special import norm_ppf_array

RNG_ALGORITHM = ("pcg64 uniform stream -> inverse-cdf standard normals "
                 "(Acklam rational approximation, one Halley refinement)")

DAY = 86400


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def standard_normals(rng: np.random.Generator, n: int) -> np.ndarray:
    """N(0,1) draws via the inverse cdf of a PCG64 uniform stream."""
    u = rng.random(n)
    u = np.maximum(u, 2.0 ** -53)  # open the interval at zero
    return norm_ppf_array(u)


def ar1_path(innovations: np.ndarray, persistence: float,
             scale: float) -> np.ndarray:
    """Stationary-scale AR(1): x_t = rho x_{t-1} + scale sqrt(1-rho^2) e_t."""
    if not -1.0 < persistence < 1.0:
        raise ValueError("persistence must lie in (-1, 1)")
    sd_inn = scale * math.sqrt(1.0 - persistence ** 2)
    return lfilter([1.0], [1.0, -persistence], sd_inn * innovations)


@dataclass(frozen=True)
class RegressorSpec:
    name: str
    persistence: float = 0.97
    scale: float = 1.0


@dataclass(frozen=True)
class SimConfig:
    """Ground truth for one simulated GARCH(p,q)-X return series."""

    n: int
    true_params: ParamVector
    seed: int
    regressors: tuple[RegressorSpec, ...] = ()
    burn_in: int = 500

    def __post_init__(self):
        object.__setattr__(self, "regressors", tuple(self.regressors))
        if self.n <= 0:
            raise ValueError("n must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        p = self.true_params
        p.validate(include_ar1=(p.beta1 != 0.0))
        r = len(self.regressors)
        if len(p.gamma) not in (0, r) or len(p.delta) not in (0, r):
            raise ValueError("gamma/delta lengths must be 0 or match the "
                             "regressor count")


@dataclass(frozen=True)
class SimResult:
    returns: np.ndarray
    residuals: np.ndarray
    sigma2: np.ndarray
    regressors: dict[str, np.ndarray]
    lagged_exog: np.ndarray | None
    init: float
    clamp_events: int
    seed: int
    algorithm: str = RNG_ALGORITHM


def simulate_garch(config: SimConfig) -> SimResult:
    """Evolve the variance recursion and AR(1)-X mean forward from a seed.

    The returned sigma2 path is produced by the same compiled step as the
    estimation-side recursion, so re-running the recursion on the returned
    residuals (burn_in=0) reproduces it bit for bit.
    """
    p = config.true_params
    total = config.n + config.burn_in
    rng = make_rng(config.seed)

    paths = {}
    for reg in config.regressors:
        paths[reg.name] = ar1_path(standard_normals(rng, total),
                                   reg.persistence, reg.scale)
    eta = standard_normals(rng, total)

    x = (np.column_stack([paths[r.name] for r in config.regressors])
         if config.regressors else np.empty((total, 0)))
    x_lag = np.vstack([x[:1], x[:-1]]) if x.shape[1] else x
    mean_dot = x_lag @ np.asarray(p.gamma) if p.gamma else np.zeros(total)
    exog_dot = x_lag @ np.asarray(p.delta) if p.delta else np.zeros(total)

    init = p.omega / (1.0 - p.persistence())
    sigma2 = np.empty(total)
    eps = np.empty(total)
    eps2 = np.empty(total)
    r = np.empty(total)
    clamps = _simulate_core(eta, exog_dot, mean_dot, p.omega,
                            np.asarray(p.alpha), np.asarray(p.beta),
                            p.beta0, p.beta1, init, VARIANCE_FLOOR,
                            sigma2, eps, eps2, r)
    b = config.burn_in
    lagged = x_lag[b:] if p.delta else None
    return SimResult(
        returns=r[b:], residuals=eps[b:], sigma2=sigma2[b:],
        regressors={name: path[b:] for name, path in paths.items()},
        lagged_exog=lagged, init=init, clamp_events=int(clamps),
        seed=config.seed)


def sim_to_panel(sim: SimResult, start_hour: int = 0) -> HourlyPanel:
    """Package a simulated series as an HourlyPanel the engine can fit."""
    n = len(sim.returns)
    cols = {"r": full_series("r", start_hour, sim.returns)}
    for name, path in sim.regressors.items():
        cols[name] = full_series(name, start_hour, path)
    return HourlyPanel(start_hour, n, cols)


# --- Monte Carlo -------------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloSummary:
    param_names: tuple[str, ...]
    truth: np.ndarray
    mean_estimates: np.ndarray
    bias: np.ndarray
    mc_se: np.ndarray
    n_converged: int
    n_failed: int
    seeds: tuple[int, ...]
    estimates: np.ndarray  # (n_converged, k) per-replication estimates


def default_fit_harness(spec: GarchSpec, options: FitOptions | None = None):
    """Harness mapping one SimResult to (estimates, converged)."""
    options = options or FitOptions(min_obs=100)

    def run(sim: SimResult):
        res = fit(sim_to_panel(sim), spec, options)
        return res.estimates, res.converged

    return run


def spec_for_config(config: SimConfig) -> GarchSpec:
    """The estimating spec matching a simulation config's ground truth."""
    p = config.true_params
    names = tuple(r.name for r in config.regressors)
    return GarchSpec(
        mean_regressors=names if p.gamma else (),
        variance_regressors=names if p.delta else (),
        p=len(p.alpha), q=len(p.beta),
        include_ar1=(p.beta1 != 0.0))


def monte_carlo(config: SimConfig, replications: int,
                harness=None) -> MonteCarloSummary:
    """simulate -> fit across seeds base, base+1, ...; aggregates bias and
    Monte Carlo standard errors over the converged replications."""
    if replications < 2:
        raise ValueError("need at least two replications")
    spec = spec_for_config(config)
    harness = harness or default_fit_harness(spec)
    truth = flatten_params(config.true_params, spec)
    seeds = tuple(config.seed + i for i in range(replications))
    estimates = []
    failures = 0
    for s in seeds:
        rep = SimConfig(config.n, config.true_params, s,
                        config.regressors, config.burn_in)
        try:
            est, ok = harness(simulate_garch(rep))
        except Exception:
            failures += 1
            continue
        if not ok:
            failures += 1
            continue
        estimates.append(np.asarray(est, dtype=np.float64))
    if not estimates:
        raise AllReplicationsFailed(f"all {replications} replications failed")
    est = np.vstack(estimates)
    mean = est.mean(axis=0)
    if len(estimates) > 1:
        mc_se = est.std(axis=0, ddof=1) / math.sqrt(len(estimates))
    else:
        mc_se = np.zeros_like(mean)
    return MonteCarloSummary(
        param_names=spec.param_names(), truth=truth, mean_estimates=mean,
        bias=mean - truth, mc_se=mc_se, n_converged=len(estimates),
        n_failed=failures, seeds=seeds, estimates=est)


# --- structural price fixtures ----------------------------------------------

def structural_price(k_demand: float, economy: float, liquidity_base: float,
                     liquidity_rate_slope: float, rate: float,
                     stock: float) -> float:
    """Noise-free equilibrium price: money demand over coin stock.

    Transaction demand is k*G; speculative demand is a decreasing affine
    function of the interest rate. Doubling the stock exactly halves the
    price; doubling G with zero speculative demand exactly doubles it.
    """
    if stock <= 0:
        raise ValueError("stock must be positive")
    return (k_demand * economy
            + liquidity_base - liquidity_rate_slope * rate) / stock


# variance-equation ground-truth signs, in units of omega per one standard
# deviation of the standardized regressor
DEFAULT_VARIANCE_EFFECTS = {
    "logtot_btc": -0.25,
    "logvolume": +0.25,
    "logno": +0.25,
    "logvelocity": -0.25,
    "logr_rate": -0.25,
}


@dataclass(frozen=True)
class PricePanelConfig:
    """Knobs for the end-to-end synthetic fixture set."""

    n_hours: int = 5000
    seed: int = 1
    start_hour: int = 1420070400  # 2015-01-01T00:00:00Z, a UTC midnight
    # structural price components
    k_demand: float = 1.5e6
    liquidity_base: float = 1.5e9
    liquidity_rate_slope: float = 1.0e8
    initial_stock: float = 12_000_000.0
    # regressor path shapes (bounded AR(1) deviations of the logged levels)
    exchange_volume_level: float = 3000.0
    exchange_volume_spread: float = 0.008
    chain_volume_level: float = 600.0
    chain_volume_spread: float = 0.5
    addresses_level: float = 5000.0
    addresses_spread: float = 0.6
    regressor_persistence: float = 0.97
    rate_center: float = 0.5
    rate_spread: float = 0.9
    rate_persistence_daily: float = 0.8
    block_time_center: float = 10.0
    block_time_spread: float = 2.0
    # return-noise GARCH-X structure
    noise_sigma: float = 0.01
    arch: float = 0.10
    garch: float = 0.70
    variance_effects: dict = field(
        default_factory=lambda: dict(DEFAULT_VARIANCE_EFFECTS))
    log_floor: float = 1e-8
    rate_shift: float = 5.0
    halving: HalvingSchedule = field(default_factory=HalvingSchedule)

    def __post_init__(self):
        if self.n_hours < 48:
            raise ValueError("fixture needs at least 48 hours")
        if self.start_hour % HOUR != 0:
            raise ValueError("start_hour must be hour-aligned")
        if self.noise_sigma <= 0 or self.initial_stock <= 0:
            raise ValueError("noise_sigma and initial_stock must be positive")
        if not 0 < self.arch + self.garch < 1:
            raise ValueError("arch + garch must lie in (0, 1)")


@dataclass(frozen=True)
class PricePanelResult:
    paths: dict[str, str]
    recipe: PanelRecipe
    truth: dict
    manifest_path: str


def _bounded(latent: np.ndarray, spread: float) -> np.ndarray:
    """Soft-bounded deviation: spread * tanh(latent / 2), |.| < spread."""
    return spread * np.tanh(latent / 2.0)


def _fmt(x: float) -> str:
    return repr(float(x))


def simulate_price_panel(config: PricePanelConfig, out_dir) -> PricePanelResult:
    """Write a self-consistent fixture set (trades/chain/daily CSVs + manifest).

    The structural price follows the supply-demand identity in
    ``structural_price`` while the log-price noise is a GARCH-X random walk
    whose variance equation carries the configured signs on the lagged,
    standardized panel regressors. Ingesting the fixture therefore yields a
    panel whose return series embeds a known variance-equation ground truth.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = config.n_hours
    rng = make_rng(config.seed)
    hours = config.start_hour + HOUR * np.arange(n, dtype=np.int64)
    n_days = int((hours[-1] // DAY * DAY - config.start_hour) // DAY) + 1

    # regressor source paths (draw order fixed for reproducibility)
    ln_xvol = (math.log(config.exchange_volume_level)
               + _bounded(ar1_path(standard_normals(rng, n),
                                   config.regressor_persistence, 1.0),
                          config.exchange_volume_spread))
    ln_cvol = (math.log(config.chain_volume_level)
               + _bounded(ar1_path(standard_normals(rng, n),
                                   config.regressor_persistence, 1.0),
                          config.chain_volume_spread))
    ln_addr = (math.log(config.addresses_level)
               + _bounded(ar1_path(standard_normals(rng, n),
                                   config.regressor_persistence, 1.0),
                          config.addresses_spread))
    rate_daily = (config.rate_center
                  + _bounded(ar1_path(standard_normals(rng, n_days),
                                      config.rate_persistence_daily, 1.0),
                             config.rate_spread))
    block_time = np.clip(
        config.block_time_center
        + _bounded(ar1_path(standard_normals(rng, n), 0.9, 1.0),
                   config.block_time_spread),
        1.0, None)
    eta = standard_normals(rng, n)

    xvol = np.exp(ln_xvol)
    cvol = np.exp(ln_cvol)
    addr = np.maximum(1, np.rint(np.exp(ln_addr)).astype(np.int64))
    tx_count = np.maximum(1, np.rint(addr * 0.6).astype(np.int64))

    # day-start stock anchors from the same per-minute issuance rule the
    # ingestion side uses, so re-integration reproduces the stock bit-exactly
    bt_series = HourlySeries("block_time", config.start_hour, block_time,
                             np.zeros(n, dtype=np.uint8))
    stock = config.initial_stock
    anchors = {}
    for i in range(n):
        h = int(hours[i])
        if h % DAY == 0:
            anchors[h] = stock
        stock = _advance(stock, 60, float(block_time[i]), config.halving)
    daily_records = [DailyRecord(day, anchors[day], None)
                     for day in sorted(anchors)]
    stock_series = total_stock_hourly(daily_records, bt_series, config.halving)

    # panel regressor columns exactly as ingestion will derive them
    addr_f = addr.astype(np.float64)
    col_logvolume = np.log(xvol)
    col_logno = np.log(addr_f)
    vel = velocity(full_series("txvol", config.start_hour, cvol),
                   stock_series, "v1")
    col_logvelocity = safe_log(vel, config.log_floor).values
    col_logtot = np.log(stock_series.values)
    day_index = ((hours - config.start_hour) // DAY).astype(np.int64)
    rate_hourly = rate_daily[day_index]
    col_logr = np.log(rate_hourly + config.rate_shift)

    columns = {
        "logtot_btc": col_logtot,
        "logvolume": col_logvolume,
        "logno": col_logno,
        "logvelocity": col_logvelocity,
        "logr_rate": col_logr,
    }
    names = [name for name in columns if name in config.variance_effects]
    z = np.column_stack([
        (columns[name] - columns[name].mean()) / columns[name].std()
        for name in names])
    z_lag = np.vstack([z[:1], z[:-1]])

    omega = config.noise_sigma ** 2 * (1.0 - config.arch - config.garch)
    delta = tuple(config.variance_effects[name] * omega for name in names)
    noise_params = ParamVector(
        beta0=0.0, beta1=0.0, gamma=(), omega=omega,
        alpha=(config.arch,), beta=(config.garch,), delta=delta)

    # structural drift: hour-over-hour change of the equilibrium log price
    numerator = (config.k_demand * xvol + config.liquidity_base
                 - config.liquidity_rate_slope * rate_hourly)
    if np.any(numerator <= 0):
        raise ValueError("structural money demand must stay positive")
    ln_pbar = np.log(numerator) - np.log(stock_series.values)
    drift = np.concatenate([[0.0], np.diff(ln_pbar)])

    init = omega / (1.0 - config.arch - config.garch)
    exog_dot = z_lag @ np.asarray(delta)
    sigma2 = np.empty(n)
    eps = np.empty(n)
    eps2 = np.empty(n)
    r = np.empty(n)
    clamps = _simulate_core(eta, exog_dot, drift, omega,
                            np.asarray(noise_params.alpha),
                            np.asarray(noise_params.beta),
                            0.0, 0.0, init, VARIANCE_FLOOR,
                            sigma2, eps, eps2, r)

    ln_price = ln_pbar[0] + np.cumsum(r)
    price = np.exp(ln_price)

    trades_path = out / "trades.csv"
    with open(trades_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("unix_ts,price_usd,volume_btc\n")
        for i in range(n):
            fh.write(f"{hours[i]},{_fmt(price[i])},{_fmt(xvol[i])}\n")
    chain_path = out / "chain.csv"
    with open(chain_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("unix_ts,tx_volume_btc,tx_count,unique_addresses,"
                 "avg_block_time_minutes\n")
        for i in range(n):
            fh.write(f"{hours[i]},{_fmt(cvol[i])},{tx_count[i]},{addr[i]},"
                     f"{_fmt(block_time[i])}\n")
    daily_path = out / "daily.csv"
    with open(daily_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("date,total_btc,tips_rate\n")
        for d, rec in enumerate(daily_records):
            date = datetime.fromtimestamp(rec.day, timezone.utc).strftime("%Y-%m-%d")
            fh.write(f"{date},{_fmt(rec.total_btc)},{_fmt(rate_daily[d])}\n")

    recipe = PanelRecipe(
        trades_path=str(trades_path), chain_path=str(chain_path),
        daily_path=str(daily_path), start_hour=config.start_hour,
        end_hour=config.start_hour + n * HOUR, log_floor=config.log_floor,
        rate_shift=config.rate_shift, halving=config.halving)

    truth = {
        "rng_algorithm": RNG_ALGORITHM,
        "seed": config.seed,
        "noise_model": {
            "omega": omega, "arch": config.arch, "garch": config.garch,
            "variance_effects_per_sd": dict(config.variance_effects),
            "noise_sigma": config.noise_sigma,
            "clamp_events": int(clamps),
        },
        "structural_signs": {
            "economy_size_up": "price_up",
            "stock_up": "price_down",
            "rate_up": "price_down",
            "velocity_up": "price_down",
        },
        "expected_variance_signs": {
            name: ("-" if config.variance_effects[name] < 0 else "+")
            for name in names},
        "liquidity": {"base": config.liquidity_base,
                      "rate_slope": config.liquidity_rate_slope},
        "k_demand": config.k_demand,
    }
    manifest_path = out / "manifest.json"
    cfg = asdict(config)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump({"config": cfg, "truth": truth}, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return PricePanelResult(
        paths={"trades": str(trades_path), "chain": str(chain_path),
               "daily": str(daily_path)},
        recipe=recipe, truth=truth, manifest_path=str(manifest_path))
