"""Chain and noise diagnostics: ESS, jumping distance, noise moments, relative efficiency tables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import stats

from ._io import fmt
__all__ = [
    "EssReport",
    "EfficiencyRow",
    "EfficiencyTable",
    "NoiseStudyRow",
    "autocorrelation",
    "ess",
    "ess_report",
    "acceptance_rate",
    "empirical_esjd",
    "silverman_bandwidth",
    "kde",
    "noise_study",
    "relative_efficiencies",
    "variance_slope",
    "write_kde_csv",
]


def autocorrelation(x) -> np.ndarray:
    """Empirical autocorrelation at every lag, by FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    fx = np.fft.rfft(xc, size)
    acov = np.fft.irfft(fx * np.conj(fx), size)[:n] / n
    return acov / acov[0]


def ess(series, discard: int = 0) -> float:
    """Effective sample size with Geyer's initial monotone sequence estimator.

    Autocorrelations are summed in adjacent pairs up to the first non-positive
    pair, with the pair sums forced to be non-increasing. The result is
    clipped to ``[1, N]``.
    """
    x = np.asarray(series, dtype=float)[discard:]
    n = x.size
    if n <= 10:
        raise ValueError("series too short for an ESS estimate")
    if np.ptp(x) == 0:
        raise ValueError("degenerate series: zero variance")
    rho = autocorrelation(x)
    if n % 2:
        rho = rho[:-1]
    pairs = rho[0::2] + rho[1::2]
    nonpos = np.flatnonzero(pairs <= 0)
    pairs = pairs[: nonpos[0]] if nonpos.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    return float(np.clip(n / tau, 1.0, n))


@dataclass
class EssReport:
    per_component_ess: np.ndarray
    min_ess: float
    iters_used: int
    discard: int


def ess_report(chain, discard: int | None = None) -> EssReport:
    """Per-component ESS of a chain; ``discard`` defaults to the first 10%."""
    chain = np.asarray(chain, dtype=float)
    if chain.ndim == 1:
        chain = chain[:, None]
    if discard is None:
        discard = chain.shape[0] // 10
    per = np.array([ess(chain[:, j], discard) for j in range(chain.shape[1])])
    return EssReport(per, float(per.min()), chain.shape[0] - discard, discard)


def acceptance_rate(flags, discard: int = 0) -> float:
    return float(np.mean(np.asarray(flags)[discard:]))


def empirical_esjd(chain, per_component: bool = False, discard: int = 0) -> float:
    """Mean of ``||x_{t+1} - x_t||^2`` over transitions (divided by ``d`` if ``per_component``)."""
    chain = np.asarray(chain, dtype=float)
    if chain.ndim == 1:
        chain = chain[:, None]
    chain = chain[discard:]
    if chain.shape[0] < 2:
        raise ValueError("need at least two states")
    jumps = np.diff(chain, axis=0)
    total = float(np.mean(np.einsum("ij,ij->i", jumps, jumps)))
    return total / chain.shape[1] if per_component else total


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=float)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    return 0.9 * min(sd, iqr / 1.34) * x.size ** (-0.2)


def kde(samples, n_grid: int = 512):
    """Gaussian kernel density estimate on an ``n_grid`` grid spanning the data plus 4 bandwidths."""
    x = np.asarray(samples, dtype=float)
    bw = silverman_bandwidth(x)
    grid = np.linspace(x.min() - 4 * bw, x.max() + 4 * bw, n_grid)
    density = stats.gaussian_kde(x, bw_method=bw / x.std(ddof=1))(grid)
    return grid, density


@dataclass
class NoiseStudyRow:
    m: int
    variance: float
    skewness: float
    degenerate: bool
    grid: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)


def noise_study(make_estimator: Callable, x_ref, m_list, reps: int = 1000, seed: int = 0):
    """Distribution of the log-target noise at ``x_ref`` for each ``m``.

    ``make_estimator(m)`` returns an object with ``estimate_log_target(x, rng)``.
    The ``reps`` estimates are centred on their mean; a zero-variance sample
    is reported as degenerate with NaN skewness and no KDE.
    """
    if reps < 100:
        raise ValueError("reps must be at least 100")
    x_ref = np.asarray(x_ref, dtype=float)
    rows = []
    for i, m in enumerate(m_list):
        rng = np.random.default_rng([seed, i])
        est = make_estimator(m)
        draws = np.array([est.estimate_log_target(x_ref, rng) for _ in range(reps)])
        w = draws - draws.mean()
        var = float(w.var(ddof=1))
        if var == 0:
            rows.append(NoiseStudyRow(m, 0.0, float("nan"), True, np.array([]), np.array([])))
            continue
        grid, dens = kde(w)
        rows.append(NoiseStudyRow(m, var, float(stats.skew(w)), False, grid, dens))
    return rows


def write_kde_csv(path, rows):
    with open(path, "w", newline="") as fh:
        fh.write("m,w,density\n")
        for r in rows:
            for w, d in zip(r.grid, r.density):
                fh.write(f"{r.m},{fmt(w)},{fmt(d)}\n")


# -- relative efficiency ------------------------------------------------------


@dataclass
class EfficiencyRow:
    m: int
    lam: float
    min_ess: float
    seconds: float
    ess_per_s: float
    ess_star: float = math.nan
    ess_starstar: float = math.nan
    accept_rate: float = math.nan
    noise_var: float = math.nan


@dataclass
class EfficiencyTable:
    rows: list

    COLUMNS = ("m", "lambda", "min_ess", "wall_s", "ess_per_s", "ess_star",
               "ess_starstar", "accept_rate", "noise_var")

    def cell(self, m, lam) -> EfficiencyRow:
        for r in self.rows:
            if r.m == m and r.lam == lam:
                return r
        raise KeyError((m, lam))

    def best_lambda(self, m) -> float:
        row = max((r for r in self.rows if r.m == m), key=lambda r: r.ess_star)
        return row.lam

    def to_csv(self, path, timing: bool = True):
        """Write the table; ``timing=False`` blanks the run-to-run varying time columns."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.COLUMNS)
            for r in self.rows:
                vals = [r.m, r.lam, r.min_ess, r.seconds, r.ess_per_s, r.ess_star,
                        r.ess_starstar, r.accept_rate, r.noise_var]
                if not timing:
                    vals[3:7] = ["", "", "", ""]
                writer.writerow([fmt(v) if isinstance(v, float) else v for v in vals])


def relative_efficiencies(results: Mapping) -> EfficiencyTable:
    """Build the ESS*/ESS** table from ``{(m, lam): (min_ess, seconds[, accept_rate, noise_var])}``.

    ``ESS*`` divides ESS per second by its maximum over scalings at fixed ``m``;
    ``ESS**`` by its maximum over ``m`` at fixed scaling.
    """
    if not results:
        raise ValueError("no results to normalize")
    rows = []
    for (m, lam), vals in sorted(results.items()):
        min_ess, seconds, *extra = vals
        extra = dict(zip(("accept_rate", "noise_var"), map(float, extra)))
        rows.append(EfficiencyRow(m, lam, float(min_ess), float(seconds), min_ess / seconds, **extra))
    best_m = {}
    best_lam = {}
    for r in rows:
        best_m[r.m] = max(best_m.get(r.m, 0.0), r.ess_per_s)
        best_lam[r.lam] = max(best_lam.get(r.lam, 0.0), r.ess_per_s)
    for r in rows:
        r.ess_star = r.ess_per_s / best_m[r.m]
        r.ess_starstar = r.ess_per_s / best_lam[r.lam]
    return EfficiencyTable(rows)


def variance_slope(m_list, variances):
    """Least-squares slope of ``log variance`` on ``log m``, with its standard error."""
    m = np.asarray(m_list, dtype=float)
    v = np.asarray(variances, dtype=float)
    if m.size < 3 or np.ptp(m) == 0:
        raise ValueError("need at least three distinct m values")
    if np.any(v <= 0):
        raise ValueError("variances must be positive")
    fit = stats.linregress(np.log(m), np.log(v))
    return float(fit.slope), float(fit.stderr)
