"""Distributions for the additive noise in a log-target estimate.

A noise model describes ``W*``, the error in the estimate of ``log pi`` at a
freshly proposed point, normalized so that ``E[exp(W*)] = 1``. When the
pseudo-marginal chain is stationary, the noise retained at the current point
has density ``exp(w) g(w)``; the difference ``B = W* - W`` drives the limiting
efficiency of the random walk sampler.

Every model exposes

* ``log_g(w)`` -- log density of ``W*`` (continuous models only),
* ``sample(rng, size, stationary)`` -- draws of ``W*`` or of the stationary ``W``,
* ``sample_difference(rng, size)`` -- draws of ``B`` with ``W`` and ``W*`` independent,
* ``rho(b)`` and ``h(b) = exp(b/2) rho(b)`` -- density of ``B`` and its
  symmetric tilt, both by adaptive quadrature.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from ._io import fmt

__all__ = [
    "NoDensityError",
    "NoiseModel",
    "NoNoise",
    "Gaussian",
    "Laplace",
    "TwoPoint",
    "Empirical",
    "CustomLogDensity",
    "log_g",
    "sample_noise",
    "rho",
    "h_value",
    "make_noise",
]

# integrands are truncated where they fall below this fraction of their peak
_LOG_TRUNCATION = math.log(1e-14)
_SCAN_POINTS = 4001


class NoDensityError(ValueError):
    """Raised when a Lebesgue density is requested from a point-mass or discrete model."""


def _trim_window(logf: Callable, lo: float, hi: float):
    """Scan ``logf`` on a grid; return ``(a, b, peak)`` bracketing where it exceeds 1e-14 of its peak."""
    grid = np.linspace(lo, hi, _SCAN_POINTS)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        vals = logf(grid)
    vals = np.where(np.isnan(vals), -np.inf, vals)
    peak = float(np.max(vals))
    if not np.isfinite(peak):
        return None
    above = np.flatnonzero(vals > peak + _LOG_TRUNCATION)
    a = grid[max(above[0] - 1, 0)]
    b = grid[min(above[-1] + 1, _SCAN_POINTS - 1)]
    return a, b, peak


def _log_quad(logf: Callable, lo: float, hi: float, kinks: Sequence[float] = ()) -> float:
    """Integrate ``exp(logf)`` over ``[lo, hi]`` after trimming negligible tails.

    The peak is factored out before handing the rescaled integrand to QUADPACK.
    """
    if not hi > lo:
        return 0.0
    window = _trim_window(logf, lo, hi)
    if window is None:
        return 0.0
    a, b, peak = window
    pts = sorted(k for k in kinks if a < k < b)

    def integrand(w):
        return math.exp(float(logf(w)) - peak)

    with np.errstate(divide="ignore", over="ignore"):
        val, _ = integrate.quad(
            integrand, a, b, points=pts or None, epsabs=1e-13, epsrel=1e-12, limit=500
        )
    return math.exp(peak) * val


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def _log_quad_fixed(logf: Callable, lo: float, hi: float, kinks: Sequence[float] = (), panels=8):
    """Composite 32-point Gauss-Legendre version of :func:`_log_quad`, one vectorized call.

    Panels are split at the kinks, so piecewise-smooth integrands keep
    spectral accuracy. Used for bulk tabulation.
    """
    if not hi > lo:
        return 0.0
    window = _trim_window(logf, lo, hi)
    if window is None:
        return 0.0
    a, b, peak = window
    edges = np.unique(np.concatenate([np.linspace(a, b, panels + 1), [k for k in kinks if a < k < b]]))
    left, right = edges[:-1, None], edges[1:, None]
    half = 0.5 * (right - left)
    w = left + half * (_GL_NODES + 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        vals = np.exp(logf(w.ravel()).reshape(w.shape) - peak)
    return math.exp(peak) * float(np.sum(half * (vals @ _GL_WEIGHTS)[:, None]))


class NoiseModel:
    """Base class. Subclasses are immutable dataclasses."""

    discrete = False
    degenerate = False
    log_concave: bool | None = None

    def log_g(self, w):
        raise NoDensityError(f"{type(self).__name__} has no Lebesgue density")

    def sample(self, rng: np.random.Generator, size=None, stationary: bool = False):
        raise NotImplementedError

    def sample_difference(self, rng: np.random.Generator, size=None):
        """Draw ``B = W* - W`` with ``W* ~ g`` and ``W ~ exp(w) g(w)`` independent."""
        w_star = self.sample(rng, size, stationary=False)
        w = self.sample(rng, size, stationary=True)
        return w_star - w

    def difference_moments(self):
        """Closed-form ``(mean, variance)`` of ``B`` where available, else ``None``."""
        return None

    def describe(self) -> str:
        return type(self).__name__

    # -- quadrature-backed quantities (continuous models) --------------------

    def _require_density(self):
        if self.discrete or self.degenerate:
            raise NoDensityError(
                f"{self.describe()} has no density for B; use its mass function"
            )

    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    @property
    def kinks(self) -> tuple[float, ...]:
        return ()

    def normalization(self) -> float:
        """Return ``int exp(w) g(w) dw``, which must equal one."""
        self._require_density()
        lo, hi = self.support
        return _log_quad(lambda w: w + self.log_g(w), lo, hi, self.kinks)

    def rho(self, b: float) -> float:
        """Density of ``B`` at ``b``, as ``int g(w) exp(w) g(w + b) dw``."""
        self._require_density()
        lo, hi = self.support
        b = float(b)
        kinks = [k for c in self.kinks for k in (c, c - b)]
        return _log_quad(
            lambda w: self.log_g(w) + w + self.log_g(w + b),
            max(lo, lo - b),
            min(hi, hi - b),
            kinks,
        )

    def h(self, b: float, fast: bool = False) -> float:
        """Symmetric tilt ``exp(b/2) rho(b)``, as ``int g(w + b/2) g(w - b/2) exp(w) dw``.

        ``fast=True`` swaps adaptive quadrature for fixed composite Gauss-Legendre.
        """
        self._require_density()
        lo, hi = self.support
        half = abs(float(b)) / 2.0
        kinks = [k for c in self.kinks for k in (c - half, c + half)]
        quad = _log_quad_fixed if fast else _log_quad
        return quad(
            lambda w: self.log_g(w + half) + self.log_g(w - half) + w,
            lo + half,
            hi - half,
            kinks,
        )

    def sup_g(self) -> float:
        self._require_density()
        lo, hi = self.support
        grid = np.linspace(lo, hi, 20001)
        return float(np.exp(np.max(self.log_g(grid))))


@dataclass(frozen=True)
class NoNoise(NoiseModel):
    """Exact evaluation of the target: ``W* = 0`` almost surely."""

    degenerate = True
    log_concave = True

    def sample(self, rng, size=None, stationary=False):
        return 0.0 if size is None else np.zeros(size)

    def difference_moments(self):
        return 0.0, 0.0


@dataclass(frozen=True)
class Gaussian(NoiseModel):
    """``W* ~ N(-sigma^2/2, sigma^2)``; ``sigma = 0`` is the noiseless case."""

    sigma: float

    log_concave = True

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")

    @property
    def degenerate(self):
        return self.sigma == 0

    @property
    def location(self) -> float:
        return -0.5 * self.sigma**2

    def describe(self):
        return f"Gaussian(sigma={self.sigma:g})"

    def log_g(self, w):
        if self.degenerate:
            raise NoDensityError("Gaussian(sigma=0) is a point mass")
        z = (np.asarray(w, dtype=float) - self.location) / self.sigma
        return -0.5 * z * z - math.log(self.sigma) - 0.5 * math.log(2 * math.pi)

    def sample(self, rng, size=None, stationary=False):
        mean = -self.location if stationary else self.location
        return rng.normal(mean, self.sigma, size)

    def difference_moments(self):
        return -self.sigma**2, 2 * self.sigma**2

    @property
    def support(self):
        return self.location - 60 * self.sigma, self.location + 60 * self.sigma

    def sup_g(self):
        self._require_density()
        return 1.0 / (self.sigma * math.sqrt(2 * math.pi))


@dataclass(frozen=True)
class Laplace(NoiseModel):
    """``W* = log(1 - scale^2) + Laplace(0, scale)``, for ``0 < scale < 1``."""

    scale: float

    log_concave = True

    def __post_init__(self):
        if not 0 < self.scale < 1:
            raise ValueError(
                f"Laplace scale must lie in (0, 1) for E[exp(W*)] to exist, got {self.scale}"
            )

    @property
    def location(self) -> float:
        return math.log1p(-self.scale**2)

    def describe(self):
        return f"Laplace(scale={self.scale:g})"

    def log_g(self, w):
        w = np.asarray(w, dtype=float)
        return -np.abs(w - self.location) / self.scale - math.log(2 * self.scale)

    def sample(self, rng, size=None, stationary=False):
        if not stationary:
            return self.location + rng.laplace(0.0, self.scale, size)
        # tilting by exp(w) gives an asymmetric Laplace about the same location
        b = self.scale
        right = rng.random(size) < 0.5 * (1 + b)
        up = rng.exponential(b / (1 - b), size)
        down = rng.exponential(b / (1 + b), size)
        return self.location + np.where(right, up, -down)

    @property
    def support(self):
        # the tilted right tail decays at rate (1 - b) / b, slowly as b -> 1
        b = self.scale
        return self.location - 80 * b, self.location + 80 * b / (1 - b)

    @property
    def kinks(self):
        return (self.location,)

    def sup_g(self):
        return 1.0 / (2 * self.scale)


@dataclass(frozen=True)
class TwoPoint(NoiseModel):
    """Multiplicative noise ``exp(W*)`` equal to ``epsilon`` w.p. ``p_star``, else ``a``.

    ``a = (1 - p_star epsilon) / (1 - p_star)`` keeps the estimator unbiased.
    """

    epsilon: float
    p_star: float

    discrete = True
    log_concave = False

    def __post_init__(self):
        if not (0 < self.epsilon < 1 and 0 < self.p_star < 1):
            raise ValueError("epsilon and p_star must both lie in (0, 1)")

    def describe(self):
        return f"TwoPoint(epsilon={self.epsilon:g}, p_star={self.p_star:g})"

    @property
    def a(self) -> float:
        return (1 - self.p_star * self.epsilon) / (1 - self.p_star)

    @property
    def k(self) -> float:
        return math.log(self.a) - math.log(self.epsilon)

    @property
    def p(self) -> float:
        """Stationary probability that the retained noise is ``log(epsilon)``."""
        return self.p_star * self.epsilon

    def pmf(self, stationary=False):
        prob = self.p if stationary else self.p_star
        return np.array([math.log(self.epsilon), math.log(self.a)]), np.array([prob, 1 - prob])

    def difference_pmf(self):
        """Support ``(-k, 0, k)`` of ``B`` and the matching probabilities."""
        ps, p = self.p_star, self.p
        probs = np.array([ps * (1 - p), ps * p + (1 - ps) * (1 - p), (1 - ps) * p])
        return np.array([-self.k, 0.0, self.k]), probs

    def sample(self, rng, size=None, stationary=False):
        values, probs = self.pmf(stationary)
        low = rng.random(size) < probs[0]
        out = np.where(low, values[0], values[1])
        return float(out) if size is None else out

    def difference_moments(self):
        values, probs = self.difference_pmf()
        mean = float(probs @ values)
        return mean, float(probs @ (values - mean) ** 2)


@dataclass(frozen=True, eq=False)
class Empirical(NoiseModel):
    """Noise represented by a bag of ``W*`` draws, e.g. repeated log-likelihood estimates.

    Stationary draws resample with self-normalized weights ``exp(w_i)``, so the
    draws need not be centred to make ``mean(exp(w)) = 1`` exactly.
    """

    samples: np.ndarray = field(repr=False)

    discrete = True

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float).ravel()
        if arr.size == 0 or not np.all(np.isfinite(arr)):
            raise ValueError("Empirical noise needs a non-empty array of finite draws")
        object.__setattr__(self, "samples", arr)

    def describe(self):
        return f"Empirical(n={self.samples.size})"

    @classmethod
    def from_csv(cls, path) -> "Empirical":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "w_star" not in reader.fieldnames:
                raise ValueError(f"{path}: expected a 'w_star' column")
            return cls(np.array([float(row["w_star"]) for row in reader]))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("w_star\n")
            for w in self.samples:
                fh.write(f"{fmt(w)}\n")

    @cached_property
    def stationary_weights(self) -> np.ndarray:
        logw = self.samples - self.samples.max()
        wts = np.exp(logw)
        return wts / wts.sum()

    def sample(self, rng, size=None, stationary=False):
        p = self.stationary_weights if stationary else None
        return rng.choice(self.samples, size=size, p=p)


@dataclass(frozen=True, eq=False)
class CustomLogDensity(NoiseModel):
    """User-supplied log density for ``W*`` on ``[lower, upper]``.

    The density must satisfy ``int exp(w) g(w) dw = 1``; this is checked on
    construction. ``kinks`` lists points where ``log_g`` is not smooth.
    """

    log_density: Callable
    lower: float
    upper: float
    log_concave: bool | None = None
    kinks: tuple = ()

    def __post_init__(self):
        if not self.upper > self.lower:
            raise ValueError("upper must exceed lower")
        norm = self.normalization()
        if abs(norm - 1) > 1e-6:
            raise ValueError(f"E[exp(W*)] = {norm:.8g}, expected 1")

    def describe(self):
        return "Custom"

    @property
    def support(self):
        return self.lower, self.upper

    def log_g(self, w):
        w = np.asarray(w, dtype=float)
        inside = (w >= self.lower) & (w <= self.upper)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(inside, self.log_density(np.clip(w, self.lower, self.upper)), -np.inf)
        return vals if vals.ndim else float(vals)

    def _inverse_cdf_table(self, tilt):
        grid = np.linspace(self.lower, self.upper, 200001)
        logd = self.log_g(grid) + (grid if tilt else 0.0)
        dens = np.exp(logd - np.max(logd))
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]))])
        return grid, cdf / cdf[-1]

    @cached_property
    def _tables(self):
        return self._inverse_cdf_table(False), self._inverse_cdf_table(True)

    def sample(self, rng, size=None, stationary=False):
        grid, cdf = self._tables[1 if stationary else 0]
        u = rng.random(size)
        return np.interp(u, cdf, grid)


# -- functional surface --------------------------------------------------------


def log_g(model: NoiseModel, w):
    """Log density of the proposal-time noise ``W*``; errors for point-mass or discrete models."""
    return model.log_g(w)


def sample_noise(model: NoiseModel, rng: np.random.Generator, stationary: bool = False, size=None):
    """Draw ``W*`` (``stationary=False``) or the stationary retained noise ``W``."""
    return model.sample(rng, size, stationary)


def rho(model: NoiseModel, b: float) -> float:
    return model.rho(b)


def h_value(model: NoiseModel, b: float) -> float:
    return model.h(b)


def make_noise(kind: str, **params) -> NoiseModel:
    """Build a model from a short name, as used by the command line and config files."""
    kind = kind.lower()
    if kind in ("none", "nonoise"):
        return NoNoise()
    if kind == "gaussian":
        return Gaussian(float(params["sigma"]))
    if kind == "laplace":
        return Laplace(float(params["scale"]))
    if kind in ("twopoint", "two-point"):
        return TwoPoint(float(params["epsilon"]), float(params["p_star"]))
    if kind == "empirical":
        return Empirical.from_csv(params["path"])
    raise ValueError(f"unknown noise kind {kind!r}")
