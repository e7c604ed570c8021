"""Pseudo-marginal random walk Metropolis.

The chain runs on pairs ``(x, log_pi_hat)``. A proposal ``x* = x + lam L z``
(``L`` the lower Cholesky factor of ``v_hat``) is scored with a fresh noisy
estimate, and accepted iff ``log u < log_pi_hat(x*) - log_pi_hat(x)``. The
estimate at the current point is kept until the chain moves, which is what
makes the chain target ``pi`` exactly despite the noise.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Protocol

import numpy as np

from .noise import NoiseModel

__all__ = [
    "TargetEstimator",
    "ChainConfig",
    "RunResult",
    "ChainAborted",
    "SyntheticNoiseTarget",
    "step",
    "run_chain",
    "synthetic_noise_target",
    "standard_normal_log_density",
    "scaling_from_ell",
    "roughness_constant",
    "derive_seed",
]

_BLOCK = 4096


class TargetEstimator(Protocol):
    """Anything producing noisy draws of ``log pi(x) + W``, fresh noise per call."""

    dim: int

    def estimate_log_target(self, x: np.ndarray, rng: np.random.Generator) -> float: ...


class ChainAborted(RuntimeError):
    """The estimator returned NaN, or the starting estimate was ``-inf``."""


@dataclass
class ChainConfig:
    lam: float
    v_hat: np.ndarray
    iters: int
    seed: int
    initial_x: np.ndarray

    def __post_init__(self):
        self.v_hat = np.atleast_2d(np.asarray(self.v_hat, dtype=float))
        self.initial_x = np.atleast_1d(np.asarray(self.initial_x, dtype=float))
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.iters < 0:
            raise ValueError("iters must be non-negative")
        d = self.initial_x.size
        if self.v_hat.shape != (d, d):
            raise ValueError(f"v_hat must be {d}x{d}, got {self.v_hat.shape}")
        if not np.allclose(self.v_hat, self.v_hat.T):
            raise ValueError("v_hat must be symmetric")
        self.proposal_factor  # fail early if v_hat is not positive definite

    @property
    def dim(self) -> int:
        return self.initial_x.size

    @cached_property
    def proposal_factor(self) -> np.ndarray:
        """``lam * L`` with ``L L' = v_hat``."""
        try:
            return self.lam * np.linalg.cholesky(self.v_hat)
        except np.linalg.LinAlgError as exc:
            raise ValueError("v_hat is not positive definite") from exc


@dataclass
class RunResult:
    """One chain. ``chain[i]`` is the state after iteration ``i``.

    ``chain`` is ``None`` when the run was made with ``keep_chain=False``;
    ``sq_jumps[i] = ||x_i - x_{i-1}||^2`` is recorded either way.
    """

    chain: np.ndarray | None
    log_estimates: np.ndarray
    accept_flags: np.ndarray
    wall_seconds: float
    cpu_seconds: float
    initial_x: np.ndarray
    sq_jumps: np.ndarray
    estimator_calls: int = field(default=0)

    @property
    def iters(self) -> int:
        return self.accept_flags.size

    @property
    def acceptance_rate(self) -> float:
        return float(self.accept_flags.mean()) if self.iters else float("nan")

    @property
    def esjd(self) -> float:
        """Mean of ``||x_{t+1} - x_t||^2`` over the run."""
        return float(self.sq_jumps.mean()) if self.iters else float("nan")

    def to_csv(self, path):
        if self.chain is None:
            raise ValueError("chain was not stored; rerun with keep_chain=True")
        d = self.chain.shape[1]
        header = ",".join([f"x{i + 1}" for i in range(d)] + ["log_estimate", "accepted"])
        with open(path, "w", newline="") as fh:
            fh.write(header + "\n")
            for row, le, acc in zip(self.chain, self.log_estimates, self.accept_flags):
                fh.write(",".join(repr(float(v)) for v in row))
                fh.write(f",{float(le)!r},{int(acc)}\n")


def step(state, config: ChainConfig, estimator: TargetEstimator, rng, est_rng=None, dx=None, log_u=None):
    """One pseudo-marginal RWM transition.

    ``state`` is ``(x, log_pi_hat)``; returns ``((x_new, log_new), accepted)``.
    ``dx`` and ``log_u`` may be supplied pre-drawn, otherwise they come from
    ``rng``. The estimator draws its noise from ``est_rng`` (default ``rng``).
    """
    x, log_cur = state
    if dx is None:
        dx = config.proposal_factor @ rng.standard_normal(config.dim)
    if log_u is None:
        log_u = math.log(rng.random())
    x_prop = x + dx
    log_prop = float(estimator.estimate_log_target(x_prop, rng if est_rng is None else est_rng))
    if math.isnan(log_prop):
        raise ChainAborted(f"estimator returned NaN at {x_prop!r}")
    if log_u < log_prop - log_cur:
        return (x_prop, log_prop), True
    return (x, log_cur), False


def run_chain(config: ChainConfig, estimator: TargetEstimator, keep_chain: bool = True, components=None) -> RunResult:
    """Run ``config.iters`` iterations; deterministic given the config and estimator.

    Proposal increments and uniforms come from one child stream of
    ``config.seed``, estimator noise from another. With ``keep_chain=True``
    the states are stored, restricted to the indices in ``components`` if
    given (so long high-dimensional runs can keep a few coordinates).
    """
    prop_ss, est_ss = np.random.SeedSequence(config.seed).spawn(2)
    prop_rng = np.random.default_rng(prop_ss)
    est_rng = np.random.default_rng(est_ss)
    n, d = config.iters, config.dim
    factor = config.proposal_factor

    cols = np.arange(d) if components is None else np.atleast_1d(np.asarray(components, dtype=int))
    chain = np.empty((n, cols.size)) if keep_chain else None
    log_est = np.empty(n)
    flags = np.zeros(n, dtype=bool)
    sq_jumps = np.zeros(n)

    wall0, cpu0 = time.perf_counter(), time.process_time()
    x = config.initial_x.copy()
    log_cur = float(estimator.estimate_log_target(x, est_rng))
    calls = 1
    if math.isnan(log_cur) or log_cur == -math.inf:
        raise ChainAborted(f"invalid initial estimate {log_cur} at {x!r}")

    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        dxs = prop_rng.standard_normal((stop - start, d)) @ factor.T
        log_us = np.log(prop_rng.random(stop - start))
        sq = np.einsum("ij,ij->i", dxs, dxs)
        for j, i in enumerate(range(start, stop)):
            (x, log_cur), acc = step((x, log_cur), config, estimator, None, est_rng, dxs[j], log_us[j])
            calls += 1
            if acc:
                flags[i] = True
                sq_jumps[i] = sq[j]
            if keep_chain:
                chain[i] = x if components is None else x[cols]
            log_est[i] = log_cur
    wall, cpu = time.perf_counter() - wall0, time.process_time() - cpu0
    return RunResult(chain, log_est, flags, wall, cpu, config.initial_x.copy(), sq_jumps, calls)


# -- synthetic targets -----------------------------------------------------------


def standard_normal_log_density(x) -> float:
    """Unnormalized log density of the product standard normal."""
    x = np.asarray(x)
    return -0.5 * float(x @ x)


@dataclass(frozen=True)
class SyntheticNoiseTarget:
    """Exact log density plus independent noise ``W* ~ g``, the idealized setting of the limit theory."""

    dim: int
    base_log_density: Callable
    noise: NoiseModel

    def estimate_log_target(self, x, rng) -> float:
        return self.base_log_density(x) + float(self.noise.sample(rng, None, stationary=False))


def synthetic_noise_target(base_log_density: Callable, noise: NoiseModel, dim: int) -> SyntheticNoiseTarget:
    return SyntheticNoiseTarget(dim, base_log_density, noise)


def scaling_from_ell(ell: float, s_d: float) -> float:
    """Proposal scale ``lam = ell / sqrt(s_d)`` for roughness constant ``s_d``."""
    if not s_d > 0:
        raise ValueError("roughness constant must be positive")
    if not ell > 0:
        raise ValueError("ell must be positive")
    return ell / math.sqrt(s_d)


def roughness_constant(d: int, mean_second_derivative: float) -> float:
    """``s_d = -d / E[f''(X)]`` for a product target ``exp(sum f(x_i))``; ``d`` for a standard normal."""
    if not mean_second_derivative < 0:
        raise ValueError("E[f''] must be negative")
    return -d / mean_second_derivative


def _canonical(index):
    # numpy scalars print differently from Python ones; hash their Python values
    if isinstance(index, (tuple, list)):
        return tuple(_canonical(i) for i in index)
    if isinstance(index, np.generic):
        return index.item()
    return index


def derive_seed(seed_base: int, index) -> int:
    """Child seed ``seed_base XOR hash(index)``, stable across processes and runs."""
    digest = hashlib.blake2b(repr(_canonical(index)).encode(), digest_size=8).digest()
    return (int(seed_base) ^ int.from_bytes(digest, "little")) & ((1 << 63) - 1)
