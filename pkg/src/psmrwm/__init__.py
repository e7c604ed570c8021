"""Pseudo-marginal random walk Metropolis: limiting efficiency, samplers and diagnostics."""

from .noise import (
    CustomLogDensity,
    Empirical,
    Gaussian,
    Laplace,
    NoiseModel,
    NoNoise,
    TwoPoint,
)
from .sampler import ChainConfig, RunResult, run_chain, scaling_from_ell, synthetic_noise_target
from .theory import (
    certify_theorem,
    ell_hat_infty,
    j_esjd,
    j_infty,
    optimal_scaling,
)

__version__ = "0.1.0"

__all__ = [
    "CustomLogDensity",
    "Empirical",
    "Gaussian",
    "Laplace",
    "NoiseModel",
    "NoNoise",
    "TwoPoint",
    "ChainConfig",
    "RunResult",
    "run_chain",
    "scaling_from_ell",
    "synthetic_noise_target",
    "certify_theorem",
    "ell_hat_infty",
    "j_esjd",
    "j_infty",
    "optimal_scaling",
]
