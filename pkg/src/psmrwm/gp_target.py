"""Binomial regression with a latent Gaussian process, and its importance-sampling likelihood.

Model, for sites ``z_1..z_l`` in ``R^a``::

    S | tau2, phi ~ N(0, tau2 R),   R_ij = exp(-|| (z_i - z_j) / phi ||)
    p_i = logistic(s_i + mu + z_i' beta)
    Y_i ~ Bin(n, p_i)

with parameters packed as ``x = (mu, beta_1..beta_a, log tau2, log phi_1..log phi_a)``
and a ``N(0, I)`` prior on ``x``.

The posterior density of ``x`` is estimated without bias (up to a constant) by
importance sampling over ``S``. The proposal is a Student-t centred on a
Gaussian approximation of ``S | y``: empirical logits ``y*`` are treated as
``N(s + mu + Z beta, D)`` with ``1/D_ii = y+_i (1 - y+_i / n)``, and combined
with the GP prior.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

__all__ = [
    "CANONICAL_TRUE_X",
    "GpDataset",
    "GpLogisticTarget",
    "canonical_grid",
    "correlation_matrix",
    "jittered_cholesky",
    "unpack_params",
    "pack_params",
    "simulate_dataset",
    "transform_counts",
    "conditional_moments",
    "estimate_log_posterior",
]

CANONICAL_TRUE_X = np.array([0.5, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
_LOG_2PI = math.log(2 * math.pi)


def canonical_grid(levels: int = 3, a: int = 4, lo: float = -0.5, hi: float = 0.5) -> np.ndarray:
    """``levels**a`` points on a regular grid over ``[lo, hi]^a``, in lexicographic order."""
    axis = np.linspace(lo, hi, levels)
    return np.array(list(itertools.product(axis, repeat=a)))


def correlation_matrix(z_points, phi) -> np.ndarray:
    """Exponential correlation with per-axis range parameters ``phi``."""
    phi = np.asarray(phi, dtype=float)
    if np.any(~(phi > 0)):
        raise ValueError("range parameters phi must be positive")
    scaled = np.asarray(z_points, dtype=float) / phi
    diff = scaled[:, None, :] - scaled[None, :, :]
    return np.exp(-np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)))


def jittered_cholesky(matrix, jitter: float = 1e-10, tries: int = 6) -> np.ndarray:
    """Lower Cholesky factor, adding ``jitter * mean(diag)`` to the diagonal (doubling) on failure."""
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    scale = jitter * max(float(np.mean(np.diag(matrix))), np.finfo(float).tiny)
    eye = np.eye(matrix.shape[0])
    for _ in range(tries):
        try:
            return np.linalg.cholesky(matrix + scale * eye)
        except np.linalg.LinAlgError:
            scale *= 2
    raise np.linalg.LinAlgError("Cholesky failed after jitter")


def unpack_params(x):
    """Map ``x`` to ``(mu, beta, tau2, phi)``; ``x`` has length ``2a + 2``."""
    x = np.asarray(x, dtype=float)
    a = (x.size - 2) // 2
    if x.size != 2 * a + 2:
        raise ValueError("parameter vector must have even length 2a + 2")
    return x[0], x[1 : a + 1], math.exp(x[a + 1]), np.exp(x[a + 2 :])


def pack_params(mu, beta, tau2, phi) -> np.ndarray:
    return np.concatenate([[mu], np.asarray(beta, float), [math.log(tau2)], np.log(phi)])


@dataclass
class GpDataset:
    z_points: np.ndarray
    y: np.ndarray
    n: int
    true_x: np.ndarray
    seed: int

    def __post_init__(self):
        self.z_points = np.asarray(self.z_points, dtype=float)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.true_x = np.asarray(self.true_x, dtype=float)
        if np.any((self.y < 0) | (self.y > self.n)):
            raise ValueError("counts must lie in [0, n]")

    @property
    def dim(self) -> int:
        return 2 * self.z_points.shape[1] + 2

    def to_json(self, path):
        payload = {
            "z_points": self.z_points.tolist(),
            "y": self.y.tolist(),
            "n": int(self.n),
            "true_x": self.true_x.tolist(),
            "seed": int(self.seed),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "GpDataset":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(**payload)


def simulate_dataset(true_x=CANONICAL_TRUE_X, n: int = 10, z_points=None, seed: int = 0) -> GpDataset:
    """Draw the latent field and the binomial counts at ``true_x``."""
    z = canonical_grid() if z_points is None else np.asarray(z_points, dtype=float)
    mu, beta, tau2, phi = unpack_params(true_x)
    rng = np.random.default_rng(seed)
    chol = jittered_cholesky(tau2 * correlation_matrix(z, phi))
    s = chol @ rng.standard_normal(z.shape[0])
    p = special.expit(s + mu + z @ beta)
    y = rng.binomial(n, p)
    return GpDataset(z, y, n, np.asarray(true_x, dtype=float), seed)


def transform_counts(y, n):
    """Empirical logits ``y*`` and precisions ``1/D_ii = y+ (1 - y+/n)``.

    Counts of 0 and ``n`` are moved half a trial inwards first.
    """
    y = np.asarray(y, dtype=float)
    y_plus = np.where(y == 0, 0.5, np.where(y == n, n - 0.5, y))
    y_star = special.logit(y_plus / n)
    d_inv = y_plus * (1 - y_plus / n)
    return y_star, d_inv


def conditional_moments(x, dataset: GpDataset, d_inv=None, prior_cov=None):
    """Mean and covariance of the Gaussian approximation to ``S | y*``.

    With ``K = tau2 R`` and ``P = diag(d_inv)`` this is
    ``Sigma_c = (P + K^-1)^-1`` and ``mu_c = Sigma_c P (y* - mu - Z beta)``,
    evaluated through ``B = I + P^1/2 K P^1/2`` whose Cholesky factor always
    exists; ``P = 0`` and ``K = 0`` are both handled. ``prior_cov`` may pass
    a precomputed ``K``.
    """
    mu, beta, tau2, phi = unpack_params(x)
    y_star, dinv_obs = transform_counts(dataset.y, dataset.n)
    d_inv = dinv_obs if d_inv is None else np.asarray(d_inv, dtype=float)
    K = tau2 * correlation_matrix(dataset.z_points, phi) if prior_cov is None else prior_cov
    root = np.sqrt(d_inv)
    B = np.eye(K.shape[0]) + root[:, None] * K * root[None, :]
    L = np.linalg.cholesky(B)
    V = linalg.solve_triangular(L, root[:, None] * K, lower=True)
    sigma_c = K - V.T @ V
    resid = y_star - mu - dataset.z_points @ beta
    mu_c = sigma_c @ (d_inv * resid)
    return mu_c, sigma_c


def _log_binomial_kernel(y, n, eta):
    # log-likelihood without binomial coefficients; eta is (m, l)
    return eta @ y - n * np.logaddexp(0.0, eta).sum(axis=-1)


def estimate_log_posterior(x, dataset: GpDataset, m: int, rng, nu: float = 20.0, jitter: float = 1e-10, proposal_draws=None) -> float:
    """One importance-sampling estimate of ``log pi(x | y)`` up to a constant.

    ``m`` latent fields are drawn from the multivariate Student-t proposal
    (``nu`` degrees of freedom) and weighted by prior times likelihood over
    proposal density; the log of the mean weight is added to the ``N(0, I)``
    log prior. Passing ``proposal_draws`` (shape ``(m, l)``) bypasses sampling.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    x = np.asarray(x, dtype=float)
    mu, beta, tau2, phi = unpack_params(x)
    z = dataset.z_points
    l = z.shape[0]
    log_prior_x = -0.5 * float(x @ x) - 0.5 * x.size * _LOG_2PI

    K = tau2 * correlation_matrix(z, phi)
    chol_k = jittered_cholesky(K, jitter)
    mu_c, sigma_c = conditional_moments(x, dataset, prior_cov=K)
    chol_c = jittered_cholesky(sigma_c, jitter)

    if proposal_draws is None:
        # scale mixture: Gaussian draw over sqrt(chi2_nu / nu)
        g = rng.standard_normal((m, l))
        mix = np.sqrt(rng.chisquare(nu, m) / nu)
        s = mu_c + (g @ chol_c.T) / mix[:, None]
    else:
        s = np.atleast_2d(np.asarray(proposal_draws, dtype=float))
        m = s.shape[0]

    u = linalg.solve_triangular(chol_c, (s - mu_c).T, lower=True)
    q = np.einsum("ij,ij->j", u, u)
    log_q = (
        special.gammaln(0.5 * (nu + l))
        - special.gammaln(0.5 * nu)
        - 0.5 * l * math.log(nu * math.pi)
        - np.log(np.diag(chol_c)).sum()
        - 0.5 * (nu + l) * np.log1p(q / nu)
    )
    v = linalg.solve_triangular(chol_k, s.T, lower=True)
    log_prior_s = -0.5 * np.einsum("ij,ij->j", v, v) - np.log(np.diag(chol_k)).sum() - 0.5 * l * _LOG_2PI

    eta = s + (mu + z @ beta)
    log_lik = _log_binomial_kernel(dataset.y.astype(float), dataset.n, eta)
    log_w = log_lik + log_prior_s - log_q
    return log_prior_x + float(special.logsumexp(log_w)) - math.log(m)


@dataclass(frozen=True)
class GpLogisticTarget:
    """:class:`~psmrwm.sampler.TargetEstimator` wrapping :func:`estimate_log_posterior`."""

    dataset: GpDataset
    m: int
    nu: float = 20.0
    jitter: float = 1e-10

    @property
    def dim(self) -> int:
        return self.dataset.dim

    def estimate_log_target(self, x, rng) -> float:
        return estimate_log_posterior(x, self.dataset, self.m, rng, self.nu, self.jitter)
