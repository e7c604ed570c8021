"""Pseudo-marginal RWM on N(0, I_d) with additive Gaussian log-noise.

Runs one chain per scaling and compares the empirical acceptance rate and
squared jump with their limiting values.

    python3 demos/synthetic_chain.py
"""

import numpy as np

from psmrwm import ChainConfig, Gaussian, j_esjd, run_chain, scaling_from_ell, synthetic_noise_target
from psmrwm.sampler import standard_normal_log_density
from psmrwm.theory import acceptance_limit

d, iters, burn = 50, 200_000, 20_000
noise = Gaussian(1.0)
target = synthetic_noise_target(standard_normal_log_density, noise, d)

print(f"{'ell':>6}{'accept':>9}{'limit':>9}{'sq jump':>10}{'J':>9}")
for i, ell in enumerate([1.5, 2.0, 2.46, 3.0]):
    x0 = np.random.default_rng(i).standard_normal(d)
    res = run_chain(ChainConfig(scaling_from_ell(ell, d), np.eye(d), iters, i, x0), target, keep_chain=False)
    acc = res.accept_flags[burn:].mean()
    jump = res.sq_jumps[burn:].mean()
    print(f"{ell:6.2f}{acc:9.4f}{acceptance_limit(noise, ell):9.4f}{jump:10.4f}{j_esjd(noise, ell):9.4f}")
