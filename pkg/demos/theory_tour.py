"""Limiting efficiency J(ell) under several noise models.

Prints the optimal scaling and acceptance rate for each model, the ratio of
J at the no-noise optimum to the best achievable J, and a small TwoPoint scan.

    python3 demos/theory_tour.py
"""

import numpy as np

from psmrwm import Gaussian, Laplace, NoNoise, TwoPoint, j_esjd, optimal_scaling
from psmrwm.theory import acceptance_limit, ell_hat_infty, twopoint_scan

models = [NoNoise(), Gaussian(0.5), Gaussian(1.0), Gaussian(2.0), Laplace(0.3), Laplace(0.6), TwoPoint(0.2, 0.5)]
ell_inf = ell_hat_infty()

print(f"{'noise':<36}{'ell_hat':>9}{'J_max':>9}{'accept':>9}{'J(2.38)/J_max':>15}")
for noise in models:
    ell, j_max = optimal_scaling(noise)
    ratio = j_esjd(noise, ell_inf) / j_max
    print(f"{noise.describe():<36}{ell:9.4f}{j_max:9.4f}{acceptance_limit(noise, ell):9.4f}{ratio:15.4f}")

# optimal ell over a coarse TwoPoint grid: every entry sits just above 2.38
grid = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
table = twopoint_scan(grid, grid)
print("\nTwoPoint ell_hat (rows epsilon, columns p*)")
print("       " + "".join(f"{p:8.1f}" for p in grid))
for eps, row in zip(grid, table):
    print(f"{eps:7.1f}" + "".join(f"{v:8.4f}" for v in row))
