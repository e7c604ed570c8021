"""Reduced efficiency grid for the GP logistic-regression posterior.

Simulates the canonical dataset, runs a pilot, then one chain per (m, lambda)
cell and prints the relative efficiencies and the log-noise summary. Takes a
few minutes on one core; outputs land in ``demo_out/``.

    python3 demos/gp_desk_study.py
"""

from psmrwm.experiment import ExperimentConfig, run_grid_experiment

config = ExperimentConfig(
    lambda_list=[0.4, 0.8, 1.2],
    m_list=[20, 100],
    iters=5000,
    pilot_iters=5000,
    min_ess_floor=0,
    noise_reps=500,
    output_dir="demo_out",
)
result = run_grid_experiment(config)

print(f"{'m':>5}{'lambda':>8}{'min ESS':>10}{'ESS/s':>10}{'ESS*':>8}{'ESS**':>8}")
for row in result.table.rows:
    print(f"{row.m:5d}{row.lam:8.2f}{row.min_ess:10.1f}{row.ess_per_s:10.2f}{row.ess_star:8.3f}{row.ess_starstar:8.3f}")
print()
for row in result.noise:
    print(f"m={row.m}: log-noise variance {row.variance:.3f}, skewness {row.skewness:.3f}")
