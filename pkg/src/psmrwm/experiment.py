"""Scaling-by-sample-size efficiency study on the GP logistic target."""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._io import fmt
from . import diagnostics
from .gp_target import GpDataset, GpLogisticTarget, simulate_dataset
from .noise import make_noise
from .sampler import (
    ChainConfig,
    derive_seed,
    run_chain,
    standard_normal_log_density,
    synthetic_noise_target,
)

__all__ = [
    "DEFAULT_LAMBDAS",
    "DEFAULT_MS",
    "ExperimentConfig",
    "PilotResult",
    "CellResult",
    "GridResult",
    "pilot_run",
    "run_cell",
    "run_grid_experiment",
]

DEFAULT_LAMBDAS = (0.2, 0.4, 0.6, 0.7, 0.8, 1.0, 1.2, 1.4, 1.6)
DEFAULT_MS = (10, 20, 40, 100, 200, 400, 1000)


@dataclass
class ExperimentConfig:
    """Flat, JSON-serializable description of a grid study.

    ``mode="gp"`` runs the GP logistic target (dataset from ``dataset`` or
    simulated with ``data_seed``). ``mode="synthetic"`` runs a ``dim``-variate
    standard normal with additive noise ``noise`` (e.g.
    ``{"kind": "gaussian", "sigma": 1.0}``; ``{"kind": "none"}`` is the exact
    target), ``v_hat = I`` and no pilot; ``m`` is then only a label.
    """

    mode: str = "gp"
    noise: dict | None = None
    dim: int = 10
    lambda_list: list = field(default_factory=lambda: list(DEFAULT_LAMBDAS))
    m_list: list = field(default_factory=lambda: list(DEFAULT_MS))
    iters: int = 20_000
    max_iters: int | None = None
    min_ess_floor: float = 1000.0
    seed: int = 2016
    dataset: str | None = None
    data_seed: int = 1
    pilot_m: int = 200
    pilot_iters: int = 20_000
    pilot_lam: float = 0.7
    noise_reps: int = 500
    discard_frac: float = 0.1
    timer: str = "cpu"
    timing: bool = True
    workers: int | None = None
    output_dir: str = "out"

    def __post_init__(self):
        if not self.lambda_list or not self.m_list:
            raise ValueError("lambda_list and m_list must be non-empty")
        if self.iters <= 0:
            raise ValueError("iters must be positive")
        if self.mode not in ("gp", "synthetic"):
            raise ValueError("mode must be 'gp' or 'synthetic'")
        if self.timer not in ("cpu", "wall"):
            raise ValueError("timer must be 'cpu' or 'wall'")

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        with open(path) as fh:
            data = json.load(fh)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    @property
    def budget(self) -> int:
        return self.iters if self.max_iters is None else max(self.max_iters, self.iters)


@dataclass
class PilotResult:
    v_hat: np.ndarray
    posterior_mean: np.ndarray
    acceptance_rate: float

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(
                {
                    "v_hat": self.v_hat.tolist(),
                    "posterior_mean": self.posterior_mean.tolist(),
                    "acceptance_rate": self.acceptance_rate,
                },
                fh,
                indent=1,
            )
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "PilotResult":
        with open(path) as fh:
            d = json.load(fh)
        return cls(np.array(d["v_hat"]), np.array(d["posterior_mean"]), d["acceptance_rate"])


def pilot_run(dataset: GpDataset, m: int = 200, iters: int = 20_000, lam: float = 0.7, seed: int = 0, x0=None) -> PilotResult:
    """Trial chain with ``v_hat = I`` and scale ``lam / sqrt(d)``.

    Returns the sample covariance and mean of the second half.
    """
    d = dataset.dim
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    cfg = ChainConfig(lam / np.sqrt(d), np.eye(d), iters, seed, x0)
    res = run_chain(cfg, GpLogisticTarget(dataset, m))
    half = res.chain[iters // 2 :]
    return PilotResult(np.cov(half, rowvar=False), half.mean(axis=0), res.acceptance_rate)


@dataclass
class CellResult:
    m: int
    lam: float
    iters: int
    min_ess: float
    accept_rate: float
    wall_seconds: float
    cpu_seconds: float
    budget_exhausted: bool

    def seconds(self, timer: str) -> float:
        return self.cpu_seconds if timer == "cpu" else self.wall_seconds


def run_cell(target, v_hat, x0, m, lam, iters, seed, min_ess_floor=0.0, budget=None, discard_frac=0.1) -> CellResult:
    """One grid cell: rerun with doubled length until min-ESS reaches the floor or the budget."""
    budget = iters if budget is None else budget
    n = iters
    while True:
        res = run_chain(ChainConfig(lam, v_hat, n, seed, x0), target)
        discard = int(discard_frac * n)
        report = diagnostics.ess_report(res.chain, discard)
        done = report.min_ess >= min_ess_floor
        if done or 2 * n > budget:
            break
        n *= 2
    return CellResult(
        m, lam, n, report.min_ess,
        diagnostics.acceptance_rate(res.accept_flags, discard),
        res.wall_seconds, res.cpu_seconds, not done,
    )


def _run_cell_args(args):
    return run_cell(*args)


@dataclass
class GridResult:
    table: diagnostics.EfficiencyTable
    cells: list
    pilot: PilotResult | None
    noise: list
    dataset: GpDataset | None


def run_grid_experiment(config: ExperimentConfig, write: bool = True) -> GridResult:
    """Run the full ``lambda x m`` study.

    GP mode: load or simulate the dataset, run the pilot for ``v_hat`` and a
    reference point, measure the noise at that point for every ``m``, then
    run one chain per grid cell (in parallel when ``workers > 1``) and
    normalize ESS per second into ESS* and ESS**. Results are assembled in
    grid order, independent of completion order.
    """
    if config.mode == "synthetic":
        params = dict(config.noise or {"kind": "none"})
        base = synthetic_noise_target(standard_normal_log_density,
                                      make_noise(params.pop("kind"), **params), config.dim)
        dataset, pilot = None, None
        v_hat, x0 = np.eye(config.dim), np.zeros(config.dim)
        make_target = lambda m: base  # noqa: E731
    else:
        if config.dataset:
            dataset = GpDataset.from_json(config.dataset)
        else:
            dataset = simulate_dataset(seed=config.data_seed)
        pilot = pilot_run(dataset, config.pilot_m, config.pilot_iters, config.pilot_lam,
                          derive_seed(config.seed, "pilot"))
        v_hat, x0 = pilot.v_hat, pilot.posterior_mean
        make_target = lambda m: GpLogisticTarget(dataset, m)  # noqa: E731
    noise = diagnostics.noise_study(make_target, x0, config.m_list, config.noise_reps,
                                    derive_seed(config.seed, "noise"))
    noise_var = {row.m: row.variance for row in noise}

    jobs = []
    for m in config.m_list:
        for lam in config.lambda_list:
            jobs.append((make_target(m), v_hat, x0, m, lam, config.iters,
                         derive_seed(config.seed, (m, lam)), config.min_ess_floor,
                         config.budget, config.discard_frac))
    workers = config.workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_run_cell_args, jobs))
    else:
        cells = [run_cell(*job) for job in jobs]

    table = diagnostics.relative_efficiencies(
        {(c.m, c.lam): (c.min_ess, c.seconds(config.timer), c.accept_rate, noise_var[c.m])
         for c in cells}
    )
    result = GridResult(table, cells, pilot, noise, dataset)
    if write:
        write_grid_outputs(result, config.output_dir, config.timing)
    return result


def write_grid_outputs(result: GridResult, out_dir, timing: bool = True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.table.to_csv(out / "efficiency.csv", timing)
    if result.pilot is not None:
        result.pilot.to_json(out / "pilot.json")
    diagnostics.write_kde_csv(out / "noise_kde.csv", result.noise)
    with open(out / "noise_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["m", "variance", "skewness"])
        for r in result.noise:
            writer.writerow([r.m, fmt(r.variance), fmt(r.skewness)])
    with open(out / "cells.csv", "w", newline="") as fh:
        fields = list(asdict(result.cells[0]))
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for c in result.cells:
            row = asdict(c)
            if not timing:
                row["wall_seconds"] = row["cpu_seconds"] = ""
            writer.writerow(row)
