import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from psmrwm import cli, theory
from psmrwm.experiment import DEFAULT_LAMBDAS, DEFAULT_MS, ExperimentConfig, run_grid_experiment


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(args):
    return cli.main([str(a) for a in args])


def test_module_entry_point(tmp_path):
    out = tmp_path / "opt.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "psmrwm", "theory", "optimal", "--noise", "none", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    (row,) = read_csv(out)
    assert float(row["ell_hat"]) == pytest.approx(2.3812, abs=1e-3)


def test_theory_curve(tmp_path):
    out = tmp_path / "curve.csv"
    assert run(["theory", "curve", "--noise", "gaussian", "--sigma", 1, "--lmin", 0.5, "--lmax", 5, "--steps", 10, "--out", out]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["ell", "j"] and len(rows) == 10
    assert float(rows[0]["ell"]) == 0.5


def test_theory_curve_stdout(capsys):
    assert run(["theory", "curve", "--noise", "laplace", "--scale", 0.3, "--steps", 5]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "ell,j" and len(lines) == 6


def test_theory_scan(tmp_path):
    out = tmp_path / "scan.csv"
    assert run(["theory", "scan-twopoint", "--grid", 5, "--out", out]) == 0
    rows = read_csv(out)
    assert len(rows) == 25 and list(rows[0]) == ["eps", "pstar", "ell_hat"]


def test_theory_certify_suite(tmp_path):
    out = tmp_path / "certificate.csv"
    assert run(["theory", "certify", "--out", out]) == 0
    rows = read_csv(out)
    assert [r["noise"] for r in rows] == [c.describe() for c in cli.CERTIFY_SUITE]
    assert all(r["passed"] == "True" for r in rows)


def test_theory_certify_single_stdout(capsys):
    assert run(["theory", "certify", "--single", "--noise", "laplace", "--scale", 0.3]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and lines[1].startswith("Laplace(scale=0.3),")


def test_theory_certify_nonzero_on_failure(tmp_path, monkeypatch):
    real = theory.certify_theorem

    def broken(noise, **kw):
        cert = real(noise, **kw)
        cert.violations.append(("injected",))
        return cert

    monkeypatch.setattr(theory, "certify_theorem", broken)
    assert run(["theory", "certify", "--out", tmp_path / "c.csv"]) == 1


def test_verify_lemma(tmp_path):
    out = tmp_path / "lemma.csv"
    assert run(["verify-lemma", "--tol", 1e-5, "--out", out]) == 0
    rows = {r["check"]: r["value"] for r in read_csv(out)}
    assert rows["passed"] == "True"
    assert run(["verify-lemma", "--tol", 1e-12, "--out", out]) == 1


def test_sample_synthetic_byte_identical(tmp_path):
    args = ["sample", "synthetic", "--d", 10, "--sigma", 1.0, "--ell", 2.38, "--iters", 2000, "--seed", 4]
    assert run(args + ["--out", tmp_path / "a.csv", "--save-chain", tmp_path / "ca.csv"]) == 0
    assert run(args + ["--out", tmp_path / "b.csv", "--save-chain", tmp_path / "cb.csv"]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "ca.csv").read_bytes() == (tmp_path / "cb.csv").read_bytes()
    (row,) = read_csv(tmp_path / "a.csv")
    assert 0 < float(row["accept_rate"]) < 1


def test_gp_commands(tmp_path):
    data = tmp_path / "data.json"
    assert run(["gp", "simulate", "--seed", 1, "--out", data]) == 0
    payload = json.loads(data.read_text())
    assert len(payload["y"]) == 81 and payload["seed"] == 1

    args = ["gp", "run", "--data", data, "--lambda", 0.2, "--m", 10, "--iters", 300, "--seed", 2, "--no-timing"]
    assert run(args + ["--out", tmp_path / "r1.csv", "--save-chain", tmp_path / "chain.csv"]) == 0
    assert run(args + ["--out", tmp_path / "r2.csv"]) == 0
    assert (tmp_path / "r1.csv").read_bytes() == (tmp_path / "r2.csv").read_bytes()
    header = (tmp_path / "chain.csv").read_text().splitlines()[0]
    assert header == ",".join([f"x{i}" for i in range(1, 11)] + ["log_estimate", "accepted"])

    nd = tmp_path / "noise"
    assert run(["gp", "noise-study", "--data", data, "--m-list", 10, 40, 160, "--reps", 100, "--out-dir", nd]) == 0
    rows = read_csv(nd / "noise_summary.csv")
    assert [int(r["m"]) for r in rows] == [10, 40, 160]
    assert float(rows[0]["variance"]) > float(rows[2]["variance"])
    assert read_csv(nd / "noise_kde.csv")[0].keys() == {"m", "w", "density"}


def test_gp_grid_synthetic_byte_identical(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "mode": "synthetic", "noise": {"kind": "gaussian", "sigma": 1.0}, "dim": 5,
        "lambda_list": [0.5, 1.0], "m_list": [1, 2], "iters": 2000, "min_ess_floor": 0,
        "noise_reps": 100, "seed": 9,
    }))
    for name in ["a", "b"]:
        assert run(["gp", "grid", "--config", config, "--out-dir", tmp_path / name, "--workers", 1, "--no-timing"]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["cells.csv", "efficiency.csv", "noise_kde.csv", "noise_summary.csv"]
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    rows = read_csv(tmp_path / "a" / "efficiency.csv")
    assert [(r["m"], r["lambda"]) for r in rows] == [("1", "0.5"), ("1", "1.0"), ("2", "0.5"), ("2", "1.0")]


# -- experiment harness ------------------------------------------------------------


def test_config_defaults_and_validation(tmp_path):
    cfg = ExperimentConfig()
    assert cfg.lambda_list == list(DEFAULT_LAMBDAS) == [0.2, 0.4, 0.6, 0.7, 0.8, 1.0, 1.2, 1.4, 1.6]
    assert cfg.m_list == list(DEFAULT_MS) == [10, 20, 40, 100, 200, 400, 1000]
    assert cfg.min_ess_floor == 1000
    with pytest.raises(ValueError):
        ExperimentConfig(lambda_list=[])
    with pytest.raises(ValueError):
        ExperimentConfig(iters=0)
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"iters": 50}))
    assert ExperimentConfig.from_json(path, seed=3, workers=None).iters == 50


def test_exact_target_single_cell():
    cfg = ExperimentConfig(mode="synthetic", lambda_list=[0.7], m_list=[1], iters=3000,
                           min_ess_floor=0, noise_reps=100, workers=1)
    res = run_grid_experiment(cfg, write=False)
    (row,) = res.table.rows
    assert row.ess_star == row.ess_starstar == 1.0
    assert res.noise[0].degenerate


def test_cell_doubles_until_floor():
    cfg = ExperimentConfig(mode="synthetic", dim=2, lambda_list=[1.0], m_list=[1], iters=500,
                           max_iters=64_000, min_ess_floor=2000, noise_reps=100, workers=1)
    (cell,) = run_grid_experiment(cfg, write=False).cells
    assert cell.iters > 500 and cell.iters % 500 == 0
    assert cell.min_ess >= 2000 and not cell.budget_exhausted


def test_cell_flagged_when_budget_exhausted():
    cfg = ExperimentConfig(mode="synthetic", dim=2, lambda_list=[1.0], m_list=[1], iters=500,
                           max_iters=1000, min_ess_floor=10**6, noise_reps=100, workers=1)
    (cell,) = run_grid_experiment(cfg, write=False).cells
    assert cell.budget_exhausted and cell.iters == 1000


def test_parallel_matches_serial():
    base = dict(mode="synthetic", noise={"kind": "laplace", "scale": 0.5}, dim=3,
                lambda_list=[0.6, 1.2], m_list=[1, 5], iters=1500, min_ess_floor=0, noise_reps=100)
    serial = run_grid_experiment(ExperimentConfig(workers=1, **base), write=False)
    parallel = run_grid_experiment(ExperimentConfig(workers=2, **base), write=False)
    assert [(c.m, c.lam, c.min_ess, c.accept_rate) for c in serial.cells] == \
        [(c.m, c.lam, c.min_ess, c.accept_rate) for c in parallel.cells]


def test_cost_grows_with_m():
    from psmrwm.experiment import run_cell
    from psmrwm.gp_target import GpLogisticTarget, simulate_dataset

    ds = simulate_dataset(seed=1)
    x0 = np.zeros(10)
    cheap = run_cell(GpLogisticTarget(ds, 10), np.eye(10), x0, 10, 0.2, 200, 0)
    dear = run_cell(GpLogisticTarget(ds, 1000), np.eye(10), x0, 1000, 0.2, 200, 0)
    assert dear.cpu_seconds > cheap.cpu_seconds
