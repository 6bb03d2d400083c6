import json

import numpy as np
import pytest

from bctoeplitz import block_toeplitz as bt
from bctoeplitz.cli import main
from bctoeplitz.controls import Control
from bctoeplitz.errors import SolveFailure
from bctoeplitz.pipeline import (
    ExperimentConfig,
    bench,
    fit_exponent,
    flattening_mask,
    load_config,
    make_grid,
    make_velocity,
    run_bcp,
    run_forward,
    run_gram,
    run_solve,
    shortened_family,
    verify,
)

SMALL = dict(T=1.0, M=2, N=4, h=0.05)


def small(tmp_path, **kw):
    return ExperimentConfig(**{**SMALL, "out_dir": str(tmp_path), **kw})


# -- config

def test_load_yaml(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("T: 2.0\nM: 3\nlambda: 0.5\nvelocity: {kind: layered, top: 1.0, bottom: 2.0}\n"
                 "tolerances: {residual: 1.0e-9}\n")
    cfg = load_config(p, seed=7)
    assert cfg.T == 2.0 and cfg.M == 3 and cfg.lam == 0.5 and cfg.seed == 7
    assert cfg.tol["residual"] == 1e-9 and cfg.tol["finite_speed"] == 1e-6


def test_config_rejects_bad_values(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("bogus: 1\n")
    with pytest.raises(ValueError):
        load_config(p)
    for bad in (dict(lam=-1.0), dict(sigma=(1.0, 0.0)), dict(M=0), dict(T=0.0),
                dict(velocity={"kind": "fractal"}), dict(shortened=[2.0])):
        with pytest.raises(ValueError):
            ExperimentConfig(**{**SMALL, **bad})


@pytest.mark.parametrize("spec", [
    {"kind": "constant", "value": 2.0},
    {"kind": "layered"},
    {"kind": "gaussian"},
    {"kind": "formula", "expr": "1 + 0.1 * sin(pi * x) * exp(-y)"},
])
def test_velocity_profiles(spec):
    cfg = ExperimentConfig(**SMALL, velocity=spec)
    rho = make_velocity(cfg, make_grid(cfg))
    rho.check()
    assert np.all(np.isfinite(rho.rho))


def test_formula_has_no_builtins():
    cfg = ExperimentConfig(**SMALL, velocity={"kind": "formula", "expr": "__import__('os')"})
    with pytest.raises(NameError):
        make_velocity(cfg, make_grid(cfg))


def test_steps_override_scales_with_horizon():
    cfg = ExperimentConfig(**SMALL, steps_per_T=58)
    assert make_grid(cfg).steps_per_T == 58
    assert make_grid(cfg, 0.5).steps_per_T == 29


def test_flattening_mask(grid):
    tube, inner = flattening_mask(grid, 0.25)
    X, Y = np.meshgrid(grid.x, grid.y)
    assert np.all(inner <= tube)
    assert X[inner].min() == pytest.approx(0.25) and Y[inner].max() == pytest.approx(0.75)


# -- bcp

def test_scalar_system(tmp_path):
    cfg = small(tmp_path, M=1, N=1)
    rep = run_bcp(cfg)
    G = bt.load_binary(tmp_path / "gram.bin")
    B = np.loadtxt(tmp_path / "rhs.csv", delimiter=",", ndmin=1)
    C = np.loadtxt(tmp_path / "coeffs.csv", delimiter=",", ndmin=1)
    assert C[0] == pytest.approx(B[0] / G.blocks[0, 0, 0], rel=1e-15)
    assert rep.residual <= 1e-15


def test_desk_run_and_artifacts(tmp_path):
    cfg = ExperimentConfig(T=1.5, M=2, N=8, h=0.025, out_dir=str(tmp_path))
    rep = run_bcp(cfg)
    assert rep.residual <= 1e-8 and rep.path_agreement <= 1e-7
    assert rep.conditioning["n_negative"] == 2
    assert rep.flattening["interior_points"] > 1
    # every reported number is recomputable from the stored files
    G = bt.load_binary(tmp_path / rep.artifacts["G"])
    B = np.loadtxt(tmp_path / rep.artifacts["B"], delimiter=",")
    C = np.loadtxt(tmp_path / rep.artifacts["C"], delimiter=",")
    assert np.linalg.norm(C @ bt.expand_dense(G) - B) / np.linalg.norm(B) == pytest.approx(rep.residual, rel=0.5, abs=1e-15)
    u = np.loadtxt(tmp_path / rep.artifacts["u_T"], delimiter=",")
    grid = make_grid(cfg)
    _, inner = flattening_mask(grid, rep.flattening["shrink"])
    assert np.sqrt(np.mean((u[inner] - 1) ** 2)) == pytest.approx(rep.flattening["rms"], rel=1e-12)
    f = Control.from_csv(tmp_path / rep.artifacts["control"])
    assert f.horizon == pytest.approx(1.5)
    stored = json.loads((tmp_path / "report.json").read_text())
    assert stored["residual"] == rep.residual
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["M"] == 2 and man["N"] == 8 and man["eps"] == 0.5 and man["delta"] == 0.375


def test_dense_oracle_and_lambda(tmp_path):
    a = run_bcp(small(tmp_path / "a"))
    b = run_bcp(small(tmp_path / "b", dense_oracle=True))
    Ca = np.loadtxt(tmp_path / "a" / "coeffs.csv", delimiter=",")
    Cb = np.loadtxt(tmp_path / "b" / "coeffs.csv", delimiter=",")
    assert np.linalg.norm(Ca - Cb) / np.linalg.norm(Cb) <= 1e-7
    assert "time_levinson" not in b.timings and "time_dense" in b.timings
    c = run_bcp(small(tmp_path / "c", lam=1e-3))
    assert c.residual <= 1e-8 and c.conditioning["lambda"] == 1e-3


def test_solve_failure_is_wrapped(tmp_path):
    cfg = small(tmp_path)
    run_gram(cfg)
    bt.save_binary(tmp_path / "gram.bin", bt.BlockToeplitzSPD(np.zeros((4, 2, 2))))
    with pytest.raises(SolveFailure):
        run_solve(cfg)


def test_solve_from_artifacts(tmp_path):
    cfg = small(tmp_path)
    run_gram(cfg)
    res = run_solve(cfg)
    assert res["residual"] <= 1e-8
    assert (tmp_path / "solve.json").exists()


def test_flattening_improves_with_n(tmp_path):
    rms = [run_bcp(ExperimentConfig(T=1.5, M=2, N=n, h=0.025, out_dir=str(tmp_path / str(n))))
           .flattening["rms"] for n in (4, 8)]
    assert rms[1] < rms[0]


def test_deterministic_across_threads(tmp_path):
    for t in (1, 3):
        run_bcp(small(tmp_path / str(t), threads=t, M=3))
    for name in ("gram.bin", "gram.csv", "rhs.csv", "coeffs.csv", "control.csv", "u_T.csv", "manifest.json"):
        assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "3" / name).read_bytes(), name


def test_shortened_family(tmp_path):
    reps = shortened_family(small(tmp_path, shortened=[0.5, 1.0]))
    assert [r.T for r in reps] == [0.5, 1.0]
    lines = (tmp_path / "shortened.csv").read_text().splitlines()
    assert lines[0].startswith("T,") and len(lines) == 3


def test_forward_writes_traces(tmp_path):
    out = run_forward(small(tmp_path))
    assert len(out["traces"]) == 2
    tr = Control.from_csv(tmp_path / out["traces"][0])
    assert tr.horizon == pytest.approx(2.0)


# -- bench

def test_fit_exponent():
    assert fit_exponent([1, 2, 4], [3.0, 12.0, 48.0]) == pytest.approx(2.0)


def test_bench_small(tmp_path):
    cfg = ExperimentConfig(**SMALL, bench_M=2, bench_N=[4, 8, 16], bench_min_time=0.002, bench_rounds=3)
    t = bench(cfg, tmp_path)
    assert len(t.levinson) == 3 and all(v > 0 for v in t.levinson + t.dense)
    assert (tmp_path / "bench.csv").read_text().startswith("N,time_levinson,time_dense")


# -- verify

def test_verify_default_passes(tmp_path):
    rep = verify(small(tmp_path), tmp_path)
    assert rep.passed, rep.lines()
    names = {c.name for c in rep.checks}
    assert {"finite_speed", "adjoint_identity", "ct_symmetry", "ct_positivity", "ct_vs_oracle",
            "toeplitz_deviation", "levinson_vs_dense_gram"} <= names
    assert (tmp_path / "verify.txt").read_text().count("PASS") == len(rep.checks)


def test_verify_reports_cfl(tmp_path):
    rep = verify(small(tmp_path, steps_per_T=5))
    assert not rep.passed
    assert "CflViolation" in rep.by_name("cfl").detail


def test_verify_flags_perturbed_gram(tmp_path):
    rep = verify(small(tmp_path), inject_gram_fault=0.2)
    assert not rep.by_name("toeplitz_deviation").passed


def test_verify_variable_rho(tmp_path):
    rep = verify(small(tmp_path, velocity={"kind": "gaussian"}))
    assert rep.passed, rep.lines()


# -- cli

def write_cfg(tmp_path, extra=""):
    p = tmp_path / "cfg.yaml"
    p.write_text("T: 1.0\nM: 2\nN: 4\nh: 0.05\nbench_M: 2\nbench_N: [4, 8]\nbench_min_time: 0.002\nbench_rounds: 2\n" + extra)
    return p


@pytest.mark.parametrize("cmd", ["forward", "gram", "verify", "bench"])
def test_cli_commands(tmp_path, cmd, capsys):
    assert main([cmd, "--config", str(write_cfg(tmp_path)), "--out", str(tmp_path / "o")]) == 0
    assert capsys.readouterr().out


def test_cli_gram_then_solve(tmp_path, capsys):
    cfg = str(write_cfg(tmp_path))
    out = str(tmp_path / "o")
    assert main(["gram", "--config", cfg, "--out", out]) == 0
    assert main(["solve", "--config", cfg, "--out", out, "--lambda", "0.001", "--dense-oracle"]) == 0
    res = json.loads((tmp_path / "o" / "solve.json").read_text())
    assert res["path"] == "dense" and res["lambda"] == 0.001


def test_cli_all(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["all", "--config", str(write_cfg(tmp_path)), "--out", str(out), "--threads", "2",
                 "--seed", "3"]) == 0
    for name in ("report.json", "verify.txt", "bench.csv", "gram.bin", "traces"):
        assert (out / name).exists()


def test_cli_broken_cfl_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "steps_per_T: 5\n")
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "CflViolation" in capsys.readouterr().out
    assert main(["gram", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_cli_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("M: 0\n")
    assert main(["gram", "--config", str(p)]) == 2
    assert "error" in capsys.readouterr().err
