"""Acceptance criteria 1-10, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
printed even when output capture is on.
"""

import math
import time

import numpy as np
import pytest

from oracles import fd_gradient, energy_direct, linear_moments, linear_step, mode_eigenvalue
from splap.cli import main
from splap.driver import InitSpec, NoiseSpec, SimConfig, check_energy_per_step, solve_additive
from splap.grid import Grid
from splap.mc import inequality_report, mean_se, run_ensemble, run_picard_ensemble, run_sweep_ensemble
from splap.multiplicative import PicardConfig
from splap.plap import PLaplaceParams, flux, p_laplacian
from splap.step import StepProblem, objective, residual, solve_step

pytestmark = pytest.mark.slow

SMOOTH = InitSpec("random_smooth")


@pytest.fixture
def say(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}")

    return emit


def ensemble_cfg(p):
    return SimConfig(dim=1, n=32, p=p, T=1.0, steps=50, init=SMOOTH, seed=0)


_ENSEMBLES = {}


def ensemble(p):
    """Shared by criteria 5 and 6; returns (stats, wall seconds)."""
    if p not in _ENSEMBLES:
        t0 = time.perf_counter()
        st = run_ensemble(ensemble_cfg(p), 200, 0)
        _ENSEMBLES[p] = (st, time.perf_counter() - t0)
    return _ENSEMBLES[p]


def test_criterion_01_adjoint_and_gradient(say):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    adj = 0.0
    for d, n in ((1, 32), (2, 16), (2, 32)):
        g = Grid(d, n)
        for _ in range(10):
            u = rng.standard_normal(g.shape)
            F = rng.standard_normal((d,) + g.shape)
            a = g.inner(g.grad(u), F)
            adj = max(adj, abs(a + g.inner(u, g.div(F))) / abs(a))
    grad_err = 0.0
    exps = (1.5, 2.0, 3.0, 4.0)
    for i in range(50):
        d, n = (1, 32) if i % 2 == 0 else (2, 8)
        g = Grid(d, n)
        p = exps[i % len(exps)]
        u = rng.standard_normal(g.shape)
        analytic = -p_laplacian(u, g, PLaplaceParams(p)) * g.cell_volume
        fd = fd_gradient(lambda v: energy_direct(v, g.h, p), u)
        grad_err = max(grad_err, np.linalg.norm(fd - analytic) / np.linalg.norm(analytic))
    wall = time.perf_counter() - t0
    ok = adj <= 1e-12 and grad_err <= 1e-5 and wall < 10
    say(1, ok, f"adjoint defect {adj:.1e} (<=1e-12), FD gradient rel err {grad_err:.1e} (<=1e-5), {wall:.1f}s (<10s)")
    assert ok


def test_criterion_02_flux_monotone(say):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    g = Grid(2, 8)
    worst = math.inf
    for p in (1.3, 2.0, 4.0):
        prm = PLaplaceParams(p)
        for _ in range(1000):
            scale = 10 ** rng.uniform(-3, 2)
            u, v = rng.standard_normal((2,) + g.shape) * scale
            a, b = g.grad(u), g.grad(v)
            worst = min(worst, g.inner(flux(a, prm) - flux(b, prm), a - b))
    wall = time.perf_counter() - t0
    ok = worst >= -1e-12 and wall < 10
    say(2, ok, f"min pairing {worst:.3e} over 3x1000 pairs (>= -1e-12), {wall:.1f}s (<10s)")
    assert ok


def test_criterion_03_step_solver(say):
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    lin_err = 0.0
    for d, n, tau in ((1, 32, 0.05), (1, 64, 1.0), (2, 16, 0.1), (2, 32, 0.01)):
        g = Grid(d, n)
        f = rng.standard_normal(g.shape)
        v, _ = solve_step(StepProblem(f, tau, g, PLaplaceParams(2.0), tol=1e-12))
        exact = linear_step(f, tau, g.h)
        lin_err = max(lin_err, g.norm_l2(v - exact) / g.norm_l2(exact))
    opt_ok = True
    worst_res = 0.0
    for d, n in ((1, 8), (2, 8)):
        g = Grid(d, n)
        f = rng.standard_normal(g.shape)
        prob = StepProblem(f, 0.5, g, PLaplaceParams(4.0), tol=1e-10)
        v, _ = solve_step(prob)
        r = g.norm_l2(residual(v, prob))
        worst_res = max(worst_res, r / prob.target)
        J = objective(v, prob)
        opt_ok &= r <= prob.target
        opt_ok &= all(objective(v + 1e-3 * rng.standard_normal(g.shape), prob) >= J for _ in range(100))
    wall = time.perf_counter() - t0
    ok = lin_err <= 1e-8 and opt_ok and wall < 30
    say(3, ok, f"p=2 vs Fourier rel err {lin_err:.1e} (<=1e-8); p=4 residual/target {worst_res:.2f}, 100-direction minimality {'held' if opt_ok else 'failed'}; {wall:.1f}s (<30s)")
    assert ok


def test_criterion_04_tested_identity(say):
    t0 = time.perf_counter()
    worst = 0.0
    ok = True
    for p in (1.5, 2.0, 3.0):
        cfg = SimConfig(dim=1, n=64, p=p, T=1.0, steps=50, init=SMOOTH)
        tr = solve_additive(cfg, cfg.sample_path(0))
        chk = check_energy_per_step(tr, cfg.additive_noise())
        ok &= chk.identity_ok
        worst = max(worst, float(np.max(np.abs(chk.identity_residual) / chk.identity_bound)))
    wall = time.perf_counter() - t0
    ok = ok and wall < 60
    say(4, ok, f"worst residual / (100 tol (1+|f|) |u|) = {worst:.2e} over 3x50 steps (<=1), {wall:.1f}s (<60s)")
    assert ok


def linear_oracle(cfg):
    """Per-mode second moments for the p = 2 ensemble configuration."""
    g = cfg.grid
    M = cfg.modes
    # real trig modes ordered const, (cos, sin) at k = 1, 2, ...
    ks = [0] + [j for j in range(1, (g.n - 1) // 2 + 1) for _ in range(2)]
    ks = ks[:M]
    lams = np.array([mode_eigenvalue((k,), g.n, g.h) for k in ks])
    noise_var = (cfg.noise.amplitude * np.arange(1, M + 1) ** -cfg.noise.gamma) ** 2
    init_var = np.zeros(M)
    init_var[:16] = (cfg.init.amplitude / np.arange(1, 17)) ** 2
    return linear_moments(lams, init_var, noise_var, cfg.tau, cfg.steps)


def test_criterion_05_ensemble_energy(say):
    verdicts, lines, wall = [], [], 0.0
    for p in (1.5, 3.0, 2.0):
        st, secs = ensemble(p)
        wall += secs
        rep = inequality_report(st)
        for name in ("per_step_energy", "cumulative_energy"):
            it = rep[name]
            verdicts.append(it.passed)
            lines.append(f"p={p:g} {name} margin {it.margin:.3g} se {it.se:.2g}")
    st, _ = ensemble(2.0)
    l2_or, g2_or = linear_oracle(ensemble_cfg(2.0))
    tau = st.tau
    m_end, se_end = mean_se(st.ledgers["l2_sq"][:, -1])
    m_dis, se_dis = mean_se(tau * st.ledgers["grad_pp"][:, 1:].sum(axis=1))
    z_end = abs(m_end - l2_or[-1]) / se_end
    z_dis = abs(m_dis - tau * g2_or[1:].sum()) / se_dis
    oracle_ok = z_end <= 3 and z_dis <= 3
    ok = all(verdicts) and oracle_ok and wall < 300
    lines.append(f"p=2 oracle |z| for E|u^N|^2 {z_end:.2f}, for tau sum E|grad u|^2 {z_dis:.2f} (<=3)")
    say(5, ok, "; ".join(lines) + f"; {wall:.0f}s for 3x200 paths (<300s)")
    assert ok


def test_criterion_06_increment_sum(say):
    lines, ok = [], True
    for p in (1.5, 3.0):
        st, _ = ensemble(p)
        it = inequality_report(st)["increment_sum"]
        ok &= it.passed
        lines.append(f"p={p:g} E sum |du|^2 = {it.lhs:.4g} vs (16/3)C_Phi + (4/3)E|u0|^2 = {it.rhs:.4g} (se {it.se:.2g})")
    say(6, ok, "; ".join(lines))
    assert ok


def test_criterion_07_nonexpansive(say):
    t0 = time.perf_counter()
    worst, ok = -math.inf, True
    for p in (1.5, 3.0):
        cfg = ensemble_cfg(p)
        other = cfg.replace(seed=1)
        for i in range(20):
            path = cfg.sample_path(i)
            a = solve_additive(cfg, path, keep_fields=True)
            b = solve_additive(cfg, path, u0=other.initial_field(i), keep_fields=True)
            gaps = np.sqrt(np.sum((a.fields - b.fields) ** 2, axis=1) * cfg.grid.cell_volume)
            slack = 20 * cfg.tol * (1 + max(a.ledger["f_norm"].max(), b.ledger["f_norm"].max()))
            rise = float(np.max(np.diff(gaps)))
            worst = max(worst, rise / slack)
            ok &= rise <= slack
    wall = time.perf_counter() - t0
    ok = ok and wall < 120
    say(7, ok, f"largest per-step increase of |u1-u2| is {worst:.2e} x slack (<=1) over 2x20 pairs, {wall:.1f}s (<120s)")
    assert ok


def test_criterion_08_picard_contraction(say):
    t0 = time.perf_counter()
    noise = NoiseSpec("multiplicative", profile="identity")
    base = SimConfig(dim=1, n=32, p=1.5, T=1.0, steps=20, noise=noise, init=SMOOTH, seed=0)
    pc = PicardConfig.from_sim(base, picard_tol=1e-6)
    out = run_picard_ensemble(pc, 100, 0)
    wall = time.perf_counter() - t0
    ratio = out["median_ratio"]
    res = float(np.max(out["fixed_point_residuals"]))
    ok = pc.L / pc.weight == 0.5 and ratio <= 0.6 and res <= 2 * pc.picard_tol and wall < 600
    say(8, ok, f"L/alpha = {pc.L / pc.weight:g}, median fitted ratio {ratio:.3g} (<=0.6), max fixed-point residual {res:.2e} (<= {2 * pc.picard_tol:g}), {wall:.0f}s (<600s)")
    assert ok


def test_criterion_09_viscosity_sweep(say):
    t0 = time.perf_counter()
    eps = (0.5, 0.25, 0.125, 0.0625)
    lines, ok = [], True
    for p in (1.5, 3.0):
        cfg = SimConfig(dim=1, n=32, p=p, T=1.0, steps=20, init=SMOOTH, seed=0)
        out = run_sweep_ensemble(cfg, eps, 100, 0)
        frac = out["decreasing_fraction"]
        bounds = [it for it in out["checks"].items if it.name.startswith("bound_quantity")]
        ok &= frac >= 0.9 and all(it.passed for it in bounds)
        worst = max(bounds, key=lambda it: it.lhs)
        lines.append(f"p={p:g} D(eps) decreasing on {100 * frac:.0f}% of paths (>=90%), max mean bound quantity {worst.lhs:.4g} vs (C1/2)^((p-1)/p) = {out['bound_limit']:.4g}")
    wall = time.perf_counter() - t0
    ok = ok and wall < 600
    say(9, ok, "; ".join(lines) + f"; {wall:.0f}s (<600s)")
    assert ok


def test_criterion_10_determinism(say, tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "ens.cfg"
    cfg.write_text(
        "dim = 1\nn = 32\np = 1.5\nT = 1.0\nsteps = 20\npaths = 48\nseed = 9\n"
        "[noise]\nkind = additive\nspectrum = power 1.0\n[init]\nkind = random_smooth\n"
    )
    blobs = []
    for run, workers in (("a", 1), ("b", 1), ("c", 8)):
        code = main(["ensemble", "--config", str(cfg), "--out", str(tmp_path / run), "--workers", str(workers), "--quiet"])
        assert code in (0, 1)
        blobs.append((tmp_path / run / "ledger.csv").read_bytes())
    wall = time.perf_counter() - t0
    ok = blobs[0] == blobs[1] == blobs[2] and wall < 300
    say(10, ok, f"ledger.csv identical across runs with 1, 1 and 8 workers ({len(blobs[0])} bytes, 48 paths x 21 rows), {wall:.0f}s (<300s)")
    assert ok
