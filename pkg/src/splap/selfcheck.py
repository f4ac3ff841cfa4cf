"""Quick invariant suite on tiny grids, used by the ``check`` CLI verb."""

from __future__ import annotations

import numpy as np

from .driver import InitSpec, SimConfig, check_energy_per_step, solve_additive
from .grid import Grid
from .mc import inequality_report, run_ensemble
from .plap import PLaplaceParams, energy, flux, p_laplacian
from .step import StepProblem, solve_step

__all__ = ["run_checks"]


def _adjoint(rng):
    worst = 0.0
    for d, n in ((1, 16), (2, 8)):
        g = Grid(d, n)
        u = rng.standard_normal(g.shape)
        F = rng.standard_normal((d,) + g.shape)
        a, b = g.inner(g.grad(u), F), -g.inner(u, g.div(F))
        worst = max(worst, abs(a - b) / max(abs(a), 1e-300))
    return worst <= 1e-12, f"max relative defect {worst:.2e}"


def _energy_gradient(rng):
    worst = 0.0
    g = Grid(1, 12)
    for p, delta in ((1.5, 0.1), (3.0, 0.0)):
        prm = PLaplaceParams(p, delta)
        u = rng.standard_normal(g.shape)
        analytic = -p_laplacian(u, g, prm) * g.cell_volume
        fd = np.empty(g.size)
        eps = 1e-6
        for i in range(g.size):
            e = np.zeros(g.size)
            e[i] = eps
            e = e.reshape(g.shape)
            fd[i] = (energy(u + e, g, prm) - energy(u - e, g, prm)) / (2 * eps)
        err = np.linalg.norm(fd - analytic.ravel()) / np.linalg.norm(analytic)
        worst = max(worst, err)
    return worst <= 1e-5, f"max relative defect {worst:.2e}"


def _monotone(rng):
    g = Grid(2, 8)
    worst = np.inf
    for p in (1.3, 2.0, 4.0):
        prm = PLaplaceParams(p)
        for _ in range(50):
            a = rng.standard_normal((2,) + g.shape)
            b = rng.standard_normal((2,) + g.shape)
            worst = min(worst, g.inner(flux(a, prm) - flux(b, prm), a - b))
    return worst >= -1e-12, f"min pairing {worst:.3e}"


def _linear_step(rng):
    g = Grid(2, 8)
    f = rng.standard_normal(g.shape)
    tau = 0.3
    prob = StepProblem(f, tau, g, PLaplaceParams(2.0), tol=1e-12)
    v, _ = solve_step(prob)
    exact = np.real(np.fft.ifftn(np.fft.fftn(f) / (1.0 + tau * g.laplacian_symbol())))
    err = g.norm_l2(v - exact) / g.norm_l2(exact)
    return err <= 1e-8, f"relative L2 error {err:.2e}"


def _identity(_rng):
    cfg = SimConfig(dim=1, n=16, p=1.5, T=0.5, steps=10, init=InitSpec("random_smooth"))
    tr = solve_additive(cfg, cfg.sample_path())
    chk = check_energy_per_step(tr, cfg.additive_noise())
    ratio = float(np.max(np.abs(chk.identity_residual) / chk.identity_bound))
    return chk.identity_ok, f"worst residual/bound {ratio:.2e}"


def _ensemble(_rng):
    cfg = SimConfig(dim=1, n=16, p=3.0, T=0.5, steps=10, init=InitSpec("random_smooth"))
    rep = inequality_report(run_ensemble(cfg, 20, 0))
    return rep.passed, "; ".join(f"{it.name} margin {it.margin:.3g}" for it in rep.items)


CHECKS = (
    ("grad/div adjointness", _adjoint),
    ("energy gradient vs p-Laplacian", _energy_gradient),
    ("flux monotonicity", _monotone),
    ("p=2 step vs Fourier solve", _linear_step),
    ("per-step tested identity", _identity),
    ("ensemble energy inequalities", _ensemble),
)


def run_checks(seed: int = 0):
    """Run every check; returns ``[(name, passed, detail), ...]``."""
    rng = np.random.default_rng(seed)
    out = []
    for name, fn in CHECKS:
        ok, detail = fn(rng)
        out.append((name, bool(ok), detail))
    return out
