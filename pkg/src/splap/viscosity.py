"""Vanishing-viscosity regularization ``+ eps |u|^(p-2) u`` and the ``eps -> 0`` sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .driver import SimConfig, Trajectory, check_energy_per_step, solve_additive
from .noise import AdditiveNoise, NoisePath

__all__ = ["solve_viscous", "viscosity_sweep", "SweepReport", "uniform_bound_constant"]


def solve_viscous(cfg: SimConfig, path: NoisePath, noise: AdditiveNoise | None = None, **kw) -> Trajectory:
    """Additive march with the regularizing term; ``cfg.eps_viscosity`` must lie in [0, 1)."""
    eps = cfg.eps_viscosity
    if not 0 <= eps < 1:
        raise ValueError(f"eps_viscosity must lie in [0, 1), got {eps}")
    return solve_additive(cfg, path, noise=noise, **kw)


def uniform_bound_constant(noise: AdditiveNoise, u0_l2_sq: float, T: float) -> float:
    """``C1 = |u0|^2 + int_0^T |Phi|_HS^2``."""
    return u0_l2_sq + noise.hs_integral(0.0, T)


@dataclass
class SweepReport:
    eps: list = field(default_factory=list)
    distance: list = field(default_factory=list)  # tau * sum_k |u_eps^k - u^k|^2
    bound_quantity: list = field(default_factory=list)  # (eps * tau * sum_k |u_eps^k|_p^p)^((p-1)/p)
    energy_residual: list = field(default_factory=list)  # max tested-identity residual
    l2_time_integral: list = field(default_factory=list)  # tau * sum_k |u_eps^k|^2
    C1: float = math.nan
    p: float = math.nan
    baseline_ledger: dict | None = None

    @property
    def bound_limit(self) -> float:
        return (0.5 * self.C1) ** ((self.p - 1.0) / self.p)

    def decreasing(self) -> bool:
        d = self.distance
        return all(b < a for a, b in zip(d, d[1:]))

    def rows(self):
        return list(
            zip(self.eps, self.distance, self.bound_quantity, self.energy_residual, self.l2_time_integral)
        )


def viscosity_sweep(cfg: SimConfig, path: NoisePath, eps_list, noise: AdditiveNoise | None = None, u0=None) -> SweepReport:
    """Compare regularized runs against the unregularized one on the same path."""
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(e <= 0 or e >= 1 for e in eps_list):
        raise ValueError("eps values must lie in (0, 1)")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps values must be strictly decreasing")
    if noise is None:
        noise = cfg.additive_noise()
    if u0 is None:
        u0 = cfg.initial_field(path.path_index)
    base_cfg = cfg.replace(eps_viscosity=0.0)
    base = solve_additive(base_cfg, path, noise=noise, u0=u0, keep_fields=True)
    g, tau, p = cfg.grid, cfg.tau, cfg.p
    rep = SweepReport(C1=uniform_bound_constant(noise, g.inner(u0, u0), cfg.T), p=p, baseline_ledger=base.ledger)
    for eps in eps_list:
        tr = solve_viscous(cfg.replace(eps_viscosity=eps), path, noise=noise, u0=u0, keep_fields=True)
        diff = (tr.fields[1:] - base.fields[1:]).reshape(cfg.steps, -1)
        D = tau * math.fsum(np.sum(diff * diff, axis=1) * g.cell_volume)
        lp = tau * math.fsum(tr.ledger["lp_pp"][1:])
        chk = check_energy_per_step(tr, noise)
        rep.eps.append(eps)
        rep.distance.append(D)
        rep.bound_quantity.append((eps * lp) ** ((p - 1.0) / p))
        rep.energy_residual.append(float(np.max(np.abs(chk.identity_residual))))
        rep.l2_time_integral.append(tau * math.fsum(tr.ledger["l2_sq"][1:]))
    return rep
