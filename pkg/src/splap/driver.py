"""Additive-noise trajectories of the implicit scheme and their energy ledger.

One step maps ``u^k`` to ``u^{k+1}`` by solving

    u^{k+1} - u^k - tau*Delta_p(u^{k+1}) = Phi^k Delta_{k+1}W,

where ``Phi^k`` is the average of the coefficient over the *previous*
interval (``Phi^0 = 0``), so the noise first acts in the second step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .grid import Grid
from .noise import (
    AdditiveNoise,
    MultiplicativeNoise,
    NoisePath,
    available_modes,
    averaged_phi,
    increment_field,
    path_rng,
    power_spectrum,
    sample_path,
    trig_basis,
)
from .plap import PLaplaceParams, flux
from .step import NonConvergence, StepProblem, StepReport, solve_step

__all__ = [
    "NoiseSpec",
    "InitSpec",
    "SimConfig",
    "Trajectory",
    "LEDGER_COLUMNS",
    "solve_additive",
    "interpolants",
    "check_energy_per_step",
    "increment_sum",
    "interpolant_gap",
]

log = logging.getLogger(__name__)

NOISE_KINDS = ("additive", "multiplicative", "none")
INIT_KINDS = ("zero", "gaussian_bump", "random_smooth")
DEFAULT_MODES = 64


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "additive"
    modes: int | None = None
    spectrum: str = "power"
    gamma: float = 1.0
    amplitude: float = 1.0
    profile: str = "identity"
    lip: float = 1.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.spectrum != "power":
            raise ValueError(f"unknown spectrum {self.spectrum!r}; only 'power' is supported")


@dataclass(frozen=True)
class InitSpec:
    kind: str = "zero"
    amplitude: float = 1.0
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ValueError(f"init kind must be one of {INIT_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to march one path: grid, operator, horizon, noise, initial data."""

    dim: int
    n: int
    p: float
    T: float
    steps: int
    half_width: float = math.pi
    delta: float = 0.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    init: InitSpec = field(default_factory=InitSpec)
    tol: float = 1e-9
    max_iter: int = 10_000
    eps_viscosity: float = 0.0
    eps_sweep: tuple = ()
    seed: int = 0
    paths: int = 200
    keep_fields: bool = False

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.eps_viscosity >= 0:
            raise ValueError("eps_viscosity must be >= 0")
        # constructing these validates d, n, R, p, delta
        PLaplaceParams(self.p, self.delta)
        Grid(self.dim, self.n, self.half_width)

    @cached_property
    def grid(self) -> Grid:
        return Grid(self.dim, self.n, self.half_width)

    @property
    def params(self) -> PLaplaceParams:
        return PLaplaceParams(self.p, self.delta)

    @property
    def tau(self) -> float:
        return self.T / self.steps

    @property
    def modes(self) -> int:
        if self.noise.modes is not None:
            return self.noise.modes
        return min(DEFAULT_MODES, available_modes(self.grid))

    @cached_property
    def basis(self):
        return trig_basis(self.grid, self.modes)

    def spectrum(self) -> np.ndarray:
        return power_spectrum(self.modes, self.noise.amplitude, self.noise.gamma)

    def additive_noise(self) -> AdditiveNoise:
        if self.noise.kind != "additive":
            return AdditiveNoise.zero(self.basis)
        return AdditiveNoise.diagonal(self.basis, self.spectrum())

    def multiplicative_noise(self) -> MultiplicativeNoise:
        return MultiplicativeNoise(self.basis, self.spectrum(), self.noise.profile, self.noise.lip)

    def initial_field(self, path_index: int = 0) -> np.ndarray:
        g, spec = self.grid, self.init
        if spec.kind == "zero":
            return g.zeros()
        if spec.kind == "gaussian_bump":
            r2 = sum(x * x for x in g.coords)
            return spec.amplitude * np.exp(-0.5 * r2 / spec.width**2)
        # random_smooth: random coefficients on the low modes, decaying with index
        rng = path_rng(self.seed, path_index, stream=1)
        M = min(16, available_modes(g))
        basis = trig_basis(g, M)
        coef = rng.standard_normal(M) * power_spectrum(M, spec.amplitude, 1.0)
        return np.tensordot(coef, basis.modes, axes=1)

    def sample_path(self, path_index: int = 0, seed: int | None = None) -> NoisePath:
        return sample_path(self.seed if seed is None else seed, self.steps, self.modes, self.T, path_index)

    def replace(self, **changes) -> "SimConfig":
        return replace(self, **changes)


LEDGER_COLUMNS = (
    "step",
    "t",
    "l2_sq",
    "grad_pp",
    "lp_pp",
    "incr_sq",
    "noise_sq",
    "pair_incr",
    "pair_noise",
    "flux_pair",
    "f_norm",
    "iterations",
    "residual",
)


@dataclass
class Trajectory:
    """Discrete path ``u^0..u^N`` with its per-level ledger.

    Ledger row ``k`` describes level ``k``; the step columns (``incr_sq``,
    ``noise_sq``, pairings, solver data) refer to the step that produced
    ``u^k`` and are zero in row 0.
    """

    grid: Grid
    params: PLaplaceParams
    T: float
    tol: float
    eps_viscosity: float
    ledger: dict
    initial: np.ndarray
    final: np.ndarray
    fields: np.ndarray | None = None
    reports: list = field(default_factory=list)
    path_index: int = 0

    @property
    def N(self) -> int:
        return len(self.ledger["step"]) - 1

    @property
    def tau(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.N + 1)

    def rows(self):
        """Ledger rows as tuples in :data:`LEDGER_COLUMNS` order."""
        cols = [self.ledger[c] for c in LEDGER_COLUMNS]
        return list(zip(*cols))


def _new_ledger(N):
    led = {c: np.zeros(N + 1) for c in LEDGER_COLUMNS}
    led["step"] = np.arange(N + 1)
    led["iterations"] = np.zeros(N + 1, dtype=int)
    return led


def solve_additive(
    cfg: SimConfig,
    path: NoisePath,
    noise: AdditiveNoise | None = None,
    u0=None,
    keep_fields: bool | None = None,
    method: str = "newton",
) -> Trajectory:
    """March ``cfg.steps`` implicit steps along ``path``.

    ``noise`` and ``u0`` default to the ones described by ``cfg``. Raises
    :class:`NonConvergence` with ``.step`` set to the failing step index.
    """
    g, params, tau, N = cfg.grid, cfg.params, cfg.tau, cfg.steps
    if noise is None:
        noise = cfg.additive_noise()
    if u0 is None:
        u0 = cfg.initial_field(path.path_index)
    if keep_fields is None:
        keep_fields = cfg.keep_fields
    if path.N != N or path.M != noise.M:
        raise ValueError(f"path has (N, M) = {(path.N, path.M)}, config needs {(N, noise.M)}")
    if not math.isclose(path.T, cfg.T, rel_tol=1e-12):
        raise ValueError(f"path horizon {path.T} differs from config T={cfg.T}")

    u = np.array(u0, dtype=float)
    if u.shape != g.shape or not np.all(np.isfinite(u)):
        raise ValueError("initial field must be finite and match the grid")
    led = _new_ledger(N)
    led["t"] = tau * np.arange(N + 1)
    fields = np.empty((N + 1,) + g.shape) if keep_fields else None
    reports: list[StepReport] = []

    def record(k, v):
        F = g.grad(v)
        led["l2_sq"][k] = g.inner(v, v)
        led["grad_pp"][k] = g.norm_lp_pow(F, params.p)
        led["lp_pp"][k] = g.norm_lp_pow(v, params.p)
        led["flux_pair"][k] = g.inner(flux(F, params), F)
        if fields is not None:
            fields[k] = v

    record(0, u)
    for k in range(N):
        xi = increment_field(averaged_phi(noise, k, tau), path, k + 1)
        f = u + xi
        prob = StepProblem(f, tau, g, params, cfg.eps_viscosity, cfg.tol, cfg.max_iter)
        try:
            v, rep = solve_step(prob, u, method=method)
        except NonConvergence as exc:
            exc.step = k
            raise
        record(k + 1, v)
        dv = v - u
        led["incr_sq"][k + 1] = g.inner(dv, dv)
        led["noise_sq"][k + 1] = g.inner(xi, xi)
        led["pair_incr"][k + 1] = g.inner(dv, v)
        led["pair_noise"][k + 1] = g.inner(xi, v)
        led["f_norm"][k + 1] = g.norm_l2(f)
        led["iterations"][k + 1] = rep.iterations
        led["residual"][k + 1] = rep.residual
        reports.append(rep)
        u = v

    return Trajectory(
        grid=g,
        params=params,
        T=cfg.T,
        tol=cfg.tol,
        eps_viscosity=cfg.eps_viscosity,
        ledger=led,
        initial=np.array(u0, dtype=float),
        final=u,
        fields=fields,
        reports=reports,
        path_index=path.path_index,
    )


def interpolants(traj: Trajectory, t: float):
    """Right-constant, left-constant and piecewise-linear interpolants at time ``t``."""
    if traj.fields is None:
        raise ValueError("trajectory was run without keep_fields")
    if not 0 <= t <= traj.T:
        raise ValueError(f"t={t} outside [0, {traj.T}]")
    N, tau, U = traj.N, traj.tau, traj.fields
    s = t / tau
    k = int(math.floor(s))
    if math.isclose(s, round(s), rel_tol=0, abs_tol=1e-12):
        k = int(round(s))
        node = True
    else:
        node = False
    if k >= N:
        return U[N].copy(), U[N - 1].copy(), U[N].copy()
    u_r = U[k + 1].copy()
    if node:
        # t = t_k lies in (t_{k-1}, t_k] for the left-constant interpolant
        u_l = U[k - 1].copy() if k > 0 else U[0].copy()
    else:
        u_l = U[k].copy()
    theta = s - k if not node else 0.0
    u_hat = U[k] + theta * (U[k + 1] - U[k])
    return u_r, u_l, u_hat


@dataclass
class EnergyCheck:
    identity_residual: np.ndarray  # per step k -> k+1
    identity_bound: np.ndarray
    lhs: np.ndarray  # 1/2(|u^{k+1}|^2 - |u^k|^2) + tau |grad u^{k+1}|_p^p
    rhs: np.ndarray  # 1/2 int_{t_{k-1}}^{t_k} |Phi|_HS^2

    @property
    def identity_ok(self) -> bool:
        return bool(np.all(np.abs(self.identity_residual) <= self.identity_bound))


def check_energy_per_step(traj: Trajectory, noise: AdditiveNoise | None = None) -> EnergyCheck:
    """Tested identity residual per step, plus the terms of the per-step energy inequality.

    The identity is ``<u^{k+1}-u^k, u^{k+1}> + tau <flux(grad u^{k+1}), grad u^{k+1}>
    + eps tau |u^{k+1}|_p^p = <Phi^k Delta W, u^{k+1}>``; with ``delta = 0`` the
    flux pairing is ``|grad u^{k+1}|_p^p``.
    """
    led, tau = traj.ledger, traj.tau
    nxt = slice(1, None)
    res = (
        led["pair_incr"][nxt]
        + tau * led["flux_pair"][nxt]
        + traj.eps_viscosity * tau * led["lp_pp"][nxt]
        - led["pair_noise"][nxt]
    )
    bound = 100.0 * traj.tol * (1.0 + led["f_norm"][nxt]) * np.sqrt(led["l2_sq"][nxt])
    lhs = 0.5 * np.diff(led["l2_sq"]) + tau * led["grad_pp"][nxt]
    if noise is None:
        rhs = np.zeros(traj.N)
    else:
        rhs = np.array([0.5 * noise.hs_integral((k - 1) * tau, k * tau) for k in range(traj.N)])
    return EnergyCheck(res, bound, lhs, rhs)


def increment_sum(traj: Trajectory) -> float:
    """``sum_k |u^{k+1} - u^k|_2^2``."""
    return math.fsum(traj.ledger["incr_sq"])


def interpolant_gap(traj: Trajectory) -> float:
    """``(1/N) sum_k |u^{k+1} - u^k|^2``, which vanishes as ``N`` grows."""
    return increment_sum(traj) / traj.N
