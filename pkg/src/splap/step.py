"""Implicit step solver: find ``v`` with ``v - tau*Delta_p(v) + eps*tau*|v|^(p-2)v = f``.

The equation is the Euler-Lagrange equation of the strictly convex functional

    J(v) = 1/2 ||v||^2 + tau * E_p(v) + (eps*tau/p) ||v||_p^p - <f, v>,

so the step is computed by minimizing ``J`` with a line-search descent
method. Two search directions are available: a damped Newton direction
(default) and a spectrally preconditioned gradient direction. Both use the
same Armijo backtracking, so the objective never increases.

For ``p < 2`` and ``delta = 0`` the flux is not Lipschitz. The solve then
runs a continuation over regularized problems with decreasing ``delta``
and finishes with a polish on the unregularized problem.

Near flat regions of the solution that polish can stall above the
requested residual: there the flux is only Holder continuous, and the
exact minimizer may have differences below one ulp. A stalled solve is
accepted when the shortfall is within :func:`roundoff_floor`, and the
report records that it was.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid
from .plap import (
    PLaplaceParams,
    delta_schedule,
    flux_jacobian,
    p_laplacian,
    signed_power,
    signed_power_derivative,
)

__all__ = [
    "StepProblem",
    "StepReport",
    "NonConvergence",
    "objective",
    "residual",
    "roundoff_floor",
    "solve_step",
]

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 60
# progress has stalled when the best residual fails to halve within this many iterations
STALL_WINDOW = 25


class NonConvergence(RuntimeError):
    """The step solver hit ``max_iter`` (or stalled) before reaching ``tol``."""

    def __init__(self, message, report=None, step=None):
        super().__init__(message)
        self.report = report
        self.step = step


@dataclass(frozen=True)
class StepProblem:
    f: np.ndarray
    tau: float
    grid: Grid
    params: PLaplaceParams
    eps_viscosity: float = 0.0
    tol: float = 1e-9
    max_iter: int = 10_000

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.eps_viscosity >= 0:
            raise ValueError(f"eps_viscosity must be >= 0, got {self.eps_viscosity}")
        if np.shape(self.f) != self.grid.shape:
            raise ValueError(f"f has shape {np.shape(self.f)}, grid is {self.grid.shape}")

    @property
    def target(self) -> float:
        """Absolute residual threshold ``tol * (1 + ||f||_2)``."""
        return self.tol * (1.0 + self.grid.norm_l2(self.f))


@dataclass
class StepReport:
    iterations: int
    residual: float
    objective: float
    delta_trace: list = field(default_factory=list)
    converged: bool = True
    floor_limited: bool = False  # accepted at the rounding floor, above the target


class _Functional:
    """The step functional at one regularization level ``delta``."""

    def __init__(self, prob: StepProblem, delta: float):
        self.prob = prob
        self.grid = prob.grid
        self.params = prob.params.with_delta(delta)
        self.delta = delta
        self.p = prob.params.p
        self.eps_tau = prob.eps_viscosity * prob.tau

    def value(self, v) -> float:
        g, p = self.grid, self.p
        F = g.grad(v)
        s = np.sum(F * F, axis=0) + self.delta**2
        # constants subtracted so that J(0) = 0 for every delta
        e = g.integrate(np.power(s, 0.5 * p) - self.delta**p) / p
        val = 0.5 * g.inner(v, v) + self.prob.tau * e - g.inner(self.prob.f, v)
        if self.eps_tau:
            b = v * v + self.delta**2
            val += self.eps_tau * g.integrate(np.power(b, 0.5 * p) - self.delta**p) / p
        return val

    def gradient(self, v) -> np.ndarray:
        r = v - self.prob.tau * p_laplacian(v, self.grid, self.params) - self.prob.f
        if self.eps_tau:
            r = r + self.eps_tau * signed_power(v, self.p, self.delta)
        return r

    def change(self, v, dv, alpha) -> float:
        """``J(v + alpha*dv) - J(v)``, evaluated without cancellation."""
        g, p = self.grid, self.p
        lin = alpha * g.inner(v - self.prob.f, dv) + 0.5 * alpha**2 * g.inner(dv, dv)
        F = g.grad(v)
        G = g.grad(dv)
        b = np.sum(F * F, axis=0) + self.delta**2
        db = 2.0 * alpha * np.sum(F * G, axis=0) + alpha**2 * np.sum(G * G, axis=0)
        out = lin + self.prob.tau * g.integrate(_power_change(b, db, 0.5 * p)) / p
        if self.eps_tau:
            b = v * v + self.delta**2
            db = 2.0 * alpha * v * dv + alpha**2 * dv * dv
            out += self.eps_tau * g.integrate(_power_change(b, db, 0.5 * p)) / p
        return out

    def hessian(self, v, floor: float = 0.0) -> sp.csc_matrix:
        g = self.grid
        J = flux_jacobian(g.grad(v), self.params, floor=floor)
        diag = np.ones(g.size)
        if self.eps_tau:
            w = signed_power_derivative(v, self.p, self.delta, floor=floor)
            diag = diag + self.eps_tau * w.ravel()
        return _assembler(g).assemble(self.prob.tau * J.reshape(g.d * g.d, -1), diag)


class _Assembler:
    """Sparsity pattern of ``I + sum_ij D_i^T diag(J_ij) D_j`` for one grid."""

    def __init__(self, grid: Grid):
        d, size = grid.d, grid.size
        idx = np.arange(size).reshape(grid.shape)
        nbr = [np.roll(idx, -1, axis=i).ravel() for i in range(d)]
        x = idx.ravel()
        rows, cols, src, coef = [], [], [], []
        inv_h2 = 1.0 / grid.h**2
        for i in range(d):
            for j in range(d):
                for a, sa in ((x, -1.0), (nbr[i], 1.0)):
                    for b, sb in ((x, -1.0), (nbr[j], 1.0)):
                        rows.append(a)
                        cols.append(b)
                        src.append((i * d + j) * size + x)
                        coef.append(np.full(size, sa * sb * inv_h2))
        rows.append(x)
        cols.append(x)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        # column-major keys give CSC ordering after np.unique
        keys, pos = np.unique(cols * size + rows, return_inverse=True)
        self.size = size
        self.pos = pos
        self.src = np.concatenate(src)
        self.coef = np.concatenate(coef)
        self.indices = (keys % size).astype(np.int32)
        self.indptr = np.searchsorted(keys // size, np.arange(size + 1)).astype(np.int32)
        self.nnz = len(keys)

    def assemble(self, weights, diag) -> sp.csc_matrix:
        vals = np.concatenate([self.coef * weights.ravel()[self.src], diag])
        data = np.bincount(self.pos, weights=vals, minlength=self.nnz)
        return sp.csc_matrix((data, self.indices, self.indptr), shape=(self.size, self.size))


@functools.lru_cache(maxsize=16)
def _assembler(grid: Grid) -> _Assembler:
    return _Assembler(grid)


def _power_change(b, db, q):
    """``(b + db)^q - b^q`` elementwise, accurate when ``db`` is small."""
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.log1p(np.where(b > 0, db / np.where(b > 0, b, 1.0), 0.0))
        small = np.power(b, q) * np.expm1(q * rel)
        zero = np.power(np.maximum(db, 0.0), q)
    return np.where(b > 0, small, zero)


def objective(v, prob: StepProblem) -> float:
    """Convex potential whose gradient is :func:`residual`."""
    return _Functional(prob, prob.params.delta).value(np.asarray(v, dtype=float))


def residual(v, prob: StepProblem) -> np.ndarray:
    """``v - tau*Delta_p(v) + eps*tau*|v|^(p-2)v - f``."""
    return _Functional(prob, prob.params.delta).gradient(np.asarray(v, dtype=float))


def roundoff_floor(v, prob: StepProblem) -> float:
    """Residual change caused by moving ``v`` one ulp in a checkerboard pattern.

    This is the resolution of the residual at ``v`` in double precision; a
    residual below it cannot be told apart from zero.
    """
    v = np.asarray(v, dtype=float)
    parity = sum(np.indices(v.shape)) % 2 == 0
    w = np.where(parity, np.nextafter(v, np.inf), np.nextafter(v, -np.inf))
    return prob.grid.norm_l2(residual(w, prob) - residual(v, prob))


def _newton_direction(fn: _Functional, v, r, floor):
    H = fn.hessian(v, floor=floor)
    return -spla.spsolve(H, r.ravel()).reshape(v.shape)


def _gradient_direction(fn: _Functional, v, r, floor):
    # preconditioner: (1 + tau*c*lambda)^-1 with c the mean flux weight
    g = fn.grid
    F = g.grad(v)
    s = np.maximum(np.sum(F * F, axis=0) + fn.delta**2, floor)
    if fn.p == 2:
        c = 1.0
    else:
        c = float(np.mean(np.where(s > 0, np.power(np.where(s > 0, s, 1.0), 0.5 * (fn.p - 2)), 0.0)))
    symbol = 1.0 + fn.prob.tau * c * g.laplacian_symbol() + fn.eps_tau
    return -np.real(np.fft.ifftn(np.fft.fftn(r) / symbol))


_DIRECTIONS = {"newton": _newton_direction, "descent": _gradient_direction}


def _minimize(fn, v, target, budget, floor, direction, callback, settled=None):
    """Line-search descent on one functional. Returns (v, iterations, residual).

    With ``settled`` given, also stops once progress has stalled and
    ``settled(v, rn)`` holds.
    """
    g = fn.grid
    r = fn.gradient(v)
    rn = g.norm_l2(r)
    it = 0
    history = [rn]
    while rn > target and it < budget:
        W = STALL_WINDOW
        if settled and len(history) > W and min(history[-W:]) > 0.5 * min(history[:-W]) and settled(v, rn):
            break
        dv = direction(fn, v, r, floor)
        slope = g.inner(r, dv)
        if not (slope < 0 and np.all(np.isfinite(dv))):
            dv = -r
            slope = -rn * rn
        alpha = 1.0
        for _ in range(MAX_BACKTRACKS):
            if fn.change(v, dv, alpha) <= ARMIJO_C * alpha * slope:
                break
            alpha *= BACKTRACK
        else:
            # line search exhausted: the direction carries no usable decrease
            break
        v = v + alpha * dv
        it += 1
        r = fn.gradient(v)
        rn = g.norm_l2(r)
        history.append(rn)
        if callback is not None:
            callback(v, fn.delta)
    return v, it, rn


def solve_step(
    prob: StepProblem,
    v0=None,
    method: str = "newton",
    callback: Callable | None = None,
) -> tuple[np.ndarray, StepReport]:
    """Solve one implicit step, warm-started at ``v0`` (defaults to ``f``).

    Raises :class:`NonConvergence` if the residual does not drop below
    ``prob.target`` within ``prob.max_iter`` iterations.
    """
    try:
        direction = _DIRECTIONS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; use one of {sorted(_DIRECTIONS)}") from None
    v = np.array(prob.f if v0 is None else v0, dtype=float)
    if v.shape != prob.grid.shape or not np.all(np.isfinite(v)):
        raise ValueError("warm start must be a finite field on the problem grid")

    target = prob.target
    scale = 1.0 + prob.grid.norm_l2(prob.f)
    p, delta = prob.params.p, prob.params.delta
    if p < 2 and delta == 0:
        levels = delta_schedule()
        stages = [(d, max(prob.tol, d) * scale, 0.0) for d in levels]
        stages.append((0.0, target, levels[-1] ** 2))
    else:
        stages = [(delta, target, 0.0)]

    def settled(v, rn):
        return rn <= roundoff_floor(v, prob)

    trace = []
    used = 0
    rn = math.inf
    for level, stage_target, floor in stages:
        fn = _Functional(prob, level)
        final = level == delta
        v, it, rn = _minimize(
            fn, v, stage_target, prob.max_iter - used, floor, direction, callback, settled if final else None
        )
        used += it
        trace.append((level, it, rn))
    fn_final = _Functional(prob, delta)
    limited = rn > target and np.all(np.isfinite(v)) and rn <= roundoff_floor(v, prob)
    if limited:
        log.debug("step accepted at rounding floor: residual %.3e, target %.3e", rn, target)
    report = StepReport(
        iterations=used,
        residual=rn,
        objective=fn_final.value(v),
        delta_trace=trace,
        converged=rn <= target or bool(limited),
        floor_limited=bool(limited),
    )
    if not np.all(np.isfinite(v)):
        raise NonConvergence("step solver produced a non-finite field", report)
    if not report.converged:
        raise NonConvergence(
            f"residual {rn:.3e} above target {target:.3e} after {used} iterations",
            report,
        )
    return v, report
