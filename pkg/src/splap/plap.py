"""Discrete p-Laplace operator, its flux and energy.

The flux is ``(|F|^2 + delta^2)^((p-2)/2) F``. With ``delta = 0`` and
``p < 2`` it is singular at ``F = 0`` and is extended there by zero, which
is its continuous extension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid

__all__ = [
    "PLaplaceParams",
    "flux",
    "flux_jacobian",
    "p_laplacian",
    "energy",
    "signed_power",
    "signed_power_derivative",
    "delta_schedule",
]


@dataclass(frozen=True)
class PLaplaceParams:
    p: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"exponent p must satisfy p > 1, got {self.p}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")

    @property
    def conjugate(self) -> float:
        """Hoelder conjugate ``p / (p - 1)``."""
        return self.p / (self.p - 1.0)

    def with_delta(self, delta: float) -> "PLaplaceParams":
        return PLaplaceParams(self.p, delta)


def _weight(s, p):
    """``s^((p-2)/2)`` with the value at ``s == 0`` set to 0 (or 1 if p == 2)."""
    if p == 2:
        return np.ones_like(s)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.power(s, 0.5 * (p - 2.0))
    return np.where(s > 0, w, 0.0)


def flux(F, params: PLaplaceParams) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    s = np.sum(F * F, axis=0) + params.delta**2
    return _weight(s, params.p) * F


def flux_jacobian(F, params: PLaplaceParams, floor: float = 0.0) -> np.ndarray:
    """Pointwise Jacobian of :func:`flux`, shape ``(d, d, *grid)``.

    ``floor`` bounds ``|F|^2 + delta^2`` from below. A positive floor turns
    the singular Jacobian at ``p < 2`` into a bounded SPD surrogate.
    """
    F = np.asarray(F, dtype=float)
    d = F.shape[0]
    p = params.p
    s = np.sum(F * F, axis=0) + params.delta**2
    s_eff = np.maximum(s, floor)
    w = _weight(s_eff, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(s_eff > 0, (p - 2.0) * w / s_eff, 0.0)
    J = np.empty((d, d) + F.shape[1:])
    for i in range(d):
        for j in range(d):
            J[i, j] = c * F[i] * F[j]
        J[i, i] += w
    return J


def p_laplacian(u, grid: Grid, params: PLaplaceParams) -> np.ndarray:
    return grid.div(flux(grid.grad(u), params))


def energy(u, grid: Grid, params: PLaplaceParams) -> float:
    """``(1/p) * sum h^d (|grad u|^2 + delta^2)^(p/2)``."""
    F = grid.grad(u)
    s = np.sum(F * F, axis=0) + params.delta**2
    return grid.integrate(np.power(s, 0.5 * params.p)) / params.p


def signed_power(v, p: float, delta: float = 0.0) -> np.ndarray:
    """``(v^2 + delta^2)^((p-2)/2) v``, the scalar analogue of :func:`flux`."""
    v = np.asarray(v, dtype=float)
    return _weight(v * v + delta**2, p) * v


def signed_power_derivative(v, p: float, delta: float = 0.0, floor: float = 0.0):
    v = np.asarray(v, dtype=float)
    s = np.maximum(v * v + delta**2, floor)
    w = _weight(s, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(s > 0, (p - 2.0) * w / s, 0.0)
    return w + c * v * v


def delta_schedule(start: float = 1e-2, factor: float = 0.5, stop: float = 1e-8):
    """Regularization levels ``start * factor**j`` down to the first one ``<= stop``."""
    if not (start > 0 and 0 < factor < 1 and stop > 0):
        raise ValueError("need start > 0, 0 < factor < 1, stop > 0")
    out = [start]
    while out[-1] > stop:
        out.append(out[-1] * factor)
    return out
