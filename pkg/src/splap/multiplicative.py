"""Multiplicative noise by fixed-point iteration of the additive solution map.

``Pi(rho)`` solves the additive problem whose coefficient on subinterval
``[t_j, t_{j+1})`` is ``B(rho^j)``; the delayed average then feeds
``B(rho^{k-1})`` into step ``k``. ``Pi`` contracts in the weighted distance
``tau * sum_k exp(-alpha t_k) |u1^k - u2^k|^2`` with rate ``L / alpha``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .driver import SimConfig, Trajectory, solve_additive
from .noise import AdditiveNoise, MultiplicativeNoise, NoisePath, evaluate_B

__all__ = [
    "PicardConfig",
    "PicardTrace",
    "PicardNonConvergence",
    "AlphaTooSmall",
    "weighted_distance",
    "apply_pi",
    "picard_solve",
    "fitted_ratio",
]


class AlphaTooSmall(ValueError):
    """The weight exponent does not exceed the Lipschitz constant ``L``."""


class PicardNonConvergence(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class PicardConfig:
    base: SimConfig
    noise: MultiplicativeNoise
    alpha: float | None = None
    picard_tol: float = 1e-6
    picard_max_iter: int = 50

    def __post_init__(self):
        if self.alpha is not None and not self.alpha > self.noise.L:
            raise AlphaTooSmall(
                f"alpha={self.alpha} must exceed L={self.noise.L} for a contraction"
            )
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if self.picard_max_iter < 1:
            raise ValueError("picard_max_iter must be >= 1")
        if self.base.eps_viscosity:
            raise ValueError("the viscous regularization cannot be combined with multiplicative noise")

    @property
    def L(self) -> float:
        return self.noise.L

    @property
    def weight(self) -> float:
        """Effective ``alpha``; defaults to ``2 L`` (or 1 when ``L = 0``)."""
        if self.alpha is not None:
            return self.alpha
        return 2.0 * self.L if self.L > 0 else 1.0

    @classmethod
    def from_sim(cls, base: SimConfig, **kw) -> "PicardConfig":
        return cls(base, base.multiplicative_noise(), **kw)


@dataclass
class PicardTrace:
    distances: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)

    def rows(self):
        return [(m + 1, d, w) for m, (d, w) in enumerate(zip(self.distances, self.wall_times))]


def _levels(x):
    if isinstance(x, Trajectory):
        if x.fields is None:
            raise ValueError("trajectory was run without keep_fields")
        return x.fields
    return np.asarray(x, dtype=float)


def weighted_distance(traj1, traj2, alpha: float, tau: float | None = None, grid=None) -> float:
    """``tau * sum_{k<N} exp(-alpha t_k) |u1^k - u2^k|_2^2`` (left-endpoint rule).

    Accepts trajectories or level arrays of shape ``(N+1, *grid)``; for arrays,
    ``tau`` and ``grid`` must be given.
    """
    U1, U2 = _levels(traj1), _levels(traj2)
    if U1.shape != U2.shape:
        raise ValueError(f"shape mismatch {U1.shape} vs {U2.shape}")
    ref = traj1 if isinstance(traj1, Trajectory) else traj2 if isinstance(traj2, Trajectory) else None
    if tau is None:
        if ref is None:
            raise ValueError("tau is required for plain arrays")
        tau = ref.tau
    h_d = grid.cell_volume if grid is not None else ref.grid.cell_volume if ref is not None else 1.0
    N = U1.shape[0] - 1
    diff = (U1[:N] - U2[:N]).reshape(N, -1)
    sq = np.sum(diff * diff, axis=1) * h_d
    w = np.exp(-alpha * tau * np.arange(N))
    return float(tau * math.fsum(w * sq))


def apply_pi(cfg: PicardConfig, path: NoisePath, rho, u0=None) -> Trajectory:
    """One application of the solution map with the coefficient frozen at ``rho``."""
    base = cfg.base
    N = base.steps
    R = _levels(rho)
    if R.shape[0] != N + 1:
        raise ValueError(f"rho needs {N + 1} levels, got {R.shape[0]}")
    phi = np.stack([evaluate_B(cfg.noise, R[j]) for j in range(N)])
    frozen = AdditiveNoise(cfg.noise.basis, phi, dt=base.tau)
    return solve_additive(base, path, noise=frozen, u0=u0, keep_fields=True)


def picard_solve(cfg: PicardConfig, path: NoisePath, u0=None):
    """Iterate ``rho <- Pi(rho)`` from ``rho^0 = u0`` held constant in time.

    Trace entry ``m`` is the weighted distance between the ``m``-th and
    ``(m+1)``-th images of ``Pi``. Stops once it drops to ``picard_tol**2``.
    Returns ``(trajectory, trace)``.
    """
    base = cfg.base
    alpha = cfg.weight
    if u0 is None:
        u0 = base.initial_field(path.path_index)
    rho = np.broadcast_to(np.asarray(u0, dtype=float), (base.steps + 1,) + base.grid.shape)
    trace = PicardTrace()
    start = time.perf_counter()
    current = apply_pi(cfg, path, rho, u0=u0)
    for _ in range(cfg.picard_max_iter):
        nxt = apply_pi(cfg, path, current, u0=u0)
        dist = weighted_distance(nxt, current, alpha)
        trace.distances.append(dist)
        trace.wall_times.append(time.perf_counter() - start)
        current = nxt
        if dist <= cfg.picard_tol**2:
            return current, trace
    raise PicardNonConvergence(
        f"no fixed point within {cfg.picard_max_iter} iterations "
        f"(last distance {trace.distances[-1]:.3e})",
        trace,
    )


def fitted_ratio(distances, floor: float = 0.0) -> float:
    """Geometric decay rate of a distance sequence from a log-linear least-squares fit.

    Entries at or below ``floor`` are dropped, since they sit at solver
    precision. Returns ``nan`` when fewer than two entries remain.
    """
    d = np.asarray(distances, dtype=float)
    d = d[d > floor]
    if d.size < 2:
        return math.nan
    m = np.arange(d.size)
    slope = np.polyfit(m, np.log(d), 1)[0]
    return float(math.exp(slope))
