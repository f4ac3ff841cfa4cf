"""Truncated cylindrical Wiener process and Hilbert-Schmidt noise coefficients.

The Wiener process is ``W = sum_n beta_n e_n`` over the first ``M`` real
trigonometric modes of the periodic box. An additive coefficient is stored
as the mode images ``phi_n = Phi e_n`` on each time subinterval; a
multiplicative coefficient is the separable family ``b_n(lam) = c_n g(lam)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .grid import Grid

__all__ = [
    "BasisSet",
    "AdditiveNoise",
    "MultiplicativeNoise",
    "NoisePath",
    "PROFILES",
    "trig_basis",
    "available_modes",
    "power_spectrum",
    "path_rng",
    "sample_path",
    "averaged_phi",
    "increment_field",
    "evaluate_B",
]


def _wavevectors(grid: Grid):
    """Canonical wavevectors below Nyquist, sorted by |k|^2 then lexicographically."""
    kmax = (grid.n - 1) // 2
    ks = []
    for k in itertools.product(range(-kmax, kmax + 1), repeat=grid.d):
        nz = [c for c in k if c != 0]
        if nz and nz[0] < 0:
            continue  # -k represents the same cos/sin pair
        ks.append(k)
    ks.sort(key=lambda k: (sum(c * c for c in k), k))
    return ks


def available_modes(grid: Grid) -> int:
    """Number of exactly orthonormal trigonometric modes on ``grid``."""
    kmax = (grid.n - 1) // 2
    return (2 * kmax + 1) ** grid.d


@dataclass(frozen=True)
class BasisSet:
    grid: Grid
    modes: np.ndarray  # shape (M, *grid.shape)
    wavevectors: tuple

    @property
    def M(self) -> int:
        return self.modes.shape[0]

    def gram(self) -> np.ndarray:
        flat = self.modes.reshape(self.M, -1)
        return flat @ flat.T * self.grid.cell_volume


def trig_basis(grid: Grid, M: int) -> BasisSet:
    """First ``M`` real trigonometric modes, orthonormal under lattice quadrature.

    Only frequencies strictly below Nyquist are used; those are exactly
    orthonormal for the discrete inner product.
    """
    avail = available_modes(grid)
    if not 1 <= M <= avail:
        raise ValueError(f"mode count M={M} outside [1, {avail}] for this grid")
    x = grid.coords
    L = 2.0 * grid.half_width
    vol = grid.volume
    modes, labels = [], []
    for k in _wavevectors(grid):
        if len(modes) >= M:
            break
        if not any(k):
            modes.append(np.full(grid.shape, 1.0 / math.sqrt(vol)))
            labels.append((k, "const"))
            continue
        phase = sum(2.0 * math.pi * kc * (xc + grid.half_width) / L for kc, xc in zip(k, x))
        amp = math.sqrt(2.0 / vol)
        modes.append(amp * np.cos(phase))
        labels.append((k, "cos"))
        if len(modes) < M:
            modes.append(amp * np.sin(phase))
            labels.append((k, "sin"))
    return BasisSet(grid, np.array(modes), tuple(labels))


def power_spectrum(M: int, amplitude: float, gamma: float) -> np.ndarray:
    """Mode weights ``amplitude * n^-gamma`` for ``n = 1..M``."""
    return amplitude * np.arange(1, M + 1, dtype=float) ** (-gamma)


@dataclass(frozen=True)
class AdditiveNoise:
    """Mode images ``phi[j, n] = Phi(t) e_n`` for ``t`` in subinterval ``j``.

    With ``dt=None`` the coefficient is constant in time and ``phi`` has a
    single subinterval. Otherwise subinterval ``j`` is ``[j*dt, (j+1)*dt)``.
    """

    basis: BasisSet
    phi: np.ndarray  # shape (K, M, *grid.shape)
    dt: float | None = None

    def __post_init__(self):
        g = self.basis.grid
        if self.phi.ndim != 2 + g.d or self.phi.shape[2:] != g.shape:
            raise ValueError(f"phi must have shape (K, M, *{g.shape}), got {self.phi.shape}")
        if self.dt is None and self.phi.shape[0] != 1:
            raise ValueError("time-constant noise takes a single subinterval")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(self.phi)):
            raise ValueError("noise coefficients must be finite")

    @classmethod
    def diagonal(cls, basis: BasisSet, weights, dt=None) -> "AdditiveNoise":
        """``Phi e_n = weights[n] e_n``; ``weights`` may be (M,) or (K, M)."""
        w = np.asarray(weights, dtype=float)
        if w.ndim == 1:
            w = w[None, :]
        phi = w[:, :, None] * basis.modes.reshape(basis.M, -1)[None]
        return cls(basis, phi.reshape((w.shape[0], basis.M) + basis.grid.shape), dt)

    @classmethod
    def zero(cls, basis: BasisSet) -> "AdditiveNoise":
        return cls(basis, np.zeros((1, basis.M) + basis.grid.shape))

    @property
    def grid(self) -> Grid:
        return self.basis.grid

    @property
    def M(self) -> int:
        return self.phi.shape[1]

    @cached_property
    def hs_norm_sq(self) -> np.ndarray:
        """``sum_n ||phi_n||^2`` per subinterval."""
        flat = self.phi.reshape(self.phi.shape[0], -1)
        return np.sum(flat * flat, axis=1) * self.grid.cell_volume

    def hs_integral(self, t0: float, t1: float) -> float:
        """``int_{t0}^{t1} ||Phi(s)||_HS^2 ds``, with ``Phi = 0`` for ``s < 0``."""
        t0 = max(t0, 0.0)
        if t1 <= t0:
            return 0.0
        if self.dt is None:
            return float(self.hs_norm_sq[0]) * (t1 - t0)
        w = self._overlaps(t0, t1)
        return float(w @ self.hs_norm_sq)

    def _overlaps(self, t0, t1) -> np.ndarray:
        K = self.phi.shape[0]
        edges = self.dt * np.arange(K + 1)
        lo = np.maximum(edges[:-1], t0)
        hi = np.minimum(edges[1:], t1)
        return np.maximum(hi - lo, 0.0)


PROFILES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda x: x,
    "sin": np.sin,
    "clipped-linear": lambda x: np.clip(x, -1.0, 1.0),
    "zero": np.zeros_like,
}


@dataclass(frozen=True)
class MultiplicativeNoise:
    """``B(rho) e_n = c_n * lip * g0(rho)`` with ``g0`` a 1-Lipschitz profile, ``g0(0) = 0``."""

    basis: BasisSet
    weights: np.ndarray
    profile: str = "identity"
    lip: float = 1.0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if np.shape(self.weights) != (self.basis.M,):
            raise ValueError("need one weight per mode")
        if not self.lip >= 0:
            raise ValueError("lip must be >= 0")

    @property
    def M(self) -> int:
        return self.basis.M

    @property
    def L(self) -> float:
        """Lipschitz constant of ``sum_n |b_n(lam) - b_n(mu)|^2 <= L |lam - mu|^2``."""
        if self.profile == "zero":
            return 0.0
        return self.lip**2 * float(np.sum(np.square(self.weights)))

    def g(self, x):
        return self.lip * PROFILES[self.profile](np.asarray(x, dtype=float))


@dataclass(frozen=True)
class NoisePath:
    seed: int
    path_index: int
    T: float
    increments: np.ndarray  # shape (N, M); row k-1 holds Delta_k beta

    @property
    def N(self) -> int:
        return self.increments.shape[0]

    @property
    def M(self) -> int:
        return self.increments.shape[1]

    @property
    def tau(self) -> float:
        return self.T / self.N


def path_rng(seed: int, path_index: int = 0, stream: int = 0) -> np.random.Generator:
    """Generator for ``(seed, path_index, stream)``; streams never overlap and
    do not depend on the order in which paths are run."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(path_index, stream))
    return np.random.Generator(np.random.PCG64(ss))


def sample_path(seed: int, N: int, M: int, T: float, path_index: int = 0) -> NoisePath:
    if N < 1 or M < 1:
        raise ValueError("need N >= 1 and M >= 1")
    if not T > 0:
        raise ValueError("T must be positive")
    rng = path_rng(seed, path_index)
    tau = T / N
    inc = rng.standard_normal((N, M)) * math.sqrt(tau)
    return NoisePath(seed, path_index, T, inc)


def averaged_phi(noise: AdditiveNoise, k: int, tau: float) -> np.ndarray:
    """Average of ``Phi e_n`` over the previous interval ``[t_{k-1}, t_k]``; zero at ``k = 0``."""
    if k < 0:
        raise IndexError(f"step index k={k} must be >= 0")
    if k == 0:
        return np.zeros_like(noise.phi[0])
    if noise.dt is None:
        return noise.phi[0].copy()
    t0, t1 = (k - 1) * tau, k * tau
    horizon = noise.dt * noise.phi.shape[0]
    if t1 > horizon * (1 + 1e-12):
        raise IndexError(f"step index k={k} beyond the noise horizon {horizon}")
    w = noise._overlaps(t0, t1) / tau
    return np.tensordot(w, noise.phi, axes=1)


def increment_field(phi, path: NoisePath, k: int) -> np.ndarray:
    """``sum_n phi_n * Delta_k beta_n`` for ``k`` in ``1..N``."""
    if not 1 <= k <= path.N:
        raise IndexError(f"increment index k={k} outside 1..{path.N}")
    phi = np.asarray(phi, dtype=float)
    if phi.shape[0] != path.M:
        raise ValueError(f"{phi.shape[0]} mode fields but path has {path.M} modes")
    return np.tensordot(path.increments[k - 1], phi, axes=1)


def evaluate_B(noise: MultiplicativeNoise, rho) -> np.ndarray:
    """Mode fields ``x -> c_n g(rho(x))`` (pointwise composition, not a multiple of ``e_n``)."""
    gr = noise.g(rho)
    return noise.weights.reshape((-1,) + (1,) * gr.ndim) * gr[None]
