"""Periodic lattice on the box [-R, R)^d and its discrete calculus.

Fields are plain numpy arrays of shape ``grid.shape``; vector fields carry
a leading component axis, shape ``(d, *grid.shape)``. Integrals are lattice
sums weighted by the cell volume ``h**d``.

``grad`` uses forward differences and ``div`` backward differences, so that
``inner(grad(u), F) == -inner(u, div(F))`` holds exactly up to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = ["Grid"]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``n`` points per axis on ``[-R, R)^d``."""

    d: int
    n: int
    half_width: float = math.pi

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension d must be 1, 2 or 3, got {self.d}")
        if self.n < 2:
            raise ValueError(f"need n >= 2 points per axis, got {self.n}")
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if self.n**self.d > np.iinfo(np.intp).max:
            raise ValueError("grid too large for this platform")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def volume(self) -> float:
        return (2.0 * self.half_width) ** self.d

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        x = -self.half_width + self.h * np.arange(self.n)
        return (x,) * self.d

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays, each of shape ``self.shape`` (``ij`` indexing)."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def vector_zeros(self) -> np.ndarray:
        return np.zeros((self.d,) + self.shape)

    def _check_field(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            raise ValueError(f"field shape {u.shape} does not match grid {self.shape}")
        return u

    def _check_vector(self, F):
        F = np.asarray(F, dtype=float)
        if F.shape != (self.d,) + self.shape:
            raise ValueError(
                f"vector field shape {F.shape} does not match {(self.d,) + self.shape}"
            )
        return F

    # -- discrete calculus ---------------------------------------------------

    def grad(self, u) -> np.ndarray:
        """Forward-difference gradient with periodic wraparound."""
        u = self._check_field(u)
        return np.stack([(np.roll(u, -1, axis=i) - u) / self.h for i in range(self.d)])

    def div(self, F) -> np.ndarray:
        """Backward-difference divergence, the negative adjoint of :meth:`grad`."""
        F = self._check_vector(F)
        out = np.zeros(self.shape)
        for i in range(self.d):
            out += (F[i] - np.roll(F[i], 1, axis=i)) / self.h
        return out

    def laplacian(self, u) -> np.ndarray:
        return self.div(self.grad(u))

    def laplacian_symbol(self) -> np.ndarray:
        """Eigenvalues of ``-div(grad)`` on the FFT frequency lattice."""
        k = np.fft.fftfreq(self.n) * self.n
        lam1 = (4.0 / self.h**2) * np.sin(np.pi * k / self.n) ** 2
        lam = np.zeros(self.shape)
        for i in range(self.d):
            shape = [1] * self.d
            shape[i] = self.n
            lam = lam + lam1.reshape(shape)
        return lam

    @cached_property
    def difference_matrices(self) -> tuple[sp.csr_matrix, ...]:
        """Sparse forward-difference matrices acting on raveled (C-order) fields."""
        eye = sp.identity(self.n, format="csr")
        shift = sp.csr_matrix(
            (np.ones(self.n), (np.arange(self.n), (np.arange(self.n) + 1) % self.n)),
            shape=(self.n, self.n),
        )
        d1 = (shift - eye) / self.h
        mats = []
        for i in range(self.d):
            factors = [eye] * self.d
            factors[i] = d1
            m = factors[0]
            for f in factors[1:]:
                m = sp.kron(m, f, format="csr")
            mats.append(sp.csr_matrix(m))
        return tuple(mats)

    # -- quadrature and norms ------------------------------------------------

    def integrate(self, values) -> float:
        return float(np.sum(values) * self.cell_volume)

    def inner(self, u, v) -> float:
        """L2 inner product of two fields, or of two vector fields."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.shape != v.shape:
            raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
        return float(np.vdot(u, v) * self.cell_volume)

    def norm_l2(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return math.sqrt(max(self.inner(u, u), 0.0))

    def norm_lp(self, u, p: float) -> float:
        """L^p norm of a field, or of a vector field with Euclidean pointwise norm."""
        _check_exponent(p)
        return self.integrate(self._pointwise_abs(u) ** p) ** (1.0 / p)

    def norm_lp_pow(self, u, p: float) -> float:
        """``norm_lp(u, p) ** p`` without the root."""
        _check_exponent(p)
        return self.integrate(self._pointwise_abs(u) ** p)

    def norm_V(self, u, p: float) -> float:
        """``||u||_2 + ||grad u||_p``."""
        return self.norm_l2(u) + self.norm_lp(self.grad(u), p)

    def _pointwise_abs(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape == self.shape:
            return np.abs(u)
        if u.shape == (self.d,) + self.shape:
            return np.sqrt(np.sum(u * u, axis=0))
        raise ValueError(f"array of shape {u.shape} is not a field on {self}")


def _check_exponent(p):
    if not p > 1:
        raise ValueError(f"exponent p must satisfy p > 1, got {p}")
