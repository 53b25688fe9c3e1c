"""
Transverse wave-vector grid and the weighted contraction algebra.

Every integral over the transverse plane with measure d^2k/(2 pi)^2 becomes a
sum weighted by ``w = delta_k**2 / (2 pi)**2``; a continuum Dirac delta becomes
``1/w`` times a Kronecker delta. With these two rules, continuum kernel
identities hold exactly as matrix identities on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidArgumentError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TransverseGrid:
    """Zero-centred square grid of transverse wave vectors.

    Points sit at ``(i - (n_side - 1)/2) * delta_k`` along each axis, so the
    grid is closed under K -> -K. Ordering is row-major: index
    ``ix * n_side + iy``.
    """

    n_side: int
    delta_k: float
    k0: float
    points: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        if self.n_side < 1 or self.delta_k <= 0 or self.k0 <= 0:
            raise InvalidArgumentError("grid needs n_side >= 1, delta_k > 0, k0 > 0")
        self.points.setflags(write=False)

    @property
    def size(self) -> int:
        return self.n_side * self.n_side

    @property
    def weight(self) -> float:
        """Contraction weight w = delta_k^2 / (2 pi)^2."""
        return self.delta_k**2 / TWO_PI**2

    @property
    def k_sq(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.points, self.points)

    @property
    def lattice(self) -> np.ndarray:
        """Integer lattice coordinates ``2*(i - (n-1)/2)``; differences are even."""
        axis = 2 * np.arange(self.n_side) - (self.n_side - 1)
        ix, iy = np.meshgrid(axis, axis, indexing="ij")
        return np.stack([ix.ravel(), iy.ravel()], axis=1)

    def index_of(self, lattice_xy) -> int:
        """Index of the point with doubled-lattice coordinates, or -1 if off-grid."""
        lx, ly = (int(v) for v in lattice_xy)
        n = self.n_side
        ix, rx = divmod(lx + n - 1, 2)
        iy, ry = divmod(ly + n - 1, 2)
        if rx or ry or not (0 <= ix < n and 0 <= iy < n):
            return -1
        return ix * n + iy

    def indices_of(self, lattice_xy) -> np.ndarray:
        """Vectorised ``index_of`` over an array of shape (..., 2)."""
        lat = np.asarray(lattice_xy, dtype=np.int64)
        n = self.n_side
        sx, sy = lat[..., 0] + n - 1, lat[..., 1] + n - 1
        ix, iy = sx // 2, sy // 2
        ok = (sx % 2 == 0) & (sy % 2 == 0) & (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n)
        return np.where(ok, ix * n + iy, -1)

    def same_as(self, other: "TransverseGrid") -> bool:
        return (
            self.n_side == other.n_side
            and self.delta_k == other.delta_k
            and self.k0 == other.k0
        )


@dataclass(frozen=True)
class BilinearKernel:
    """A two-point kernel K(K, K') sampled on a grid."""

    grid: TransverseGrid
    values: np.ndarray
    z_from: float = 0.0
    z_to: float = 0.0
    hermitian: bool = False

    def __post_init__(self):
        n = self.grid.size
        if self.values.shape != (n, n):
            raise DimensionError(
                f"kernel shape {self.values.shape} does not match grid size {n}"
            )
        if self.hermitian and not is_hermitian(self.values):
            raise InvalidArgumentError("kernel flagged Hermitian but is not")

    def adjoint(self) -> "BilinearKernel":
        return BilinearKernel(
            self.grid, self.values.conj().T, self.z_from, self.z_to, self.hermitian
        )


def is_hermitian(values, rtol=1e-12) -> bool:
    scale = max(np.abs(values).max(initial=0.0), np.finfo(float).tiny)
    return bool(np.abs(values - values.conj().T).max(initial=0.0) <= rtol * scale)


def build_grid(n_side: int, k_extent: float, k0: float) -> TransverseGrid:
    """Build a zero-centred grid with spacing ``2 * k_extent / n_side``.

    Parameters
    ----------
    n_side : int
        Points per axis, at least 2.
    k_extent : float
        Half-width of the sampled wave-vector square in rad/m.
    k0 : float
        Optical wavenumber 2 pi / lambda in rad/m.
    """
    if int(n_side) != n_side or n_side < 2:
        raise InvalidArgumentError(f"n_side must be an integer >= 2, got {n_side}")
    if not (k_extent > 0 and k0 > 0):
        raise InvalidArgumentError("k_extent and k0 must be positive")
    n_side = int(n_side)
    dk = 2.0 * k_extent / n_side
    axis = (np.arange(n_side) - (n_side - 1) / 2.0) * dk
    kx, ky = np.meshgrid(axis, axis, indexing="ij")
    points = np.stack([kx.ravel(), ky.ravel()], axis=1)
    return TransverseGrid(n_side, dk, float(k0), points)


def grid_delta(grid: TransverseGrid) -> BilinearKernel:
    """Discrete (2 pi)^2 delta(K - K'): diagonal with entries 1/w."""
    values = np.eye(grid.size, dtype=complex) / grid.weight
    return BilinearKernel(grid, values, hermitian=True)


def diamond(a: BilinearKernel, b: BilinearKernel) -> BilinearKernel:
    """Contract the inner arguments of two kernels, w * (A @ B)."""
    if not a.grid.same_as(b.grid):
        raise DimensionError("diamond contraction across different grids")
    values = a.grid.weight * (a.values @ b.values)
    return BilinearKernel(a.grid, values, min(a.z_from, b.z_from), max(a.z_to, b.z_to))


def trace_w(values: np.ndarray, grid: TransverseGrid) -> complex:
    """Grid trace with the contraction measure, w * sum_i A_ii."""
    return grid.weight * np.trace(values)
