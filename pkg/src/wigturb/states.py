"""
Gaussian Wigner functionals on the grid.

A thermal state is stored through its inverse kernel ``theta_inv`` with
second moment <alpha*(K) alpha(K')> = theta_inv(K', K) / 2. Vacuum uses the
symmetric-ordering floor of 1/2 per discrete mode, so vacuum has
``theta_inv = I / w`` (the grid delta) and the photon number of mode K is
``w * <alpha* alpha>(K, K) - 1/2``.

The normalisation N_0 det(Theta) and the phase-space cardinality Omega are
formal objects; nothing here evaluates them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidArgumentError
from .grid import TransverseGrid, is_hermitian


@dataclass(frozen=True)
class ThermalState:
    grid: TransverseGrid
    theta_inv: np.ndarray
    z: float = 0.0

    def __post_init__(self):
        n = self.grid.size
        if self.theta_inv.shape != (n, n):
            raise DimensionError("theta_inv does not match the grid")

    def validate(self, herm_tol=1e-12, psd_tol=1e-10):
        """Check Hermiticity and positive semi-definiteness."""
        if not is_hermitian(self.theta_inv, herm_tol):
            raise InvalidArgumentError("theta_inv is not Hermitian")
        ev = np.linalg.eigvalsh(0.5 * (self.theta_inv + self.theta_inv.conj().T))
        if ev.min() < -psd_tol * max(ev.max(), 0.0):
            raise InvalidArgumentError("theta_inv is not positive semidefinite")
        return self

    def theta(self) -> np.ndarray:
        """The kernel Theta itself, satisfying Theta <> Theta^-1 = grid delta."""
        w = self.grid.weight
        return np.linalg.inv(self.theta_inv) / w**2

    def trace_w(self) -> float:
        return float(np.real(self.grid.weight * np.trace(self.theta_inv)))

    def photon_numbers(self) -> np.ndarray:
        return np.real(np.diag(self.theta_inv)) * self.grid.weight / 2.0 - 0.5

    def with_theta_inv(self, theta_inv, z=None) -> "ThermalState":
        return ThermalState(self.grid, theta_inv, self.z if z is None else z)


@dataclass(frozen=True)
class CoherentState:
    grid: TransverseGrid
    zeta: np.ndarray

    def __post_init__(self):
        if self.zeta.shape != (self.grid.size,):
            raise DimensionError("coherent parameter function does not match the grid")
        if not np.all(np.isfinite(self.zeta)):
            raise InvalidArgumentError("coherent parameter function must be finite")

    def norm_sq(self) -> float:
        """w-weighted squared norm, int |zeta|^2 d^2k/(2 pi)^2."""
        return float(self.grid.weight * np.sum(np.abs(self.zeta) ** 2))


def thermal_from_modes(grid: TransverseGrid, occupations, z: float = 0.0) -> ThermalState:
    """Diagonal thermal state with mean photon number ``occupations[i]`` per mode."""
    occ = np.asarray(occupations, dtype=float)
    if occ.shape != (grid.size,):
        raise DimensionError("one occupation per grid point required")
    if not np.all(np.isfinite(occ)) or np.any(occ < 0):
        raise InvalidArgumentError("occupations must be finite and non-negative")
    theta_inv = np.diag((2.0 * occ + 1.0) / grid.weight).astype(complex)
    return ThermalState(grid, theta_inv, z)


def coherent_second_moment(grid: TransverseGrid, field, z: float = 0.0) -> ThermalState:
    """Rank-one 'state' whose second moment is the classical field's outer product.

    theta_inv / 2 = g g^dagger in the (K', K) convention; used to set up
    classical comparisons. No vacuum floor is added.
    """
    g = np.asarray(field, dtype=complex)
    return ThermalState(grid, 2.0 * np.outer(g, g.conj()), z)


def second_moment(state: ThermalState) -> np.ndarray:
    """Matrix S with S[b, a] = <alpha*(K_a) alpha(K_b)> = theta_inv[b, a] / 2."""
    return state.theta_inv / 2.0


def gaussian_moment(theta_inv, conj_indices, plain_indices) -> complex:
    """Expectation <prod alpha*(K_a) prod alpha(K_b)> of a zero-mean Gaussian.

    Parameters
    ----------
    theta_inv : ndarray
        Inverse kernel; pair contractions are <alpha*(a) alpha(b)> = theta_inv[b, a] / 2.
    conj_indices, plain_indices : sequence of int
        Grid indices carried by the alpha* factors and the alpha factors.

    Notes
    -----
    Terms pairing alpha with alpha (or alpha* with alpha*) vanish for these
    phase-invariant states, so the moment is a permanent over alpha*-alpha
    pairings. Unequal numbers of the two kinds, including every odd total
    order, give exactly 0.
    """
    conj_indices, plain_indices = list(conj_indices), list(plain_indices)
    if len(conj_indices) + len(plain_indices) > 4:
        raise InvalidArgumentError("moments are implemented up to order 4")
    if len(conj_indices) != len(plain_indices):
        return 0j
    if not conj_indices:
        return 1.0 + 0j
    half = np.asarray(theta_inv) / 2.0
    total = 0j
    for perm in itertools.permutations(plain_indices):
        term = 1.0 + 0j
        for a, b in zip(conj_indices, perm):
            term *= half[b, a]
        total += term
    return total
