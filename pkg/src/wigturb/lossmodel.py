"""
Diagnostics for a pure-loss description of turbulence.

A loss model rescales the P-functional argument by a single factor L(z). Its
first-moment equation demands that the drift diagonal phi1(K) be the same at
every K, so the K-spread of phi1 measures how badly the model fails. With a
delta-correlated medium phi1 is constant; with a finite longitudinal
correlation it is not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, InvalidIntervalError
from .kernels import phi1_compute, phi1_markovian, phi1_translated
from .states import CoherentState

MEAN_FLOOR = 1e-300


@dataclass(frozen=True)
class LossDiagnostics:
    phi1_diag: np.ndarray
    mean_rate: complex
    k_variation: float
    markovian: bool

    @property
    def consistent(self) -> bool:
        return self.k_variation == 0.0


def k_variation(diag) -> float:
    """std(diag) / |mean(diag)|; exactly 0 for a constant vector.

    Returns ``inf`` when the mean vanishes but the entries do not.
    """
    diag = np.asarray(diag)
    if np.all(diag == diag.flat[0]):
        return 0.0
    mean = diag.mean()
    if abs(mean) < MEAN_FLOOR:
        return float("inf")
    return float(np.std(diag) / abs(mean))


def first_moment_equation(
    grid, model, z, z0, markovian=False, table=None, transfers="lattice"
) -> LossDiagnostics:
    """Drift diagonal at z and the K-independence test it must pass.

    Under a loss model the rate of the first moment would have to equal
    -phi1(K) for every K at once; ``mean_rate`` is the K-average, the only
    candidate for such a common value.

    ``transfers="lattice"`` sums the same set of momentum transfers at every
    K, as the Markovian constant does, so any spread comes from the
    longitudinal phase alone. ``transfers="grid"`` restricts K' to the grid,
    which adds a spread from the grid edge even for a delta-correlated medium.
    """
    if not z > z0:
        raise InvalidIntervalError("need z > z0")
    if transfers not in ("lattice", "grid"):
        raise InvalidArgumentError("transfers must be 'lattice' or 'grid'")
    if markovian:
        diag = phi1_markovian(grid, model).diag
    elif transfers == "lattice":
        diag = phi1_translated(grid, model, z, z0, table=table).diag
    else:
        diag = phi1_compute(grid, model, z, z0, table=table).diag
    if model.cn2 == 0:
        return LossDiagnostics(np.zeros(grid.size, dtype=complex), 0j, 0.0, markovian)
    return LossDiagnostics(diag, complex(diag.mean()), k_variation(diag), markovian)


@dataclass(frozen=True)
class DisplacedGaussian:
    """W ~ exp(-2 ||alpha - center||^2): a coherent state, vacuum covariance."""

    grid: object
    center: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        """<delta alpha*(a) delta alpha(b)> = delta_ab / (2 w): the vacuum floor."""
        return np.eye(self.grid.size) / (2.0 * self.grid.weight)

    def mean_photon_number(self) -> float:
        return float(self.grid.weight * np.sum(np.abs(self.center) ** 2))


def lossy_coherent_wigner(state: CoherentState, loss: float) -> DisplacedGaussian:
    """Coherent state after a pure loss of amplitude factor ``loss``.

    The centre shrinks to loss * zeta while the mode shape stays fixed, which
    is what a loss model predicts and what scintillation does not do.
    """
    if not 0 < loss <= 1:
        raise InvalidArgumentError("loss factor must lie in (0, 1]")
    return DisplacedGaussian(state.grid, loss * state.zeta)
