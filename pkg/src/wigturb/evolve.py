"""
Second-moment evolution of thermal states and the drift-only propagator.

The inverse kernel obeys, with every repeated index summed under the grid
measure and the right-hand side frozen at the anchor plane z0::

    d/dz Tinv[b, a](z) = Tinv[x, y] Phi0(y, a, b, x) + Tinv[x, y] Phi0(b, x, y, a)
                         - Tinv[b, a] phi1*(a) - phi1(b) Tinv[b, a]

Integrating over z' in [z0, z] is done exactly by exchanging the z' and
zeta integrals (see ``CorrelationTable.transform``), so the only
discretisation is the zeta quadrature shared with the kernels. The momentum
delta in Phi0 fixes y = x + a - b.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import (
    DimensionError,
    IntegrityError,
    InvalidArgumentError,
    InvalidIntervalError,
    SingularTransformError,
)
from .grid import TransverseGrid
from .kernels import (
    CorrelationTable,
    VertexKernel,
    drift_integral,
    phi0_many,
    phi1_compute,
    phi1_markovian_grid,
)
from .states import ThermalState
from .turbulence import SpectrumModel, markovian_psd

log = logging.getLogger(__name__)

DENSE_PHI0_LIMIT = 2_000_000  # entries of the n^3 phi0 tensor held in memory
QUARTIC_SEED = 0x5EED
QUARTIC_SAMPLES = 10_000
HERMITICITY_TOL = 1e-8


@dataclass
class EvolutionResult:
    z: np.ndarray
    states: List[ThermalState]
    trace_drift: np.ndarray
    quartic_norm: np.ndarray
    min_eigenvalue: np.ndarray
    max_eigenvalue: np.ndarray
    hermiticity: np.ndarray
    mode: str = "literal"
    quartic_seed: int = QUARTIC_SEED
    validity_exits: List[float] = field(default_factory=list)

    def state_at(self, z: float) -> ThermalState:
        idx = np.flatnonzero(np.isclose(self.z, z, rtol=0, atol=1e-12 * max(1.0, abs(z))))
        if idx.size == 0:
            raise InvalidArgumentError(f"z = {z} is not a sample of this evolution")
        return self.states[int(idx[0])]


@dataclass
class DriftPropagator:
    """Diagonal field transformation of the drift-only equation.

    ``y`` holds the coefficient of the grid delta, so the kernel is
    ``diag(y) / w`` and y = 1 at z = z0. The integrated drift
    ``decrement = 1 - y`` is stored separately to avoid cancellation.
    """

    grid: TransverseGrid
    decrement: np.ndarray
    norm: float
    z: float
    z0: float
    kappa: float = 0.0

    @property
    def y(self) -> np.ndarray:
        return 1.0 - self.decrement

    @property
    def kernel(self) -> np.ndarray:
        return np.diag(self.y / self.grid.weight)


def _pair_tables(grid: TransverseGrid):
    """Index table y[b, a, x] = index of K_x + K_a - K_b, -1 when off-grid."""
    lat = grid.lattice
    y = grid.indices_of(lat[None, None, :, :] + lat[None, :, None, :] - lat[:, None, None, :])
    return y


class _Integrator:
    """Builds integrated right-hand sides for one grid and model."""

    def __init__(self, grid, model, markovian, lengths, vertex=True):
        self.grid, self.model, self.markovian = grid, model, markovian
        self.vertex = vertex
        self.k = grid.k0
        self.ksq = grid.k_sq
        self.y_idx = _pair_tables(grid)
        lengths = [float(v) for v in lengths if v > 0]
        self.table = None
        if not markovian and lengths and model.cn2 != 0:
            self.table = CorrelationTable(model, grid, lengths)

    def vertex_part(self, theta_inv, z0, length, integrated=True):
        """Contribution of the two Phi0 terms; integrated over [z0, z0+L] or at z0+L."""
        grid, k, ksq = self.grid, self.k, self.ksq
        n = grid.size
        out = np.zeros((n, n), dtype=complex)
        if length == 0 or self.model.cn2 == 0:
            return out
        b, a, x = np.nonzero(self.y_idx >= 0)
        y = self.y_idx[b, a, x]
        # both terms share E = |x|^2 - |b|^2 + |a|^2 - |y|^2
        e = (ksq[x] - ksq[b] + ksq[a] - ksq[y]) / (2 * k)
        d1 = (ksq[x] - ksq[b]) / (2 * k)
        d2 = (ksq[a] - ksq[y]) / (2 * k)
        z = z0 + length
        if self.markovian:
            diffs = grid.points[x] - grid.points[b]
            psd = 0.5 * markovian_psd(self.model, diffs)
            if integrated:
                f = np.where(e == 0, length, (np.exp(1j * e * z) - np.exp(1j * e * z0)) / np.where(e == 0, 1, 1j * e))
            else:
                f = np.exp(1j * e * z)
            v1 = v2 = psd * f
        else:
            t = self.table
            s1 = t.shell[x, b]
            s2 = t.shell[a, y]
            if integrated:
                v1 = t.transform(s1, -d1, length, outer_rate=e, z0=z0)
                v2 = t.transform(s2, -d2, length, outer_rate=e, z0=z0)
            else:
                ph = np.exp(1j * e * z)
                v1 = ph * t.transform(s1, -d1, length)
                v2 = ph * t.transform(s2, -d2, length)
        contrib = theta_inv[x, y] * (v1 + v2)
        np.add.at(out, (b, a), contrib)
        return out * (grid.weight * k * k)

    def drift(self, z0, length, integrated=True):
        z = z0 + length
        if self.markovian:
            base = phi1_markovian_grid(self.grid, self.model, z, z0).diag
            return base * length if integrated else base
        if integrated:
            return drift_integral(self.grid, self.model, z, z0, table=self.table)
        return phi1_compute(self.grid, self.model, z, z0, table=self.table).diag

    def rhs(self, theta_inv, z0, length, integrated=True):
        f = self.drift(z0, length, integrated)
        if self.vertex:
            r = self.vertex_part(theta_inv, z0, length, integrated)
        else:
            r = np.zeros_like(theta_inv, dtype=complex)
        r -= theta_inv * f.conj()[None, :] + f[:, None] * theta_inv
        return r


def _hermitize(r, what="increment"):
    scale = np.linalg.norm(r)
    if scale == 0:
        return r, 0.0
    dev = float(np.linalg.norm(r - r.conj().T) / scale)
    if dev > HERMITICITY_TOL:
        raise IntegrityError(f"{what} lost Hermiticity (relative deviation {dev:.2e})")
    return 0.5 * (r + r.conj().T), dev


def _check_samples(initial, z_samples):
    z = np.asarray(z_samples, dtype=float)
    if z.ndim != 1 or z.size == 0:
        raise InvalidArgumentError("z_samples must be a non-empty 1-D sequence")
    if not np.isclose(z[0], initial.z, rtol=0, atol=1e-12 * max(1.0, abs(initial.z))):
        raise InvalidArgumentError("first z sample must equal the initial state's z")
    if np.any(np.diff(z) <= 0):
        raise InvalidArgumentError("z_samples must be strictly increasing")
    return z


def evolve_thermal(
    initial: ThermalState,
    grid: TransverseGrid,
    model: SpectrumModel,
    z_samples: Sequence[float],
    markovian: bool = False,
    resummed: bool = False,
    quartic: bool = True,
    psd_window: float = 1e-6,
    vertex: bool = True,
) -> EvolutionResult:
    """Evolve the inverse kernel to each requested plane.

    In the default (literal) mode every sample is Tinv(z0) plus the integrated
    right-hand side built from Tinv(z0). ``resummed=True`` re-anchors at each
    previous sample instead. ``vertex=False`` keeps only the drift terms; the
    trace is then not conserved and no quartic terms arise.
    """
    if not initial.grid.same_as(grid):
        raise DimensionError("initial state lives on a different grid")
    z = _check_samples(initial, z_samples)
    z0 = z[0]
    if resummed:
        lengths = np.diff(z)
    else:
        lengths = z[1:] - z0
    integ = _Integrator(grid, model, markovian, lengths, vertex=vertex)
    base = initial.theta_inv
    tr0 = np.real(np.trace(base)) * grid.weight
    states, drift, herm, quart, evmin, evmax, exits = [], [], [], [], [], [], []
    current = base
    for j, zj in enumerate(z):
        if j == 0:
            theta_inv = base
            dev = 0.0
        elif resummed:
            inc, dev = _hermitize(integ.rhs(current, z[j - 1], zj - z[j - 1]))
            theta_inv = current + inc
        else:
            inc, dev = _hermitize(integ.rhs(base, z0, zj - z0))
            theta_inv = base + inc
        current = theta_inv
        st = ThermalState(grid, theta_inv, float(zj))
        states.append(st)
        tr = np.real(np.trace(theta_inv)) * grid.weight
        drift.append(abs(tr - tr0) / abs(tr0) if tr0 else abs(tr - tr0))
        herm.append(dev)
        ev = np.linalg.eigvalsh(theta_inv)
        evmin.append(ev.min())
        evmax.append(ev.max())
        if ev.min() < -psd_window * max(ev.max(), 0.0):
            exits.append(float(zj))
            log.warning("positivity watchdog: left validity window at z = %g", zj)
        if quartic and not vertex:
            quart.append(0.0)
        elif quartic:
            anchor = initial if not resummed else states[max(j - 1, 0)]
            quart.append(
                quartic_residual(anchor, grid, model, float(zj), markovian=markovian, table=integ.table)
                if j > 0
                else 0.0
            )
        else:
            quart.append(np.nan)
    return EvolutionResult(
        z=z,
        states=states,
        trace_drift=np.asarray(drift),
        quartic_norm=np.asarray(quart),
        min_eigenvalue=np.asarray(evmin),
        max_eigenvalue=np.asarray(evmax),
        hermiticity=np.asarray(herm),
        mode="resummed" if resummed else "literal",
        validity_exits=exits,
    )


def thermal_rhs(state: ThermalState, grid, model, z, markovian=False, table=None) -> np.ndarray:
    """d Tinv / dz at plane z for the state anchored at ``state.z``."""
    if z < state.z:
        raise InvalidIntervalError("z must not precede the state's plane")
    integ = _Integrator(grid, model, markovian, [] if table else [z - state.z])
    if table is not None:
        integ.table = table
    return integ.rhs(state.theta_inv, state.z, z - state.z, integrated=False)


def trace_rate(state: ThermalState, grid, model, z, markovian=False) -> float:
    """w-weighted trace of the right-hand side; zero up to rounding."""
    r = thermal_rhs(state, grid, model, z, markovian)
    return float(np.real(grid.weight * np.trace(r)))


def _quartic_tensor(vk, theta, p, q, r, s, dense=None):
    """Unsymmetrised quartic coefficient C(p, q, r, s) for index arrays."""
    grid = vk.grid
    lat = grid.lattice
    n = grid.size
    t = np.arange(n)[None, :]
    p, q, r, s = (np.asarray(v)[:, None] for v in (p, q, r, s))
    w = grid.weight

    if dense is None:
        def phi(a, b, c):
            return phi0_many(vk, a, b, c)
    else:
        def phi(a, b, c):
            return dense[a, b, c]

    def gather(mat, i, j):
        ok = (i >= 0) & (j >= 0)
        return np.where(ok, mat[np.where(i >= 0, i, 0), np.where(j >= 0, j, 0)], 0.0)

    u1 = grid.indices_of(lat[p] - lat[t] + lat[r])
    c1 = phi(p, t, r) * gather(theta, t, q) * gather(theta, u1, s)
    v2 = grid.indices_of(lat[s] + lat[q] - lat[t])
    c2 = np.where(v2 >= 0, phi(t, q, np.where(v2 >= 0, v2, 0)), 0) * gather(theta, p, t) * gather(theta, r, v2)
    v3 = grid.indices_of(lat[s] - lat[p] + lat[t])
    c3 = np.where(v3 >= 0, phi(p, t, np.where(v3 >= 0, v3, 0)), 0) * gather(theta, t, q) * gather(theta, r, v3)
    u5 = grid.indices_of(lat[t] - lat[q] + lat[r])
    c5 = phi(t, q, r) * gather(theta, p, t) * gather(theta, u5, s)
    return w * (c1 + c2 - c3 - c5).sum(axis=1)


def quartic_residual(
    state: ThermalState,
    grid,
    model,
    z,
    markovian=False,
    samples=QUARTIC_SAMPLES,
    seed=QUARTIC_SEED,
    table=None,
) -> float:
    """Size of the quartic-in-alpha terms generated by the vertex kernel.

    Returns 4 * ||C||_F for the symmetrised coefficient tensor C of
    alpha*_p alpha_q alpha*_r alpha_s. Grids of at most 3x3 use the full
    tensor; larger grids estimate the norm from ``samples`` quadruples drawn
    with a fixed seed.
    """
    if z < state.z:
        raise InvalidIntervalError("z must not precede the state's plane")
    if z == state.z or model.cn2 == 0:
        return 0.0
    if table is not None:
        try:
            table.n_nodes(z - state.z)
        except ValueError:
            table = None
    vk = VertexKernel(grid, model, z, state.z, markovian=markovian, table=table)
    try:
        theta = state.theta()
    except np.linalg.LinAlgError as exc:
        raise InvalidArgumentError("the quartic norm needs an invertible inverse kernel") from exc
    n = grid.size
    total = n**4
    if grid.n_side <= 3:
        idx = np.indices((n, n, n, n)).reshape(4, -1)
    else:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, n, size=(4, samples))
    p, q, r, s = idx
    dense = None
    if n**3 <= DENSE_PHI0_LIMIT:
        ii = np.indices((n, n, n)).reshape(3, -1)
        dense = phi0_many(vk, *ii).reshape(n, n, n)
    c = 0.25 * (
        _quartic_tensor(vk, theta, p, q, r, s, dense)
        + _quartic_tensor(vk, theta, r, q, p, s, dense)
        + _quartic_tensor(vk, theta, p, s, r, q, dense)
        + _quartic_tensor(vk, theta, r, s, p, q, dense)
    )
    norm_sq = np.sum(np.abs(c) ** 2) * (total / idx.shape[1])
    return float(4.0 * np.sqrt(norm_sq))


def drift_only_propagator(grid, model, z, z0, markovian=False, table=None) -> DriftPropagator:
    """Y(z) = 1 - int phi1 dz' on the diagonal and N(z) = 1 - int tr(Phi1 + Phi1*)."""
    if z < z0:
        raise InvalidIntervalError(f"z = {z} lies before z0 = {z0}")
    f = drift_integral(grid, model, z, z0, table=table, markovian=markovian)
    kappa_int = -float(np.sum(2.0 * f.real))
    return DriftPropagator(grid, f, 1.0 + kappa_int, float(z), float(z0), kappa_int)


def apply_field_transform(state: ThermalState, prop: DriftPropagator) -> ThermalState:
    """Second moment under alpha -> Y <> alpha: Tinv -> Y <> Tinv <> Y^dagger."""
    if not state.grid.same_as(prop.grid):
        raise DimensionError("propagator and state on different grids")
    if np.any(prop.y == 0):
        raise SingularTransformError("drift propagator has a zero diagonal entry")
    f = prop.decrement
    t = state.theta_inv
    cross = f[:, None] * t * f.conj()[None, :]
    theta_inv = t - (f[:, None] * t + t * f.conj()[None, :]) + cross
    return ThermalState(state.grid, theta_inv, prop.z)
