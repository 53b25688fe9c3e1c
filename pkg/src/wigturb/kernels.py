"""
Drift kernel Phi_1 and four-point vertex kernel Phi_0.

Both kernels reduce to one primitive, a damped oscillatory integral of the
longitudinal correlation over the separation zeta = z - z1::

    H(q, c, L) = int_0^L exp(i c zeta) B(|q|, zeta) dzeta

B is tabulated once per distinct |q| on composite Gauss-Legendre panels
(``CorrelationTable``); every kernel entry is then a weighted sum over the
table. Panels are graded geometrically from the inner-scale length up to the
longest smooth scale of B, then uniform.

Kernel values are the coefficients of the momentum delta functions: the
diagonal entries ``phi1[i]`` of Phi_1 and ``phi0(i1, i2, i3)`` of Phi_0 with
K4 = K1 - K2 + K3. Contraction over a grid leg multiplies by w.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, InvalidIntervalError
from .grid import BilinearKernel, TransverseGrid
from .turbulence import SpectrumModel, correlation_table, markovian_psd

GL_ORDER = 10
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)
# grading stops this many octaves below the panel width when B has no inner scale
_GRADING_OCTAVES = 12


def difference_shells(grid: TransverseGrid):
    """Distinct |K_i - K_j|^2 values over all grid pairs.

    Returns ``(keys, shell)``: ``keys`` are |q|^2 / delta_k^2 (integers) and
    ``shell[i, j]`` indexes ``keys``.
    """
    lat = grid.lattice // 1
    d = (lat[:, None, :] - lat[None, :, :]) // 2
    s = d[..., 0] ** 2 + d[..., 1] ** 2
    keys, shell = np.unique(s, return_inverse=True)
    return keys, shell.reshape(s.shape)


def max_phase_rate(grid: TransverseGrid) -> float:
    """Largest |(|K|^2 - |K'|^2)| / 2k over grid pairs, in rad/m."""
    ksq = grid.k_sq
    return float((ksq.max() - ksq.min()) / (2.0 * grid.k0))


def panel_breakpoints(model: SpectrumModel, grid: TransverseGrid, lengths) -> np.ndarray:
    """Panel edges on [0, max(lengths)] containing every requested length."""
    lengths = np.atleast_1d(np.asarray(lengths, dtype=float))
    top = float(lengths.max(initial=0.0))
    if top <= 0:
        return np.zeros(1)
    scales = [top / 4.0]
    if model.kappa0 > 0:
        scales.append(1.0 / model.kappa0)
    if model.kappa0 == 0:
        scales.append(1.0 / grid.delta_k)
    rate = max_phase_rate(grid)
    if rate > 0:
        scales.append(1.0 / rate)
    if model.kz_cutoff is not None:
        scales.append(1.0 / model.kz_cutoff)
    width = min(scales)
    if math.isfinite(model.kappa_m):
        start = min(1.0 / model.kappa_m, width)
    else:
        start = width / 2.0**_GRADING_OCTAVES
    edges = [0.0]
    h = start
    while edges[-1] + h < width and edges[-1] < top:
        edges.append(edges[-1] + h)
        h *= 2.0
    n_uniform = max(1, math.ceil((top - edges[-1]) / width))
    edges.extend(np.linspace(edges[-1], top, n_uniform + 1)[1:])
    edges = np.union1d(np.asarray(edges), lengths[lengths > 0])
    keep = np.concatenate([[True], np.diff(edges) > 1e-12 * top])
    return edges[keep & (edges <= top)]


@dataclass
class CorrelationTable:
    """B(|q|, zeta) on Gauss-Legendre nodes for every grid momentum transfer."""

    model: SpectrumModel
    grid: TransverseGrid
    lengths: Sequence[float]
    edges: np.ndarray = field(init=False, repr=False)
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    shell_keys: np.ndarray = field(init=False, repr=False)
    q_sq: np.ndarray = field(init=False, repr=False)
    shell: np.ndarray = field(init=False, repr=False)
    values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.shell_keys, self.shell = difference_shells(self.grid)
        self.q_sq = self.shell_keys * self.grid.delta_k**2
        self.edges = panel_breakpoints(self.model, self.grid, self.lengths)
        lo, hi = self.edges[:-1], self.edges[1:]
        half = 0.5 * (hi - lo)
        self.nodes = ((lo + hi)[:, None] * 0.5 + half[:, None] * _GL_X[None, :]).ravel()
        self.weights = (half[:, None] * _GL_W[None, :]).ravel()
        if self.nodes.size:
            self.values = correlation_table(self.model, self.q_sq, self.nodes)
        else:
            self.values = np.zeros((self.q_sq.size, 0))

    def n_nodes(self, length: float) -> int:
        """Number of leading nodes that cover [0, length]."""
        if length <= 0:
            return 0
        idx = int(np.searchsorted(self.edges, length, side="left"))
        if idx >= self.edges.size or abs(self.edges[idx] - length) > 1e-9 * max(length, 1.0):
            raise ValueError(f"length {length} is not a panel edge of this table")
        return idx * GL_ORDER

    def transform(self, shell_idx, rate, length: float, outer_rate=None, z0=0.0):
        """Weighted node sum approximating int_0^L exp(i rate zeta) B dzeta.

        With ``outer_rate`` = e given, the integrand gains the factor
        int_{z0+zeta}^{z0+L} exp(i e z') dz', which turns the result into the
        z'-integral over [z0, z0 + L] of the fixed-length transform carrying the
        external phase exp(i e z').
        """
        shell_idx = np.asarray(shell_idx)
        rate = np.asarray(rate, dtype=float)
        if outer_rate is None:
            shell_b, rate_b = np.broadcast_arrays(shell_idx, rate)
            outer_b = None
        else:
            shell_b, rate_b, outer_b = np.broadcast_arrays(
                shell_idx, rate, np.asarray(outer_rate, dtype=float)
            )
        m = self.n_nodes(length)
        if m == 0:
            return np.zeros(shell_b.shape, dtype=complex)
        zeta = self.nodes[:m]
        wb = self.values[:, :m] * self.weights[None, :m]
        flat_s, flat_r = shell_b.ravel(), rate_b.ravel()
        flat_e = None if outer_b is None else outer_b.ravel()
        out = np.empty(flat_s.size, dtype=complex)
        chunk = max(1, 1_000_000 // m)
        rest = length - zeta
        for start in range(0, flat_s.size, chunk):
            sl = slice(start, start + chunk)
            phase = np.exp(1j * flat_r[sl, None] * zeta[None, :])
            if flat_e is not None:
                e = flat_e[sl, None]
                phase = phase * np.exp(1j * e * (z0 + zeta[None, :])) * rest * _phi1_fn(
                    1j * e * rest[None, :]
                )
            out[sl] = np.einsum("ij,ij->i", phase, wb[flat_s[sl]])
        return out.reshape(shell_b.shape)

    def shell_of(self, q_lat) -> np.ndarray:
        """Shell index for momentum transfers given in doubled-lattice units."""
        q_lat = np.asarray(q_lat)
        s = (q_lat[..., 0] // 2) ** 2 + (q_lat[..., 1] // 2) ** 2
        return np.searchsorted(self.shell_keys, s)


def _phi1_fn(x):
    """(exp(x) - 1) / x, stable near 0."""
    x = np.asarray(x, dtype=complex)
    small = np.abs(x) < 1e-5
    safe = np.where(small, 1.0, x)
    return np.where(small, 1 + x / 2 + x * x / 6, np.expm1(safe) / safe)


@dataclass
class DriftKernel:
    """Diagonal of Phi_1 (coefficient of delta(K1 - K4)) on a grid."""

    grid: TransverseGrid
    diag: np.ndarray
    z: float
    z0: float
    markovian: bool = False

    def conjugate(self) -> "DriftKernel":
        """Phi_1^*, the kernel paired with Phi_1 in the adjoint drift term."""
        return DriftKernel(self.grid, self.diag.conj(), self.z, self.z0, self.markovian)

    def as_bilinear(self) -> BilinearKernel:
        """Kernel form diag(phi1)/w, so diamond products act as the continuum."""
        return BilinearKernel(
            self.grid, np.diag(self.diag / self.grid.weight), self.z0, self.z
        )


class VertexKernel:
    """Lazily evaluated four-point kernel Phi_0(K1, K2, K3, K4; z, z0).

    Values come from G(q, Delta) with q = K1 - K2 and
    Delta = |K4|^2 - |K3|^2; only that table is cached.
    """

    def __init__(
        self,
        grid: TransverseGrid,
        model: SpectrumModel,
        z: float,
        z0: float,
        markovian: bool = False,
        table: Optional[CorrelationTable] = None,
    ):
        if z < z0:
            raise InvalidIntervalError(f"z = {z} lies before z0 = {z0}")
        self.grid, self.model = grid, model
        self.z, self.z0 = float(z), float(z0)
        self.markovian = markovian
        self.length = self.z - self.z0
        if not markovian and table is None and self.length > 0:
            table = CorrelationTable(model, grid, [self.length])
        self.table = table
        self._cache: dict = {}
        self._lat = grid.lattice
        self._lat_sq = (self._lat**2).sum(axis=1)
        self._scale = (grid.delta_k / 2.0) ** 2

    def _shell_index(self, s_key: int) -> int:
        # s_key = |q|^2 / dk^2, an integer
        return int(np.searchsorted(self.table.shell_keys, s_key))

    def G(self, q_lat, delta_lat: int) -> complex:
        """G(q, Delta) with q and Delta in doubled-lattice units.

        ``q_lat`` is K1 - K2 in doubled-lattice coordinates and ``delta_lat`` is
        |K4|^2 - |K3|^2 divided by (delta_k / 2)^2.
        """
        qx, qy = int(q_lat[0]), int(q_lat[1])
        key = (qx * qx + qy * qy, int(delta_lat))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        value = self._compute_G(key[0] // 4, key[1] * self._scale)
        self._cache[key] = value
        return value

    def _compute_G(self, s_key: int, delta: float) -> complex:
        k = self.grid.k0
        if self.length == 0 or self.model.cn2 == 0:
            return 0j
        ext = np.exp(1j * self.z * delta / (2 * k))
        if self.markovian:
            q = np.array([math.sqrt(s_key) * self.grid.delta_k, 0.0])
            return complex(ext * 0.5 * markovian_psd(self.model, q))
        shell = self._shell_index(s_key)
        return complex(ext * self.table.transform(shell, -delta / (2 * k), self.length))

    def G_pairs(self) -> np.ndarray:
        """G(K_i - K_j, |K_i|^2 - |K_j|^2) for every grid pair (i, j)."""
        grid, k = self.grid, self.grid.k0
        n = grid.size
        if self.length == 0 or self.model.cn2 == 0:
            return np.zeros((n, n), dtype=complex)
        ksq = grid.k_sq
        delta = ksq[:, None] - ksq[None, :]
        ext = np.exp(1j * self.z * delta / (2 * k))
        if self.markovian:
            diff = grid.points[:, None, :] - grid.points[None, :, :]
            return ext * 0.5 * markovian_psd(self.model, diff)
        return ext * self.table.transform(self.table.shell, -delta / (2 * k), self.length)


def phi0_eval(vk: VertexKernel, i1: int, i2: int, i3: int) -> complex:
    """Phi_0(K1, K2, K3, K4) with K4 = K1 - K2 + K3; zero if K4 is off-grid."""
    lat = vk._lat
    l4 = lat[i1] - lat[i2] + lat[i3]
    i4 = vk.grid.index_of(l4)
    if i4 < 0 or vk.length == 0 or vk.model.cn2 == 0:
        return 0j
    sq = vk._lat_sq
    k = vk.grid.k0
    outer = np.exp(1j * vk.z * (sq[i2] - sq[i1]) * vk._scale / (2 * k))
    g = vk.G(lat[i1] - lat[i2], int(sq[i4] - sq[i3]))
    return complex(k * k * outer * g)


def phi1_compute(
    grid: TransverseGrid,
    model: SpectrumModel,
    z: float,
    z0: float,
    table: Optional[CorrelationTable] = None,
    indices=None,
) -> DriftKernel:
    """Diagonal drift kernel, summing K' over the grid itself.

    ``indices`` restricts the computation to selected diagonal entries (the
    others are returned as NaN).
    """
    if z < z0:
        raise InvalidIntervalError(f"z = {z} lies before z0 = {z0}")
    n = grid.size
    diag = np.zeros(n, dtype=complex)
    length = float(z - z0)
    if length == 0 or model.cn2 == 0:
        return DriftKernel(grid, diag, z, z0)
    if table is None:
        table = CorrelationTable(model, grid, [length])
    rows = np.arange(n) if indices is None else np.atleast_1d(indices)
    ksq = grid.k_sq
    rate = -(ksq[rows, None] - ksq[None, :]) / (2 * grid.k0)
    h = table.transform(table.shell[rows], rate, length)
    if indices is not None:
        diag[:] = np.nan
    diag[rows] = grid.k0**2 * grid.weight * h.sum(axis=1)
    return DriftKernel(grid, diag, z, z0)


def phi1_translated(
    grid: TransverseGrid,
    model: SpectrumModel,
    z: float,
    z0: float,
    table: Optional[CorrelationTable] = None,
) -> DriftKernel:
    """Drift diagonal with K' = K - q, q over the full difference lattice.

    Every K sees the same set of momentum transfers (the lattice used by
    ``phi1_markovian``), so grid-edge truncation cannot make the diagonal
    K-dependent; only the phase exp(-i zeta (|K|^2 - |K - q|^2) / 2k) can.
    With a delta-correlated medium this reproduces ``phi1_markovian``.
    """
    if z < z0:
        raise InvalidIntervalError(f"z = {z} lies before z0 = {z0}")
    length = float(z - z0)
    if length == 0 or model.cn2 == 0:
        return DriftKernel(grid, np.zeros(grid.size, dtype=complex), z, z0)
    if table is None:
        table = CorrelationTable(model, grid, [length])
    n = grid.n_side
    m = np.arange(-(n - 1), n)
    qx, qy = np.meshgrid(m, m, indexing="ij")
    q_lat = 2 * np.stack([qx.ravel(), qy.ravel()], axis=1)
    q = q_lat * (grid.delta_k / 2.0)
    shells = table.shell_of(q_lat)
    kp = grid.points[:, None, :] - q[None, :, :]
    rate = -(grid.k_sq[:, None] - np.sum(kp**2, axis=-1)) / (2 * grid.k0)
    h = table.transform(shells[None, :], rate, length)
    diag = grid.k0**2 * grid.weight * h.sum(axis=1)
    return DriftKernel(grid, diag, z, z0)


def phi1_markovian_grid(grid: TransverseGrid, model: SpectrumModel, z, z0) -> DriftKernel:
    """Markovian drift with the K' sum truncated to the grid (contraction-consistent)."""
    if z < z0:
        raise InvalidIntervalError(f"z = {z} lies before z0 = {z0}")
    if z == z0 or model.cn2 == 0:
        return DriftKernel(grid, np.zeros(grid.size, dtype=complex), z, z0, True)
    diff = grid.points[:, None, :] - grid.points[None, :, :]
    psd = markovian_psd(model, diff)
    diag = 0.5 * grid.k0**2 * grid.weight * psd.sum(axis=1)
    return DriftKernel(grid, diag.astype(complex), z, z0, True)


def phi1_markovian(grid: TransverseGrid, model: SpectrumModel) -> DriftKernel:
    """Constant Markovian drift (k^2/2) sum_q w Phi_n(q, 0).

    q runs over the full momentum-transfer lattice of the grid, i.e. spacing
    delta_k and |q_x|, |q_y| <= (n_side - 1) delta_k.
    """
    n = grid.n_side
    axis = np.arange(-(n - 1), n) * grid.delta_k
    qx, qy = np.meshgrid(axis, axis, indexing="ij")
    q = np.stack([qx.ravel(), qy.ravel()], axis=1)
    value = 0.5 * grid.k0**2 * grid.weight * np.sum(markovian_psd(model, q))
    diag = np.full(grid.size, value, dtype=complex)
    return DriftKernel(grid, diag, 0.0, 0.0, markovian=True)


def contract_vertex(vk: VertexKernel) -> np.ndarray:
    """sum_{K'} w Phi_0(K, K', K', K) evaluated through ``phi0_eval``."""
    n = vk.grid.size
    out = np.zeros(n, dtype=complex)
    for i in range(n):
        acc = 0j
        for j in range(n):
            acc += phi0_eval(vk, i, j, j)
        out[i] = vk.grid.weight * acc
    return out


def contraction_residual(vk: VertexKernel, dk: DriftKernel, floor: float = 0.0) -> float:
    """max_K |sum_K' w Phi_0(K,K',K',K) - Phi_1(K)| / (|Phi_1(K)| + floor)."""
    if not vk.grid.same_as(dk.grid):
        raise DimensionError("vertex and drift kernels on different grids")
    contracted = contract_vertex(vk)
    err = np.abs(contracted - dk.diag)
    denom = np.abs(dk.diag) + floor
    if not np.any(err):
        return 0.0
    tiny = np.finfo(float).tiny
    return float(np.max(err / np.maximum(denom, tiny)))


def phi0_many(vk: VertexKernel, i1, i2, i3) -> np.ndarray:
    """Vectorised ``phi0_eval`` over broadcastable index arrays."""
    i1, i2, i3 = np.broadcast_arrays(*(np.asarray(v, dtype=np.int64) for v in (i1, i2, i3)))
    out = np.zeros(i1.shape, dtype=complex)
    if vk.length == 0 or vk.model.cn2 == 0:
        return out
    lat, sq, k = vk._lat, vk._lat_sq, vk.grid.k0
    i4 = vk.grid.indices_of(lat[i1] - lat[i2] + lat[i3])
    ok = i4 >= 0
    a, b, c, d = i1[ok], i2[ok], i3[ok], i4[ok]
    delta_lat = sq[d] - sq[c]
    q_lat = lat[a] - lat[b]
    delta = delta_lat * vk._scale
    outer = np.exp(1j * vk.z * ((sq[b] - sq[a]) * vk._scale + delta) / (2 * k))
    if vk.markovian:
        q = q_lat * (vk.grid.delta_k / 2.0)
        g = 0.5 * markovian_psd(vk.model, q)
    else:
        shell = vk.table.shell_of(q_lat)
        span = 2 * int(np.abs(delta_lat).max(initial=0)) + 1
        packed = shell.astype(np.int64) * span + (delta_lat + span // 2)
        uniq, inv = np.unique(packed, return_inverse=True)
        u_shell, u_delta = np.divmod(uniq, span)
        u_delta = u_delta - span // 2
        vals = vk.table.transform(u_shell, -u_delta * vk._scale / (2 * k), vk.length)
        g = vals[inv.ravel()]
    out[ok] = k * k * outer * g
    return out


def drift_integral(grid, model, z, z0, table=None, markovian=False) -> np.ndarray:
    """int_{z0}^{z} phi1(z') dz' for every diagonal entry, exact in z'."""
    if z < z0:
        raise InvalidIntervalError(f"z = {z} lies before z0 = {z0}")
    length = float(z - z0)
    if length == 0 or model.cn2 == 0:
        return np.zeros(grid.size, dtype=complex)
    if markovian:
        return phi1_markovian_grid(grid, model, z, z0).diag * length
    if table is None:
        table = CorrelationTable(model, grid, [length])
    ksq = grid.k_sq
    rate = -(ksq[:, None] - ksq[None, :]) / (2 * grid.k0)
    h = table.transform(table.shell, rate, length, outer_rate=0.0, z0=z0)
    return grid.k0**2 * grid.weight * h.sum(axis=1)
