"""
Classical Monte-Carlo check of the second-moment evolution.

Refractive-index media are drawn as 3-D Gaussian random fields with the
requested power spectrum, a deterministic field spectrum is pushed through
each medium with a split-step integrator, and the ensemble mutual coherence
function of the co-propagating spectrum is compared with the thermal-state
second moment.

Conventions shared with the kernel code:

* free propagation multiplies G(K) by exp(+i |K|^2 h / 2k),
* the medium acts as dG/dz = -i k (N * G)(K) where
  N(q, z) = int n(X, z) exp(-i q.X) d^2X,
* G_c(K, z) = exp(-i z |K|^2 / 2k) G(K, z).

The medium step is applied as the exact exponential of the Hermitian
operator k w N(K - K') dz restricted to the transverse grid, so every step
is unitary on the grid and the Monte-Carlo carries the same truncation as
the kernels.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DimensionError, IntegrityError, InvalidArgumentError
from .grid import TransverseGrid
from .turbulence import SpectrumModel, _psd_of_ksq, longitudinal_correlation

log = logging.getLogger(__name__)

NORM_TOL = 1e-10


@dataclass(frozen=True)
class Medium3D:
    """Real refractive-index fluctuation on a periodic (nx, ny, nz) box.

    ``values[ix, iy, iz]`` sits at x = ix*dx, y = iy*dy, z = z0 + iz*dz.
    """

    nx: int
    ny: int
    nz: int
    dx: float
    dy: float
    dz: float
    values: np.ndarray
    seed: int = 0
    z0: float = 0.0
    imag_residue: float = 0.0

    def __post_init__(self):
        if self.values.shape != (self.nx, self.ny, self.nz):
            raise DimensionError("medium values do not match dims")

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def length(self) -> float:
        return self.nz * self.dz


@dataclass(frozen=True)
class FieldRealization:
    """Co-propagating spectrum G_c on a transverse grid at plane z."""

    grid: TransverseGrid
    gc: np.ndarray
    z: float = 0.0
    norm_history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.gc.shape != (self.grid.size,):
            raise DimensionError("field does not match the grid")
        if not np.all(np.isfinite(self.gc)):
            raise InvalidArgumentError("field has non-finite entries")

    def norm(self) -> float:
        return float(self.grid.weight * np.sum(np.abs(self.gc) ** 2))


@dataclass(frozen=True)
class MCFEstimate:
    """Sample mean of conj(G_c(K_a)) G_c(K_b) with per-entry standard errors."""

    mcf: np.ndarray
    n_realizations: int
    stderr: np.ndarray
    stderr_re: np.ndarray
    stderr_im: np.ndarray


@dataclass(frozen=True)
class ComparisonReport:
    z: float
    increment_mc: np.ndarray
    increment_moment: np.ndarray
    z_scores: np.ndarray
    chi2_per_dof: float
    frac_within_2: float
    frac_beyond_3: float


def _wavenumbers(n, d):
    return 2.0 * math.pi * np.fft.fftfreq(n, d)


def medium_spectrum(model: SpectrumModel, dims, spacings, thin_screen=False) -> np.ndarray:
    """Phi_n on the FFT wave-vector lattice of the box.

    The zero-frequency cell is set to 0 when the spectrum has no outer scale;
    it only carries the volume mean. ``thin_screen`` drops the k_z dependence,
    which makes slices independent (the delta-correlated limit).
    """
    nx, ny, nz = dims
    kx = _wavenumbers(nx, spacings[0])[:, None, None]
    ky = _wavenumbers(ny, spacings[1])[None, :, None]
    kz = _wavenumbers(nz, spacings[2])[None, None, :]
    q_sq = kx**2 + ky**2
    if thin_screen:
        kz = np.zeros_like(kz)
    k_sq = q_sq + kz**2
    if model.kz_cutoff is not None:
        ksq_eff = np.broadcast_to(q_sq, k_sq.shape)
        mask = np.abs(kz) <= model.kz_cutoff
    else:
        ksq_eff = k_sq
        mask = None
    safe = np.where(ksq_eff == 0, 1.0, ksq_eff) if model.kappa0 == 0 else ksq_eff
    phi = _psd_of_ksq(model, safe)
    if model.kappa0 == 0:
        phi = np.where(ksq_eff == 0, 0.0, phi)
    if mask is not None:
        phi = phi * mask
    return np.broadcast_to(phi, k_sq.shape)


@lru_cache(maxsize=None)
def _warn_unresolved(dz, inner):
    log.warning("dz = %g does not resolve the inner scale %g", dz, inner)


def sample_medium(model: SpectrumModel, dims, spacings, seed: int, thin_screen=False, z0=0.0) -> Medium3D:
    """One Gaussian realization of n(x) with spectrum Phi_n.

    n = sum_k chi_k sqrt(Phi_n(k) / V) exp(i k.x) with chi the unitary DFT of
    real white noise, so chi is Hermitian-symmetric with <|chi|^2> = 1 and
    the variance of n is sum_k Phi_n(k) / V, the lattice version of
    int Phi_n d^3k / (2 pi)^3.
    """
    dims = tuple(int(d) for d in dims)
    spacings = tuple(float(s) for s in spacings)
    if len(dims) != 3 or len(spacings) != 3:
        raise InvalidArgumentError("dims and spacings need three entries")
    if min(dims) < 4:
        raise InvalidArgumentError("need at least 4 cells per axis")
    if min(spacings) <= 0:
        raise InvalidArgumentError("spacings must be positive")
    if model.variant == "kolmogorov":
        raise InvalidArgumentError("a medium needs an outer-scale or tatarskii spectrum")
    if model.inner_scale is not None and spacings[2] > model.inner_scale / 4:
        _warn_unresolved(spacings[2], model.inner_scale)
    if model.cn2 == 0:
        return Medium3D(*dims, *spacings, np.zeros(dims), seed, z0)
    volume = np.prod(dims) * np.prod(spacings)
    rng = np.random.default_rng(seed)
    eta = rng.standard_normal(dims)
    amp = np.sqrt(medium_spectrum(model, dims, spacings, thin_screen) / volume)
    ncell = float(np.prod(dims))
    # fftn(eta)/sqrt(N) is the unit-variance chi; ifftn carries 1/N
    field_c = np.fft.ifftn(np.fft.fftn(eta) * amp) * math.sqrt(ncell)
    values = np.ascontiguousarray(field_c.real)
    residue = float(np.abs(field_c.imag).max())
    return Medium3D(*dims, *spacings, values, seed, z0, residue)


def medium_variance_oracle(model: SpectrumModel, spacings, rtol=1e-8) -> float:
    """int Phi_n d^3k / (2 pi)^3 over the Nyquist box of the spacings."""
    from scipy import integrate

    bx, by, bz = (math.pi / s for s in spacings)

    def inner(kx, ky):
        return integrate.quad(
            lambda kz: float(_psd_of_ksq(model, kx * kx + ky * ky + kz * kz)),
            0.0, bz, epsrel=rtol, limit=200,
        )[0]

    # integrand is even in every axis; peaked near k = 0
    def mid(kx):
        return integrate.quad(lambda ky: inner(kx, ky), 0.0, by, epsrel=rtol, limit=200)[0]

    total = integrate.quad(mid, 0.0, bx, epsrel=rtol, limit=200)[0]
    return 8.0 * total / (2 * math.pi) ** 3


def slice_spectra(medium: Medium3D, grid: TransverseGrid, n_slices: int | None = None) -> np.ndarray:
    """N(q, z_j) for every difference vector of the grid and every slice.

    Returns shape (nz, 2n-1, 2n-1) indexed by (j, mx + n - 1, my + n - 1)
    for q = (mx, my) * dk.
    """
    _check_box(medium, grid)
    n = grid.n_side
    # N(q) = dx dy sum_X n(X) exp(-i q.X): forward FFT over the transverse axes
    vals = medium.values if n_slices is None else medium.values[:, :, :n_slices]
    spec = np.fft.fft2(vals, axes=(0, 1)) * (medium.dx * medium.dy)
    m = np.arange(-(n - 1), n)
    sub = spec[np.ix_(m % medium.nx, m % medium.ny)]
    return np.moveaxis(sub, 2, 0)


def _check_box(medium, grid):
    n = grid.n_side
    for count, d in ((medium.nx, medium.dx), (medium.ny, medium.dy)):
        if abs(count * d * grid.delta_k - 2 * math.pi) > 1e-9 * 2 * math.pi:
            raise DimensionError("transverse box must have side 2 pi / dk")
        if count < 2 * n - 1:
            raise DimensionError("transverse sampling too coarse for the grid differences")


def _toeplitz_index(grid):
    n = grid.n_side
    ix, iy = np.divmod(np.arange(grid.size), n)
    dx = ix[:, None] - ix[None, :] + n - 1
    dy = iy[:, None] - iy[None, :] + n - 1
    return dx, dy


def medium_generators(medium: Medium3D, grid: TransverseGrid, k0: float, n_steps: int) -> np.ndarray:
    """Hermitian step generators H_j = k w N(K - K', z_j) dz, one per slice."""
    if n_steps > medium.nz:
        raise InvalidArgumentError("propagation runs past the end of the medium")
    spec = slice_spectra(medium, grid, n_steps)
    dx, dy = _toeplitz_index(grid)
    h = k0 * grid.weight * medium.dz * spec[:, dx, dy]
    return 0.5 * (h + np.conj(np.swapaxes(h, 1, 2)))


def _apply_exp(h, g, tol=1e-18):
    """exp(-i h) g for Hermitian h.

    Weak steps use the Taylor series on the vector, stopped once a term falls
    below ``tol`` relative; steps with a large generator use eigh.
    """
    bound = np.abs(h).sum(axis=1).max()
    if bound > 0.5:
        ev, vec = np.linalg.eigh(h)
        return vec @ (np.exp(-1j * ev) * (vec.conj().T @ g))
    out = g.copy()
    term = g
    scale = np.abs(g).max()
    for m in range(1, 40):
        term = (-1j / m) * (h @ term)
        out += term
        if np.abs(term).max() <= tol * scale:
            break
    return out


def propagate_classical(
    initial: FieldRealization,
    medium: Medium3D,
    k0: float,
    distance: float | None = None,
) -> FieldRealization:
    """Split-step propagation of G_c through ``medium``.

    Each slice of thickness dz gets half a free step, the full medium step
    evaluated on that slice, and another half free step. The step is applied
    to G_c directly, as the medium exponential conjugated by the free phase
    at the slice centre, so vacuum leaves G_c untouched exactly.
    """
    grid = initial.grid
    if not k0 > 0:
        raise InvalidArgumentError("k0 must be positive")
    if abs(medium.z0 - initial.z) > 1e-12 * max(1.0, abs(initial.z)):
        raise InvalidArgumentError("medium must start at the field's plane")
    distance = medium.length if distance is None else float(distance)
    steps_f = distance / medium.dz
    n_steps = int(round(steps_f))
    if abs(steps_f - n_steps) > 1e-9 * max(1.0, steps_f) or n_steps < 0:
        raise InvalidArgumentError("distance must be a whole number of medium slices")
    ksq = grid.k_sq
    z = initial.z
    g = initial.gc.copy()
    norm0 = initial.norm()
    norms = np.empty(n_steps + 1)
    norms[0] = norm0
    gens = medium_generators(medium, grid, k0, n_steps) if n_steps else None
    for j in range(n_steps):
        # Strang step half-free, medium, half-free seen in the co-propagating
        # frame: the free phase at the slice centre conjugates the generator
        d = np.exp(1j * (z + (j + 0.5) * medium.dz) * ksq / (2 * k0))
        hc = d.conj()[:, None] * gens[j] * d[None, :]
        g = _apply_exp(hc, g)
        norms[j + 1] = grid.weight * np.sum(np.abs(g) ** 2)
    z_end = z + n_steps * medium.dz
    drift = np.abs(norms - norm0).max() / norm0 if norm0 else 0.0
    if drift > NORM_TOL:
        raise IntegrityError(f"split-step norm drift {drift:.3e} exceeds {NORM_TOL:g}")
    return FieldRealization(grid, g, z_end, norms)


def estimate_mcf(fields) -> MCFEstimate:
    """Sample mean and standard error of conj(G_c(a)) G_c(b)."""
    fields = list(fields)
    if len(fields) < 2:
        raise InvalidArgumentError("need at least two realizations")
    g0 = fields[0]
    for f in fields[1:]:
        if not f.grid.same_as(g0.grid) or f.z != g0.z:
            raise DimensionError("realizations live on different grids or planes")
    gc = np.stack([f.gc for f in fields])
    return _mcf_from_array(gc)


def _mcf_from_array(gc) -> MCFEstimate:
    acc = _Accumulator(gc.shape[1])
    for row in gc:
        acc.add(row)
    return acc.result()


class _Accumulator:
    """Running mean and squared deviations (Welford) of conj(g_a) g_b.

    The add() order fixes the rounding; identical inputs give exactly zero
    spread.
    """

    def __init__(self, size):
        self.n = 0
        self.mean = np.zeros((size, size), dtype=complex)
        self.m2_re = np.zeros((size, size))
        self.m2_im = np.zeros((size, size))

    def add(self, g):
        prod = np.outer(g.conj(), g)
        self.n += 1
        delta = prod - self.mean
        self.mean += delta / self.n
        after = prod - self.mean
        self.m2_re += delta.real * after.real
        self.m2_im += delta.imag * after.imag

    def result(self) -> MCFEstimate:
        n = self.n
        if n < 2:
            raise InvalidArgumentError("need at least two realizations")
        mean = 0.5 * (self.mean + self.mean.conj().T)
        se_re = np.sqrt(self.m2_re / (n - 1) / n)
        se_im = np.sqrt(self.m2_im / (n - 1) / n)
        return MCFEstimate(mean, n, np.hypot(se_re, se_im), se_re, se_im)


@dataclass(frozen=True)
class EnsembleResult:
    estimate: MCFEstimate
    max_norm_drift: float
    norm_drifts: np.ndarray
    edge_fraction: float
    max_imag_residue: float
    medium_means: np.ndarray


def _edge_mask(grid):
    lat = grid.lattice
    edge = grid.n_side - 1
    return (np.abs(lat[:, 0]) == edge) | (np.abs(lat[:, 1]) == edge)


def run_ensemble(
    grid: TransverseGrid,
    model: SpectrumModel,
    field0: np.ndarray,
    z0: float,
    distance: float,
    n_realizations: int,
    seed: int,
    nz: int,
    dz: float,
    nx: int | None = None,
    thin_screen: bool = False,
    workers: int = 1,
    batch: int = 16,
) -> EnsembleResult:
    """Propagate ``n_realizations`` independent media and estimate the MCF.

    Realization i uses the i-th child of ``SeedSequence(seed)``; results are
    reduced in index order regardless of ``workers``.
    """
    if n_realizations < 2:
        raise InvalidArgumentError("need at least two realizations")
    nx = 2 * grid.n_side if nx is None else int(nx)
    dx = 2 * math.pi / (nx * grid.delta_k)
    children = np.random.SeedSequence(int(seed)).spawn(n_realizations)
    seeds = [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]
    init = FieldRealization(grid, np.asarray(field0, dtype=complex), float(z0))
    edge = _edge_mask(grid)

    def one(i):
        med = sample_medium(model, (nx, nx, nz), (dx, dx, dz), seeds[i], thin_screen, z0)
        out = propagate_classical(init, med, grid.k0, distance)
        norms = out.norm_history
        drift = np.abs(norms - norms[0]).max() / norms[0] if norms[0] else 0.0
        p = np.abs(out.gc) ** 2
        if grid.n_side <= 2:
            frac = np.nan  # every point is on the outer ring
        else:
            frac = p[edge].sum() / p.sum() if p.sum() else 0.0
        return out.gc, drift, frac, med.imag_residue, med.mean

    acc = _Accumulator(grid.size)
    drifts, fracs, resid, means = [], [], [], []
    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
        for start in range(0, n_realizations, batch):
            for gc, d, f, r, m in pool.map(one, range(start, min(start + batch, n_realizations))):
                acc.add(gc)
                drifts.append(d)
                fracs.append(f)
                resid.append(r)
                means.append(m)
    return EnsembleResult(
        acc.result(), float(max(drifts)), np.array(drifts), float(np.max(fracs)),
        float(max(resid)), np.array(means),
    )


def compare_mcf_to_moment(mcf: MCFEstimate, evo, z: float, allowance: float = 0.0) -> ComparisonReport:
    """z-scores of the Monte-Carlo MCF increment against (Tinv(z) - Tinv(z0)) / 2.

    The initial field is deterministic, so the initial MCF is read from the
    evolution's first state. Real and imaginary parts of every a <= b entry
    are scored separately (imaginary parts of the diagonal are skipped).
    """
    s0 = evo.states[0]
    if mcf.mcf.shape != s0.theta_inv.shape:
        raise DimensionError("MCF and evolution live on different grids")
    sz = evo.state_at(z)
    # mcf[a, b] = <conj(g_a) g_b> = theta_inv[b, a] / 2
    start = 0.5 * s0.theta_inv.T
    inc_mc = mcf.mcf - start
    inc_th = 0.5 * (sz.theta_inv - s0.theta_inv).T
    iu = np.triu_indices(inc_mc.shape[0])
    off = iu[0] != iu[1]
    diff_re = (inc_mc - inc_th).real[iu]
    diff_im = (inc_mc - inc_th).imag[iu][off]
    err_re = mcf.stderr_re[iu] + allowance
    err_im = mcf.stderr_im[iu][off] + allowance
    diff = np.concatenate([diff_re, diff_im])
    err = np.concatenate([err_re, err_im])
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = np.where(err > 0, diff / np.where(err > 0, err, 1.0), np.where(diff == 0, 0.0, np.inf))
    a = np.abs(zs)
    return ComparisonReport(
        float(z), inc_mc, inc_th, zs, float(np.mean(zs**2)),
        float(np.mean(a < 2)), float(np.mean(a > 3)),
    )


def medium_autocorrelation(media, max_lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Longitudinal autocorrelation of the transverse q = 0 component.

    Returns ``(zeta, c)`` with c(zeta) = <N(0, z) N(0, z + zeta)> / A, where
    N(0, z) is the transverse integral of the slice and A the transverse
    area. Averages over realizations and over all z of the periodic box.
    """
    media = list(media)
    if not media:
        raise InvalidArgumentError("no media given")
    m0 = media[0]
    area = m0.nx * m0.dx * m0.ny * m0.dy
    acc = np.zeros(max_lag + 1)
    for med in media:
        n0 = med.values.sum(axis=(0, 1)) * med.dx * med.dy
        f = np.fft.rfft(n0)
        circ = np.fft.irfft(np.abs(f) ** 2, n=med.nz) / med.nz
        acc += circ[: max_lag + 1]
    return np.arange(max_lag + 1) * m0.dz, acc / (len(media) * area)


def correlation_shape_error(model: SpectrumModel, zeta, sampled) -> float:
    """Largest gap between the normalised sampled and exact B(0, zeta) shapes."""
    exact = np.array([longitudinal_correlation(model, np.zeros(2), z) for z in zeta])
    return float(np.max(np.abs(sampled / sampled[0] - exact / exact[0])))
