"""
Refractive-index power spectra and their longitudinal correlation.

Spectra (m^3), with kappa_0 = 2 pi / L0 and kappa_m = 5.92 / l0::

    kolmogorov   0.033 Cn2 |k|^(-11/3)
    von_karman   0.033 Cn2 (|k|^2 + kappa_0^2)^(-11/6) exp(-|k|^2 / kappa_m^2)
    tatarskii    von_karman with kappa_0 = 0

An inner scale of ``None`` drops the Gaussian roll-off. The ``kz_cutoff``
field turns any model into a spectrum that is flat along k_z,
Phi(q, kz) = Phi(q, 0) for |kz| <= kz_cutoff and zero beyond; as the cutoff
grows the medium approaches delta-correlation along z.

Every spectrum is linear in Cn2. Internally all quadratures run at Cn2 = 1
and are rescaled, so kernel values scale exactly with Cn2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate

from .errors import ConvergenceError, InvalidArgumentError, SingularityError

PREFACTOR = 0.033
# quadpack refuses relative tolerances near machine precision
QUAD_MIN_RTOL = 1e-13
VARIANTS = ("kolmogorov", "von_karman", "tatarskii")
# k_z truncation of the longitudinal integral, in units of kappa_m
KZ_TRUNCATION = 20.0


@dataclass(frozen=True)
class SpectrumModel:
    variant: str = "von_karman"
    cn2: float = 1e-14
    outer_scale: Optional[float] = 10.0
    inner_scale: Optional[float] = 0.01
    kz_cutoff: Optional[float] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(f"unknown spectrum variant {self.variant!r}")
        if not self.cn2 >= 0:
            raise InvalidArgumentError("cn2 must be non-negative")
        if self.variant == "von_karman" and not (
            self.outer_scale is not None and self.outer_scale > 0
        ):
            raise InvalidArgumentError("von Karman spectrum needs an outer scale > 0")
        if self.inner_scale is not None:
            if self.inner_scale <= 0:
                raise InvalidArgumentError("inner scale must be positive")
            if (
                self.variant == "von_karman"
                and self.outer_scale is not None
                and not self.outer_scale > self.inner_scale
            ):
                raise InvalidArgumentError("need outer scale > inner scale")
        if self.kz_cutoff is not None and not self.kz_cutoff > 0:
            raise InvalidArgumentError("kz_cutoff must be positive")

    @property
    def kappa0(self) -> float:
        if self.variant == "von_karman":
            return 2.0 * math.pi / self.outer_scale
        return 0.0

    @property
    def kappa_m(self) -> float:
        """Inner-scale roll-off wavenumber; ``inf`` without an inner scale."""
        if self.variant == "kolmogorov" or self.inner_scale is None:
            return math.inf
        return 5.92 / self.inner_scale

    def unit(self) -> "SpectrumModel":
        """Same shape with Cn2 = 1."""
        return replace(self, cn2=1.0)

    def with_cn2(self, cn2: float) -> "SpectrumModel":
        return replace(self, cn2=cn2)

    def shape_key(self):
        return (self.variant, self.outer_scale, self.inner_scale, self.kz_cutoff)


def _psd_of_ksq(model: SpectrumModel, ksq):
    """Spectrum as a function of |k|^2 (array aware), no k_z flattening."""
    ksq = np.asarray(ksq, dtype=float)
    if model.variant == "kolmogorov":
        if np.any(ksq == 0):
            raise SingularityError("Kolmogorov spectrum diverges at |k| = 0")
        return PREFACTOR * model.cn2 * ksq ** (-11.0 / 6.0)
    if model.kappa0 == 0 and np.any(ksq == 0):
        raise SingularityError("spectrum without outer scale diverges at |k| = 0")
    value = PREFACTOR * model.cn2 * (ksq + model.kappa0**2) ** (-11.0 / 6.0)
    if math.isfinite(model.kappa_m):
        value = value * np.exp(-ksq / model.kappa_m**2)
    return value


def psd_3d(model: SpectrumModel, kvec) -> float | np.ndarray:
    """Power spectral density at 3-D wave vector(s) ``kvec`` (last axis = 3)."""
    kvec = np.asarray(kvec, dtype=float)
    q_sq = kvec[..., 0] ** 2 + kvec[..., 1] ** 2
    kz = kvec[..., 2]
    if model.kz_cutoff is not None:
        value = _psd_of_ksq(model, q_sq) * (np.abs(kz) <= model.kz_cutoff)
    else:
        value = _psd_of_ksq(model, q_sq + kz**2)
    return value[()] if np.ndim(value) == 0 else value


def markovian_psd(model: SpectrumModel, q) -> float | np.ndarray:
    """Phi_n(q, k_z = 0), the spectrum used under delta-correlation in z."""
    q = np.asarray(q, dtype=float)
    kvec = np.concatenate([q, np.zeros(q.shape[:-1] + (1,))], axis=-1)
    return psd_3d(model, kvec)


def longitudinal_correlation(
    model: SpectrumModel, q, zeta: float, rtol: float = 1e-11
) -> float:
    """B(q, zeta) = int exp(-i kz zeta) Phi_n(q, kz) dkz / 2 pi.

    The result is real because the spectrum is even in k_z.

    Raises
    ------
    ConvergenceError
        If the quadrature's own error estimate exceeds the tolerance.
    """
    q = np.asarray(q, dtype=float)
    q_sq = float(q @ q)
    if model.cn2 == 0:
        return 0.0
    return model.cn2 * _unit_correlation(model.shape_key(), q_sq, abs(float(zeta)), rtol)


def correlation_table(model: SpectrumModel, q_sq, zeta) -> np.ndarray:
    """B at every combination of |q|^2 values and zeta values.

    Returns an array of shape ``(len(q_sq), len(zeta))``.
    """
    q_sq = np.atleast_1d(np.asarray(q_sq, dtype=float))
    zeta = np.abs(np.atleast_1d(np.asarray(zeta, dtype=float)))
    if model.cn2 == 0:
        return np.zeros((q_sq.size, zeta.size))
    key = model.shape_key()
    if model.kz_cutoff is not None:
        return model.cn2 * _flat_kz_table(model, q_sq, zeta)
    out = np.empty((q_sq.size, zeta.size))
    for i, qs in enumerate(q_sq):
        for j, zt in enumerate(zeta):
            out[i, j] = _unit_correlation(key, float(qs), float(zt), 1e-11)
    return model.cn2 * out


def _flat_kz_table(model, q_sq, zeta):
    # closed form: Phi(q,0) sin(Kc zeta) / (pi zeta)
    base = _psd_of_ksq(model.unit(), q_sq)
    kc = model.kz_cutoff
    sinc = np.where(
        zeta == 0, kc / math.pi, np.sin(kc * zeta) / (math.pi * np.where(zeta == 0, 1, zeta))
    )
    return base[:, None] * sinc[None, :]


@lru_cache(maxsize=1 << 20)
def _unit_correlation(key, q_sq: float, zeta: float, rtol: float) -> float:
    variant, outer, inner, kz_cutoff = key
    model = SpectrumModel(variant, 1.0, outer, inner, kz_cutoff)
    if kz_cutoff is not None:
        return float(_flat_kz_table(model, np.array([q_sq]), np.array([zeta]))[0, 0])
    if model.kappa0 == 0 and q_sq == 0:
        raise SingularityError("longitudinal integral diverges at q = 0 without outer scale")

    # scalar closure; quad calls this millions of times
    k0sq = model.kappa0**2
    inv_km_sq = 1.0 / model.kappa_m**2 if math.isfinite(model.kappa_m) else 0.0
    if variant == "kolmogorov":
        def integrand(kz):
            return PREFACTOR * (q_sq + kz * kz) ** (-11.0 / 6.0)
    else:
        def integrand(kz):
            s = q_sq + kz * kz
            return PREFACTOR * (s + k0sq) ** (-11.0 / 6.0) * math.exp(-s * inv_km_sq)

    a = math.sqrt(q_sq + model.kappa0**2)
    km = model.kappa_m
    upper = KZ_TRUNCATION * km if math.isfinite(km) else math.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if zeta == 0.0:
            pts = sorted(p for p in (a, km) if 0 < p < upper)
            value0, err0 = _quad_split(integrand, upper, pts, rtol)
            _check(value0, err0, rtol)
            return value0 / math.pi
        # absolute accuracy is judged against the zero-lag value
        scale = math.pi * _unit_correlation(key, q_sq, 0.0, rtol)
        if math.isinf(upper):
            value, err = integrate.quad(
                integrand, 0.0, math.inf, weight="cos", wvar=zeta,
                epsabs=1e-3 * rtol * scale, limlst=200, limit=500,
            )
        else:
            value, err = integrate.quad(
                integrand, 0.0, upper, weight="cos", wvar=zeta,
                epsabs=1e-3 * rtol * scale, epsrel=max(rtol, QUAD_MIN_RTOL), limit=2000,
            )
        _check(value, err, rtol, scale=scale)
        return value / math.pi


def _quad_split(f, upper, pts, rtol):
    edges = [0.0] + list(pts) + [upper]
    total, err = 0.0, 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, e = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=max(rtol, QUAD_MIN_RTOL), limit=500)
        total += v
        err += e
    return total, err


def _check(value, err, rtol, scale=None):
    scale = abs(value) if scale is None else scale
    if not np.isfinite(value) or err > 100 * rtol * max(scale, np.finfo(float).tiny):
        raise ConvergenceError(
            f"longitudinal correlation quadrature did not converge (error {err:.3e})",
            estimate=err,
        )
