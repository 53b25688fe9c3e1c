"""
Run configuration read from an INI file.

Sections mirror the run: [grid], [spectrum], [state], [propagation],
[kernels], [montecarlo], [output]. Keys not listed in ``SCHEMA`` are rejected
so that a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .grid import build_grid
from .turbulence import SpectrumModel


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise InvalidArgumentError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() in ("none", "") else float(text)


def _floats(text):
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _ints(text):
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _formats(text):
    out = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = set(out) - {"csv", "binary"}
    if bad:
        raise InvalidArgumentError(f"unknown output formats: {sorted(bad)}")
    return out


SCHEMA = {
    "grid": {"n_side": int, "k_extent": float, "k0": float},
    "spectrum": {
        "variant": str, "cn2": float, "outer_scale": _opt_float,
        "inner_scale": _opt_float, "kz_cutoff": _opt_float,
    },
    "state": {
        "kind": str, "amplitude": float, "width": float,
        "center_kx": float, "center_ky": float,
    },
    "propagation": {
        "z0": float, "z_samples": _floats, "markovian": _bool,
        "resummed": _bool, "quartic": _bool,
    },
    "kernels": {"residual_tol": float, "slice_k3": int},
    "montecarlo": {
        "n_realizations": int, "seed": int, "dims": _ints, "dz": float,
        "distance": float, "thin_screen": _bool, "allowance": float,
    },
    "output": {"directory": str, "formats": _formats},
}


@dataclass(frozen=True)
class MonteCarloConfig:
    n_realizations: int = 100
    seed: int = 0
    dims: tuple = (8, 8, 256)
    dz: float = 0.01
    distance: float | None = None
    thin_screen: bool = False
    allowance: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    n_side: int = 2
    k_extent: float = 2.0
    k0: float = 2.0
    variant: str = "von_karman"
    cn2: float = 1e-14
    outer_scale: float | None = 10.0
    inner_scale: float | None = 0.5
    kz_cutoff: float | None = None
    state_kind: str = "thermal"
    amplitude: float = 1.0
    width: float = 1.0
    center_kx: float = 0.0
    center_ky: float = 0.0
    z0: float = 0.0
    z_samples: tuple = (0.0, 1.0)
    markovian: bool = False
    resummed: bool = False
    quartic: bool = True
    residual_tol: float = 1e-8
    slice_k3: int = 0
    montecarlo: MonteCarloConfig | None = None
    directory: str = "out"
    formats: tuple = ("csv",)
    source: str = field(default="", compare=False)

    def grid(self):
        return build_grid(self.n_side, self.k_extent, self.k0)

    def model(self) -> SpectrumModel:
        return SpectrumModel(self.variant, self.cn2, self.outer_scale, self.inner_scale, self.kz_cutoff)

    def initial_profile(self, grid) -> np.ndarray:
        """amplitude * exp(-|K - Kc|^2 / (2 width^2)): occupations or field spectrum."""
        d = grid.points - np.array([self.center_kx, self.center_ky])
        return self.amplitude * np.exp(-np.sum(d**2, axis=1) / (2.0 * self.width**2))

    def canonical(self) -> str:
        """Effective settings as sorted text; output location is excluded."""
        items = []
        for name, value in sorted(vars(self).items()):
            if name in ("directory", "source"):
                continue
            if isinstance(value, MonteCarloConfig):
                for k2, v2 in sorted(vars(value).items()):
                    items.append(f"montecarlo.{k2}={_canon(v2)}")
            else:
                items.append(f"{name}={_canon(value)}")
        return "\n".join(items)

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def validate(self) -> "RunConfig":
        grid = self.grid()
        self.model()
        z = np.asarray(self.z_samples, dtype=float)
        if z.size < 1 or not np.all(np.isfinite(z)):
            raise InvalidArgumentError("z_samples must be finite")
        if z[0] != self.z0:
            raise InvalidArgumentError("the first z sample must equal z0")
        if np.any(np.diff(z) <= 0):
            raise InvalidArgumentError("z_samples must increase strictly")
        if self.state_kind not in ("thermal", "coherent"):
            raise InvalidArgumentError("state kind must be thermal or coherent")
        if not (self.width > 0 and self.amplitude >= 0):
            raise InvalidArgumentError("state width must be positive, amplitude non-negative")
        if not 0 <= self.slice_k3 < grid.size:
            raise InvalidArgumentError("slice_k3 must index a grid point")
        if not self.residual_tol > 0:
            raise InvalidArgumentError("residual_tol must be positive")
        mc = self.montecarlo
        if mc is not None:
            if mc.n_realizations < 2:
                raise InvalidArgumentError("need at least two realizations")
            if len(mc.dims) != 3 or min(mc.dims) < 4:
                raise InvalidArgumentError("dims needs three counts, each at least 4")
            if mc.dims[0] != mc.dims[1] or mc.dims[0] < 2 * self.n_side - 1:
                raise InvalidArgumentError("transverse dims must be equal and at least 2 n_side - 1")
            if not mc.dz > 0 or mc.seed < 0 or mc.seed >= 2**64:
                raise InvalidArgumentError("need dz > 0 and a 64-bit unsigned seed")
            distance = self.mc_distance()
            if not distance > 0 or distance > mc.dims[2] * mc.dz * (1 + 1e-12):
                raise InvalidArgumentError("propagation distance must fit inside the medium")
            if abs(distance / mc.dz - round(distance / mc.dz)) > 1e-9 * max(1.0, distance / mc.dz):
                raise InvalidArgumentError("distance must be a whole number of dz steps")
        return self

    def mc_distance(self) -> float:
        mc = self.montecarlo
        if mc is None:
            raise InvalidArgumentError("no montecarlo section")
        if mc.distance is not None:
            return mc.distance
        return float(self.z_samples[-1] - self.z0)

    def with_overrides(self, seed=None, directory=None) -> "RunConfig":
        cfg = self
        # the seed only drives the Monte-Carlo; without that section it is unused
        if seed is not None and cfg.montecarlo is not None:
            cfg = replace(cfg, montecarlo=replace(cfg.montecarlo, seed=seed))
        if directory is not None:
            cfg = replace(cfg, directory=directory)
        return cfg


def _canon(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return "(" + ",".join(_canon(x) for x in v) + ")"
    return repr(v)


_RENAME = {("state", "kind"): "state_kind"}


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidArgumentError(f"malformed config: {exc}") from exc
    top, mc = {}, None
    for section in parser.sections():
        if section not in SCHEMA:
            raise InvalidArgumentError(f"unknown section [{section}]")
        values = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise InvalidArgumentError(f"unknown key {key!r} in [{section}]")
            try:
                values[key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise InvalidArgumentError(f"bad value for {section}.{key}: {raw!r}") from exc
        if section == "montecarlo":
            mc = MonteCarloConfig(**values)
        else:
            for key, value in values.items():
                top[_RENAME.get((section, key), key)] = value
    if "z_samples" in top and "z0" not in top:
        top["z0"] = top["z_samples"][0]
    cfg = RunConfig(montecarlo=mc, source=text, **top)
    for name in ("cn2", "k0", "k_extent"):
        if not math.isfinite(getattr(cfg, name)):
            raise InvalidArgumentError(f"{name} must be finite")
    return cfg.validate()


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
