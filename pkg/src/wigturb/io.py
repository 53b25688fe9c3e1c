"""
File formats: header-stamped CSV and little-endian binary dumps.

CSV files use ',' separators and 17 significant digits so that float64 values
round-trip exactly. Every file starts with comment lines carrying the tool
version and the SHA-256 of the run configuration; no timestamps are written,
so identical runs give identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DimensionError, IntegrityError
from .grid import TransverseGrid
from .oracle import Medium3D
from .states import ThermalState

STATE_MAGIC = b"WTSTATE1"
MEDIUM_MAGIC = b"WTMEDIUM"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path, columns, rows, header: dict | None = None) -> Path:
    """Write ``rows`` under a column line, preceded by '# key=value' comments."""
    path = Path(path)
    lines = []
    for key, value in (header or {}).items():
        lines.append(f"# {key}={value}")
    lines.append(",".join(columns))
    for row in rows:
        if len(row) != len(columns):
            raise DimensionError("row length does not match the columns")
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_csv(path):
    """Return (header dict, column names, rows as lists of str)."""
    header, cols, rows = {}, None, []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key] = value
        elif cols is None:
            cols = line.split(",")
        elif line:
            rows.append(line.split(","))
    return header, cols, rows


def write_state(path, state: ThermalState) -> Path:
    """Binary layout: magic, int64 n_side, float64 z, dk, k0, complex128 matrix."""
    g = state.grid
    with open(path, "wb") as fh:
        fh.write(STATE_MAGIC)
        fh.write(struct.pack("<qddd", g.n_side, state.z, g.delta_k, g.k0))
        fh.write(np.ascontiguousarray(state.theta_inv, dtype="<c16").tobytes())
    return Path(path)


def grid_from_spacing(n_side: int, delta_k: float, k0: float) -> TransverseGrid:
    """Grid with an exact spacing (no round trip through k_extent)."""
    axis = (np.arange(n_side) - (n_side - 1) / 2.0) * delta_k
    kx, ky = np.meshgrid(axis, axis, indexing="ij")
    return TransverseGrid(int(n_side), float(delta_k), float(k0), np.stack([kx.ravel(), ky.ravel()], axis=1))


def read_state(path) -> ThermalState:
    data = Path(path).read_bytes()
    if data[:8] != STATE_MAGIC:
        raise IntegrityError("not a state file")
    n_side, z, dk, k0 = struct.unpack_from("<qddd", data, 8)
    size = n_side * n_side
    body = data[8 + 32:]
    if len(body) != 16 * size * size:
        raise IntegrityError("state file is truncated")
    grid = grid_from_spacing(n_side, dk, k0)
    theta_inv = np.frombuffer(body, dtype="<c16").reshape(size, size).astype(complex)
    return ThermalState(grid, theta_inv, z)


def write_medium(path, medium: Medium3D) -> Path:
    """Binary layout: magic, 3 x int64 dims, 3 x float64 spacings, uint64 seed,
    float64 z0, then float64 values in C order."""
    with open(path, "wb") as fh:
        fh.write(MEDIUM_MAGIC)
        fh.write(struct.pack("<qqq", medium.nx, medium.ny, medium.nz))
        fh.write(struct.pack("<ddd", medium.dx, medium.dy, medium.dz))
        fh.write(struct.pack("<Qd", medium.seed & (2**64 - 1), medium.z0))
        fh.write(np.ascontiguousarray(medium.values, dtype="<f8").tobytes())
    return Path(path)


def read_medium(path) -> Medium3D:
    data = Path(path).read_bytes()
    if data[:8] != MEDIUM_MAGIC:
        raise IntegrityError("not a medium file")
    nx, ny, nz = struct.unpack_from("<qqq", data, 8)
    dx, dy, dz = struct.unpack_from("<ddd", data, 32)
    seed, z0 = struct.unpack_from("<Qd", data, 56)
    body = data[72:]
    if len(body) != 8 * nx * ny * nz:
        raise IntegrityError("medium file is truncated")
    values = np.frombuffer(body, dtype="<f8").reshape(nx, ny, nz).copy()
    return Medium3D(nx, ny, nz, dx, dy, dz, values, seed, z0)

