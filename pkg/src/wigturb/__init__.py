"""Second-moment and kernel machinery for light in a turbulent medium."""

__version__ = "0.1.0"

from .grid import TransverseGrid, build_grid, diamond, grid_delta, trace_w  # noqa: E402
from .turbulence import SpectrumModel, longitudinal_correlation, psd_3d  # noqa: E402

__all__ = [
    "TransverseGrid",
    "build_grid",
    "diamond",
    "grid_delta",
    "trace_w",
    "SpectrumModel",
    "longitudinal_correlation",
    "psd_3d",
    "__version__",
]
