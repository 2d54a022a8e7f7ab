"""Numerical laboratory for echo cascades around Couette flow.

Moving-frame Euler solver, recurrence model of the cascade, Taylor hierarchy
and weighted-energy diagnostics.  Hot kernels use numba when available; set
``COUETTE_ECHO_NUMBA=0`` before import to force the numpy fallback.
"""
__version__ = "0.1.0"

from ._accel import backend
from .params import ParamError, ParamSet, derive_params
from .spectral import Grid, SpectralField
from .coords import StateTriple

__all__ = ["__version__", "backend", "ParamError", "ParamSet", "derive_params", "Grid", "SpectralField",
           "StateTriple"]
