"""Random test data on the spectral lattice."""
import numpy as np

from couette_echo.coords import StateTriple
from couette_echo.spectral import SpectralField


def rand_field(grid, rng, decay=8.0, zonal=False, nonzero_modes=False):
    """Real-symmetric field with Gaussian coefficients damped like exp(-|xi|/decay)."""
    c = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    c *= np.exp(-np.abs(grid.xi) / decay)[None, :]
    F = SpectralField(c, grid).real_part()
    F.coeffs[:, grid.N_v // 2] = 0.0
    if zonal:
        F = F.P0()
    if nonzero_modes:
        F = F.Pneq0()
    return F


def rand_state(grid, rng, scale=1.0, t=0.0, decay=8.0):
    return StateTriple(rand_field(grid, rng, decay) * scale,
                       rand_field(grid, rng, decay, zonal=True) * scale,
                       rand_field(grid, rng, decay, zonal=True) * scale, t)


def smooth_h(grid, rng, amp, modes=6):
    """Zonal h with a few low modes, scaled so that max |h| = amp."""
    h = grid.zeros()
    for n in range(1, modes + 1):
        c = rng.standard_normal() + 1j * rng.standard_normal()
        h.coeffs[grid.K_z, n] = c
        h.coeffs[grid.K_z, -n] = np.conj(c)
    prof = np.real(h.profile(0, 4 * grid.N_v))
    return h * (amp / np.max(np.abs(prof)))


def size(x):
    return x.l2() if isinstance(x, SpectralField) else x.norm()


def rel(a, b):
    """Relative L^2 difference of two states or fields."""
    na = size(a)
    nd = size(a - b)
    return nd / na if na > 0 else nd
