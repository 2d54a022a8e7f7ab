"""Background and perturbation profiles and smooth cutoffs.

The perturbation profile has a compactly supported spectrum built as an
N-fold convolution of boxes [-a_n, a_n] with a_n proportional to
1/(n log^2(n+2)) and sum a_n = 1.  Its inverse transform is therefore the
product of sinc factors, which gives closed forms in v.  Cutoffs in
frequency are a box convolved with a bump of the same construction, so they
are exactly 1 and 0 on the prescribed sets.
"""
from functools import lru_cache

import numpy as np


def phi_b(v, C0):
    """Background profile exp(-(v / C0)^18)."""
    return np.exp(-(np.asarray(v, dtype=float) / C0) ** 18)


def dphi_b(v, C0):
    v = np.asarray(v, dtype=float)
    return -18.0 / C0 * (v / C0) ** 17 * phi_b(v, C0)


def widths(n_conv):
    """Box half-widths a_n ~ 1/(n log^2(n+2)), rescaled to sum to one."""
    if n_conv < 8:
        raise ValueError("at least 8 convolution factors are required")
    n = np.arange(1, n_conv + 1, dtype=float)
    raw = 1.0 / (n * np.log(n + 2.0) ** 2)
    a = raw / raw.sum()
    total = a.sum()
    if not 0.99 <= total <= 1.01:
        raise ValueError(f"box widths sum to {total}, outside [0.99, 1.01]")
    return a


def _sinc_product(u, a):
    u = np.asarray(u, dtype=float)
    out = np.ones_like(u)
    for an in a:
        out = out * np.sinc(an * u / np.pi)
    return out


@lru_cache(maxsize=32)
def _phi_p_norm(a_key):
    a = np.array(a_key)
    # band limited to [-1, 1]: sampling at unit spacing reproduces the L^2 norm exactly
    u = np.arange(-40000, 40001, dtype=float)
    return float(np.sqrt(np.sum(_sinc_product(u, a) ** 2)))


def phi_p(u, n_conv=8):
    """Perturbation profile with spectrum in [-1, 1] and unit L^2(R) norm."""
    a = widths(n_conv)
    return _sinc_product(u, a) / _phi_p_norm(tuple(a))


def phi_p_periodic(v, scale, L, n_conv=8, images=None):
    """sum_j phi_p(scale (v + j L)): the L-periodic version of v -> phi_p(scale v)."""
    v = np.asarray(v, dtype=float)
    if images is None:
        # images until the algebraic tail is far below double precision
        images = int(np.ceil(4000.0 / max(scale * L, 1e-12))) + 2
    out = np.zeros_like(v)
    for j in range(-images, images + 1):
        out = out + phi_p(scale * (v + j * L), n_conv)
    return out


def phi_p_hat(xi, n_conv=8, n_grid=2 ** 15):
    """Continuous transform (1/2pi) int e^{-i xi v} phi_p dv, tabulated by discrete box convolution."""
    x, dens = _box_convolution(tuple(widths(n_conv)), n_grid)
    # the sinc product is the characteristic function of the unit-mass density
    c = 1.0 / _phi_p_norm(tuple(widths(n_conv)))
    return np.interp(np.asarray(xi, dtype=float), x, dens * c, left=0.0, right=0.0)


@lru_cache(maxsize=8)
def _box_convolution(a_key, n_grid):
    a = np.array(a_key)
    x = np.linspace(-1.0, 1.0, n_grid + 1)
    dx = x[1] - x[0]
    dens = np.zeros_like(x)
    dens[n_grid // 2] = 1.0 / dx
    for an in a:
        m = int(np.floor(an / dx))
        box = np.ones(2 * m + 1)
        box /= box.sum() * dx
        dens = np.convolve(dens, box, mode="same") * dx
    dens /= dens.sum() * dx
    return x, dens


@lru_cache(maxsize=8)
def _cutoff_table(inner, outer, n_conv, n_grid):
    half = 0.5 * (outer - inner)
    plateau = 0.5 * (outer + inner)
    x, dens = _box_convolution(tuple(widths(n_conv)), n_grid)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * (x[1] - x[0]))])
    cdf /= cdf[-1]
    # psi(z) = M((z + plateau)/half) - M((z - plateau)/half), M the bump distribution
    z = np.linspace(-outer - 0.01, outer + 0.01, 8 * n_grid + 1)
    M = lambda s: np.interp(s, x, cdf, left=0.0, right=1.0)
    return z, M((z + plateau) / half) - M((z - plateau) / half)


def cutoff(z, inner=1.0 / 6.0, outer=0.25, n_conv=8, n_grid=2 ** 12):
    """Smooth cutoff equal to 1 for |z| <= inner and 0 for |z| >= outer."""
    if not 0 < inner < outer:
        raise ValueError("0 < inner < outer required")
    zt, vals = _cutoff_table(float(inner), float(outer), int(n_conv), int(n_grid))
    z = np.asarray(z, dtype=float)
    out = np.interp(z, zt, vals, left=0.0, right=0.0)
    out = np.where(np.abs(z) <= inner, 1.0, out)
    return np.where(np.abs(z) >= outer, 0.0, out)
