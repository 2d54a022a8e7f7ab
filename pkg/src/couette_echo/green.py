"""The sheared elliptic operator and its inverse.

    Delta_t = d_z^2 + (h+1)^2 D^2 + (h+1) h_v D,    D = d_v - t d_z,

with h a function of v only.  Because the coefficients do not depend on z,
every z-mode k decouples; on mode k the operator acts on the v-spectrum with
D -> i zeta, zeta = xi - t k.  The coefficients A = (h+1)^2 and
B = (h+1) h_v are formed once as truncated products, so the discrete operator
is a fixed linear map on the lattice and all inverses below invert exactly
that map.

Three inverses are provided: the exact multiplier (h = 0 only), a Galerkin
solve per mode (banded when the coefficients are band limited, dense
otherwise) and the Neumann series around the constant-coefficient operator.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from . import _accel
from .spectral import SpectralField, zonal_times, _resize_cols, _drop_nyquist


class SingularMap(ValueError):
    """h + 1 is not positive everywhere, so the coordinate map degenerates."""


class NeumannDivergence(ArithmeticError):
    def __init__(self, norms):
        super().__init__("Neumann series terms stopped decreasing: " + ", ".join(f"{x:.3e}" for x in norms))
        self.norms = list(norms)


@dataclass(frozen=True)
class InversePlan:
    method: str = "direct"
    depth: int = 12
    # adaptive stopping for the Neumann series; None sums exactly ``depth`` terms
    tol: float = None
    max_depth: int = 200
    band_tol: float = 1e-15

    def __post_init__(self):
        if self.method not in ("multiplier", "direct", "neumann"):
            raise ValueError(f"unknown inversion method {self.method!r}")
        if self.depth < 0:
            raise ValueError("depth >= 0 required")


class EllipticCoeffs:
    """Coefficients of Delta_t built from a zonal field h at time t."""

    def __init__(self, h, t, check=True):
        if not h.is_zonal:
            raise ValueError("h must be independent of z")
        g = h.grid
        self.grid = g
        self.h = h
        self.t = float(t)
        self.hv = h.dv()
        one = g.zeros()
        one.coeffs[g.K_z, 0] = 1.0 / g.dxi
        self.A = one + 2.0 * h + zonal_times(h, h)
        self.B = self.hv + zonal_times(h, self.hv)
        self.trivial = not np.any(h.coeffs)
        mv = 2 * g.N_v
        self._mv = mv
        self._a = np.fft.ifft(_resize_cols(self.A.zonal()[None, :] * g.dxi, mv)[0]) * mv
        self._b = np.fft.ifft(_resize_cols(self.B.zonal()[None, :] * g.dxi, mv)[0]) * mv
        if check:
            hp = np.real(h.profile(0, mv))
            if np.min(hp) <= -1.0:
                raise SingularMap(f"h + 1 reaches {1 + np.min(hp):.3e} <= 0")
        self._zeta = g.xi[None, :] - self.t * g.k[:, None]

    @property
    def zeta(self):
        return self._zeta

    def with_time(self, t):
        c = EllipticCoeffs.__new__(EllipticCoeffs)
        c.__dict__.update(self.__dict__)
        c.t = float(t)
        g = self.grid
        c._zeta = g.xi[None, :] - c.t * g.k[:, None]
        return c

    def _zconv2(self, a_phys, U2, b_phys, U1):
        # a * U2 + b * U1 for coefficient arrays U (rows = k), truncated
        g = self.grid
        mv = self._mv
        u2 = np.fft.ifft(_resize_cols(U2, mv), axis=1) * mv
        u1 = np.fft.ifft(_resize_cols(U1, mv), axis=1) * mv
        c = np.fft.fft(a_phys[None, :] * u2 + b_phys[None, :] * u1, axis=1) / mv
        return _resize_cols(c, g.N_v)

    def band(self, tol=1e-15):
        """Half-bandwidth of the coefficient convolutions (entries below tol * max dropped)."""
        g = self.grid
        a = self.A.zonal() * g.dxi
        b = self.B.zonal() * g.dxi
        a0 = a.copy()
        a0[0] -= 1.0
        scale = max(1.0, np.max(np.abs(a)), np.max(np.abs(b)))
        big = (np.abs(a0) > tol * scale) | (np.abs(b) > tol * scale)
        big[0] = False
        if not np.any(big):
            return 0
        return int(np.max(np.abs(g.n[big])))


def apply_delta_t(F, c):
    """Delta_t F with the stored coefficients."""
    g = F.grid
    if g != c.grid:
        raise ValueError("grids differ")
    z = c.zeta
    d1 = 1j * z * F.coeffs
    d2 = -(z ** 2) * F.coeffs
    out = -(g.k[:, None] ** 2) * F.coeffs + c._zconv2(c._a, d2, c._b, d1)
    return SpectralField(out, g)


def _check_source(F):
    g = F.grid
    if np.any(F.coeffs[g.K_z]):
        raise ValueError("invert requires P0 F = 0 (the inverse acts on nonzero z-modes)")


def multiplier(t, k, xi):
    return -1.0 / ((xi - t * k) ** 2 + k ** 2)


def _invert_multiplier(F, c):
    g = F.grid
    kk = g.k[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(kk != 0, -1.0 / (c.zeta ** 2 + kk ** 2), 0.0)
    return SpectralField(m * F.coeffs, g)


def _centered(g):
    # lattice indices in increasing n, Nyquist excluded
    order = np.argsort(g.n)
    return order[g.n[order] != -g.N_v // 2]


def galerkin_matrix(c, k):
    """Dense matrix of Delta_t on z-mode k over the retained lattice (increasing xi).

    Returns (M, idx) where ``idx`` are FFT-order column indices of the lattice points.
    """
    g = c.grid
    idx = _centered(g)
    n = g.n[idx]
    zeta = g.xi[idx] - c.t * k
    A = _accel.toeplitz(np.ascontiguousarray(c.A.zonal() * g.dxi), n)
    B = _accel.toeplitz(np.ascontiguousarray(c.B.zonal() * g.dxi), n)
    M = A * (-zeta ** 2)[None, :] + B * (1j * zeta)[None, :]
    M[np.diag_indices_from(M)] -= k * k
    return M, idx


def _invert_direct(F, c, plan, report=None):
    g = F.grid
    idx = _centered(g)
    nn = idx.size
    bw = c.band(plan.band_tol)
    out = np.zeros_like(F.coeffs)
    a_full = c.A.zonal() * g.dxi
    b_full = c.B.zonal() * g.dxi
    use_band = bw < nn // 4
    if use_band:
        d = np.arange(-bw, bw + 1)
        a_d = np.ascontiguousarray(a_full[d % g.N_v])
        b_d = np.ascontiguousarray(b_full[d % g.N_v])
    for i, k in enumerate(g.k):
        if k == 0:
            continue
        rhs = F.coeffs[i, idx]
        if not np.any(rhs):
            continue
        zeta = np.ascontiguousarray(g.xi[idx] - c.t * k)
        if use_band:
            ab = _accel.band_matrix(a_d, b_d, zeta, float(k * k), bw)
            sol = sla.solve_banded((bw, bw), ab, rhs, check_finite=False)
        else:
            M, _ = galerkin_matrix(c, k)
            sol = np.linalg.solve(M, rhs)
        out[i, idx] = sol
        if report is not None:
            report[int(k)] = {"bandwidth": bw if use_band else nn, "method": "banded" if use_band else "dense"}
    return SpectralField(out, g)


def _neumann_terms(F, c, plan):
    g = F.grid
    kk = g.k[:, None]
    with np.errstate(divide="ignore"):
        zinv = np.where(kk != 0, -1.0 / (c.zeta ** 2 + kk ** 2), 0.0)
    a1 = c._a - 1.0
    term = zinv * F.coeffs
    yield term
    z = c.zeta
    while True:
        w = c._zconv2(a1, -(z ** 2) * term, c._b, 1j * z * term)
        term = -zinv * w
        yield term


def _invert_neumann(F, c, plan, report=None):
    g = F.grid
    total = np.zeros_like(F.coeffs)
    norms = []
    adaptive = plan.tol is not None
    limit = plan.max_depth if adaptive else plan.depth
    for n, term in enumerate(_neumann_terms(F, c, plan)):
        total += term
        tn = float(np.sqrt(np.sum(np.abs(term) ** 2)))
        norms.append(tn)
        if len(norms) >= 4 and all(norms[-j] >= norms[-j - 1] for j in (1, 2, 3)) and tn > 0:
            raise NeumannDivergence(norms)
        if adaptive and tn <= plan.tol * max(float(np.sqrt(np.sum(np.abs(total) ** 2))), 1e-300):
            break
        if n >= limit:
            if adaptive:
                raise NeumannDivergence(norms)
            break
    if report is not None:
        report["neumann_terms"] = norms
    return SpectralField(total, g)


def invert(F, c, plan=None, report=None):
    """phi = P_{!=0} Delta_t^{-1} F."""
    plan = InversePlan() if plan is None else plan
    if F.grid != c.grid:
        raise ValueError("grids differ")
    _check_source(F)
    if plan.method == "multiplier" or c.trivial:
        if plan.method == "multiplier" and not c.trivial:
            raise ValueError("the multiplier inverse requires h = 0")
        return _invert_multiplier(F, c)
    if plan.method == "direct":
        return _invert_direct(F, c, plan, report)
    return _invert_neumann(F, c, plan, report)


def delta_source(grid, k, w):
    """Band-limited delta at v = w on z-mode k (continuous normalization)."""
    F = grid.zeros()
    F.coeffs[grid.row(k)] = np.exp(-1j * grid.xi * w) / (2.0 * np.pi)
    _drop_nyquist(F.coeffs)
    return F


def kernel_column(c, k, w, plan=None):
    """Samples of v -> e^{itk(v-w)} K(t, k, v, w): the k-mode response to a delta at w."""
    if k == 0:
        raise ValueError("k != 0 required")
    plan = InversePlan("direct") if plan is None else plan
    phi = invert(delta_source(c.grid, k, w), c, plan)
    return c.grid.v, phi.profile(k)


def free_kernel(t, k, v, w, L=None, images=60):
    """Closed-form response at h = 0, e^{itk d} * (-e^{-|k||d|} / (2|k|)) with d = v - w.

    With ``L`` given the response of the L-periodic problem is returned as a
    sum over periodic images.
    """
    ak = abs(k)
    d = np.asarray(v, dtype=float) - w
    shifts = [0.0] if L is None else [j * L for j in range(-images, images + 1)]
    total = np.zeros(d.shape, dtype=np.complex128)
    for s in shifts:
        dd = d + s
        total += np.exp(1j * t * k * dd) * (-np.exp(-ak * np.abs(dd)) / (2.0 * ak))
    return total
