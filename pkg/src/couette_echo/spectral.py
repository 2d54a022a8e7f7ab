"""Fourier fields on the torus in z times a periodized line in v.

Coefficients are stored with the continuous normalization
F^(k, xi) = (2 pi)^-2 int int e^{-i(kz + xi v)} F dz dv, on the lattice
xi_n = n * 2 pi / L_v.  A field is recovered as

    F(z, v) = sum_k sum_n F^(k, xi_n) dxi e^{i(kz + xi_n v)},   dxi = 2 pi / L_v,

so ``c = F^ * dxi`` are the plain Fourier-series coefficients.  Arrays have
shape (2 K_z + 1, N_v): rows run over k = -K_z..K_z, columns are in FFT order.

Products are exact truncated convolutions, evaluated on a grid padded by a
factor two in both directions, so no aliasing enters the retained modes.
"""
import csv
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _accel

TWO_PI = 2.0 * np.pi


class NormOverflow(FloatingPointError):
    """A single weighted term exceeded the floating-point range."""

    def __init__(self, k, xi, log_value):
        super().__init__(f"weighted term overflows at (k, xi) = ({k}, {xi:.6g}); log value {log_value:.6g}")
        self.k = k
        self.xi = xi
        self.log_value = log_value


@dataclass(frozen=True)
class Grid:
    K_z: int
    N_v: int
    L_v: float = TWO_PI
    # fraction of the lattice kept by ``filter``; products are already alias free
    dealias: float = 1.0

    def __post_init__(self):
        if int(self.K_z) != self.K_z or self.K_z < 0:
            raise ValueError("K_z must be a non-negative integer")
        n = int(self.N_v)
        if n != self.N_v or n < 2 or n & (n - 1):
            raise ValueError("N_v must be a power of two >= 2")
        if not self.L_v > 0:
            raise ValueError("L_v must be positive")
        if not 0 < self.dealias <= 1:
            raise ValueError("dealias must lie in (0, 1]")

    @property
    def nk(self):
        return 2 * self.K_z + 1

    @property
    def shape(self):
        return (self.nk, self.N_v)

    @cached_property
    def k(self):
        return np.arange(-self.K_z, self.K_z + 1)

    @cached_property
    def n(self):
        return np.fft.fftfreq(self.N_v, 1.0 / self.N_v).astype(np.int64)

    @property
    def dxi(self):
        return TWO_PI / self.L_v

    @cached_property
    def xi(self):
        return self.n * self.dxi

    @property
    def dv(self):
        return self.L_v / self.N_v

    @cached_property
    def v(self):
        return -0.5 * self.L_v + self.dv * np.arange(self.N_v)

    @property
    def xi_max(self):
        return np.pi * self.N_v / self.L_v

    def resolves(self, eta, margin=0.0):
        return self.xi_max >= eta + margin

    def row(self, k):
        if abs(k) > self.K_z:
            raise IndexError(f"z-mode {k} outside |k| <= {self.K_z}")
        return k + self.K_z

    def col(self, n):
        return int(n) % self.N_v

    def zeros(self):
        return SpectralField(np.zeros(self.shape, dtype=np.complex128), self)

    def with_size(self, K_z=None, N_v=None):
        return Grid(self.K_z if K_z is None else K_z, self.N_v if N_v is None else N_v, self.L_v, self.dealias)


def _embed_rows(c, nk_out):
    # place centered k-rows into a larger centered array (or crop)
    nk_in = c.shape[0]
    out = np.zeros((nk_out,) + c.shape[1:], dtype=np.complex128)
    if nk_out >= nk_in:
        off = (nk_out - nk_in) // 2
        out[off:off + nk_in] = c
    else:
        off = (nk_in - nk_out) // 2
        out[:] = c[off:off + nk_out]
    return out


def _resize_cols(c, n_out):
    # move FFT-ordered columns between lattices of different sizes
    n_in = c.shape[-1]
    out = np.zeros(c.shape[:-1] + (n_out,), dtype=np.complex128)
    if n_out >= n_in:
        h = n_in // 2
        out[..., :h] = c[..., :h]
        out[..., n_out - h:] = c[..., h:]
    else:
        h = n_out // 2
        out[..., :h] = c[..., :h]
        out[..., h + 1:] = c[..., n_in - h + 1:]
    return out


def _drop_nyquist(c):
    # the lattice keeps |n| <= N/2 - 1 so that conjugate symmetry is closed
    c[..., c.shape[-1] // 2] = 0.0
    return c


class SpectralField:
    """Truncated Fourier representation; coefficients use the continuous normalization."""

    __array_priority__ = 100

    def __init__(self, coeffs, grid):
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.shape != grid.shape:
            raise ValueError(f"coefficient shape {coeffs.shape} does not match grid {grid.shape}")
        self.coeffs = coeffs
        self.grid = grid

    # -- construction ------------------------------------------------------
    @classmethod
    def from_physical(cls, samples, grid):
        """Coefficients from samples on z_i = 2 pi i / Mz, v_j = -L/2 + j L / Mv.

        ``samples`` may be 1D (a function of v only) or 2D with Mz >= 2K_z+1 and
        Mv >= N_v; higher frequencies are discarded.
        """
        u = np.asarray(samples)
        if u.ndim == 1:
            c = np.fft.fft(u) / u.shape[0]
            c = c * _phase(u.shape[0])
            out = np.zeros(grid.shape, dtype=np.complex128)
            out[grid.K_z] = _resize_cols(c[None, :], grid.N_v)[0]
            return cls(_drop_nyquist(out) / grid.dxi, grid)
        mz, mv = u.shape
        c = np.fft.fft2(u) / (mz * mv)
        c = c * _phase(mv)[None, :]
        if mz < grid.nk:
            raise ValueError("too few z samples for the retained modes")
        rows = c[grid.k % mz]
        return cls(_drop_nyquist(_resize_cols(rows, grid.N_v)) / grid.dxi, grid)

    @classmethod
    def from_profile(cls, grid, k, values):
        """Field e^{ikz} u(v) from v-samples of u on the grid (complex allowed)."""
        c = np.fft.fft(np.asarray(values, dtype=np.complex128)) / grid.N_v * _phase(grid.N_v)
        out = np.zeros(grid.shape, dtype=np.complex128)
        out[grid.row(k)] = c / grid.dxi
        return cls(_drop_nyquist(out), grid)

    # -- basic algebra -----------------------------------------------------
    def copy(self):
        return SpectralField(self.coeffs.copy(), self.grid)

    def _other(self, o):
        if isinstance(o, SpectralField):
            if o.grid != self.grid:
                raise ValueError("fields live on different grids")
            return o.coeffs
        return None

    def __add__(self, o):
        c = self._other(o)
        if c is None:
            return NotImplemented
        return SpectralField(self.coeffs + c, self.grid)

    def __sub__(self, o):
        c = self._other(o)
        if c is None:
            return NotImplemented
        return SpectralField(self.coeffs - c, self.grid)

    def __neg__(self):
        return SpectralField(-self.coeffs, self.grid)

    def __mul__(self, s):
        if isinstance(s, SpectralField):
            return multiply(self, s)
        return SpectralField(self.coeffs * s, self.grid)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return SpectralField(self.coeffs / s, self.grid)

    def conj_reflect(self):
        """The field G with G^(k, xi) = conj(F^(-k, -xi)), i.e. the complex conjugate in physical space."""
        c = np.conj(self.coeffs[::-1])
        n = self.grid.N_v
        idx = (-np.arange(n)) % n
        return SpectralField(c[:, idx], self.grid)

    def real_part(self):
        return (self + self.conj_reflect()) * 0.5

    def is_real_symmetric(self, rtol=1e-12):
        scale = np.max(np.abs(self.coeffs)) if self.coeffs.size else 0.0
        if scale == 0:
            return True
        diff = self.coeffs - self.conj_reflect().coeffs
        return bool(np.max(np.abs(diff)) <= rtol * scale)

    @property
    def is_zonal(self):
        return not np.any(np.delete(self.coeffs, self.grid.K_z, axis=0))

    def zonal(self):
        """The k = 0 row as a 1D array (continuous normalization)."""
        return self.coeffs[self.grid.K_z]

    def mode(self, k):
        return self.coeffs[self.grid.row(k)]

    # -- operators ---------------------------------------------------------
    def dz(self):
        return SpectralField(1j * self.grid.k[:, None] * self.coeffs, self.grid)

    def dv(self):
        return SpectralField(1j * self.grid.xi[None, :] * self.coeffs, self.grid)

    def dt_shift(self, t):
        """D = d_v - t d_z, the derivative that follows the shear."""
        g = self.grid
        return SpectralField(1j * (g.xi[None, :] - t * g.k[:, None]) * self.coeffs, g)

    def P0(self):
        return project(self, "P0")

    def Pneq0(self):
        return project(self, "Pneq0")

    def filter(self):
        """Zero the outer modes beyond the grid's dealias fraction."""
        g = self.grid
        if g.dealias >= 1:
            return self.copy()
        keep = np.abs(g.n) <= g.dealias * g.N_v / 2
        return SpectralField(self.coeffs * keep[None, :], g)

    # -- physical space ----------------------------------------------------
    def to_physical(self, shape=None):
        """Samples on z_i = 2 pi i/Mz, v_j = -L/2 + j L/Mv (default: the grid itself)."""
        g = self.grid
        mz, mv = shape if shape is not None else (g.nk, g.N_v)
        if mz < g.nk or mv < g.N_v:
            raise ValueError("physical grid too small for the retained modes")
        c = _resize_cols(self.coeffs * g.dxi, mv) * _phase(mv)[None, :]
        full = np.zeros((mz, mv), dtype=np.complex128)
        for i, k in enumerate(g.k):
            full[k % mz] = c[i]
        return np.fft.ifft2(full) * (mz * mv)

    def profile(self, k=0, mv=None):
        """v-samples of the k-th z-mode on the (optionally refined) v grid."""
        g = self.grid
        mv = g.N_v if mv is None else mv
        c = _resize_cols(self.mode(k)[None, :] * g.dxi, mv)[0] * _phase(mv)
        return np.fft.ifft(c) * mv

    def resample(self, grid):
        """Same function on another grid with equal L_v (zero-pad or truncate)."""
        if abs(grid.L_v - self.grid.L_v) > 1e-12 * self.grid.L_v:
            raise ValueError("resampling requires equal L_v")
        c = _resize_cols(_embed_rows(self.coeffs, grid.nk), grid.N_v)
        return SpectralField(c, grid)

    def l2(self):
        return norm(self, NormSpec("l2"))

    def __repr__(self):
        return f"SpectralField(K_z={self.grid.K_z}, N_v={self.grid.N_v}, L_v={self.grid.L_v:.6g})"


def _phase(m):
    # e^{i xi_n (-L/2)} = (-1)^n for the lattice centered on v = 0
    n = np.fft.fftfreq(m, 1.0 / m)
    return np.where(n.astype(np.int64) % 2 == 0, 1.0, -1.0)


def project(F, which):
    g = F.grid
    out = np.zeros_like(F.coeffs)
    if which == "P0":
        out[g.K_z] = F.coeffs[g.K_z]
    elif which == "Pneq0":
        out[:] = F.coeffs
        out[g.K_z] = 0.0
    else:
        raise ValueError(f"unknown projection {which!r}")
    return SpectralField(out, g)


# -- products ----------------------------------------------------------------

class Padded:
    """Transforms to and from a physical grid padded twice in each direction.

    Working in this space, a sum of pairwise products returns the exact
    truncated convolution of the factors.
    """

    def __init__(self, grid):
        self.grid = grid
        self.mz = 2 * grid.nk
        self.mv = 2 * grid.N_v
        self._rows = grid.k % self.mz

    def to(self, F):
        g = self.grid
        c = _resize_cols(F.coeffs * g.dxi, self.mv)
        full = np.zeros((self.mz, self.mv), dtype=np.complex128)
        full[self._rows] = c
        return np.fft.ifft2(full) * (self.mz * self.mv)

    def to_zonal(self, F):
        """v-samples of a k = 0 field (the other rows are ignored)."""
        c = _resize_cols(F.zonal()[None, :] * self.grid.dxi, self.mv)[0]
        return np.fft.ifft(c) * self.mv

    def back(self, u):
        g = self.grid
        c = np.fft.fft2(u) / (self.mz * self.mv)
        return SpectralField(_resize_cols(c[self._rows], g.N_v) / g.dxi, g)

    def back_zonal(self, u):
        """Field of the v-samples ``u`` (1D) placed in the k = 0 row."""
        g = self.grid
        c = np.fft.fft(u) / self.mv
        out = np.zeros(g.shape, dtype=np.complex128)
        out[g.K_z] = _resize_cols(c[None, :], g.N_v)[0] / g.dxi
        return SpectralField(out, g)

    def back_mean(self, u):
        """P0 of the field with 2D samples ``u`` (z-average, then transform)."""
        return self.back_zonal(u.mean(axis=0))


_PADDED = {}


def padded(grid):
    p = _PADDED.get(grid)
    if p is None:
        p = _PADDED[grid] = Padded(grid)
    return p


def zonal_times(a, F):
    """Exact truncated product of a k = 0 field ``a`` with ``F`` (1D transforms only)."""
    g = F.grid
    mv = 2 * g.N_v
    av = np.fft.ifft(_resize_cols(a.zonal()[None, :] * g.dxi, mv)[0]) * mv
    u = np.fft.ifft(_resize_cols(F.coeffs, mv), axis=1) * mv
    c = np.fft.fft(u * av[None, :], axis=1) / mv
    return SpectralField(_resize_cols(c, g.N_v), g)


def multiply(A, B):
    """Exact truncated product of two fields."""
    if A.grid != B.grid:
        raise ValueError("fields live on different grids")
    if A.is_zonal:
        return zonal_times(A, B)
    if B.is_zonal:
        return zonal_times(B, A)
    P = padded(A.grid)
    return P.back(P.to(A) * P.to(B))


# -- norms -------------------------------------------------------------------

def kappa(k, xi, N1=1):
    """(|k| + |xi|)^(1/2) / log(2 + |k| + |xi|)^N1; zero at the origin."""
    s = np.abs(k) + np.abs(xi)
    return np.sqrt(s) / np.log(2.0 + s) ** N1


@dataclass(frozen=True)
class NormSpec:
    kind: str = "l2"
    lam: float = 1.0
    s: float = 0.0
    N1: int = 1

    def __post_init__(self):
        if self.kind not in ("gevrey_star", "gevrey_lambda", "analytic", "sobolev", "l2"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.kind in ("gevrey_lambda", "analytic") and not self.lam > 0:
            raise ValueError("lambda > 0 required")
        if self.kind == "sobolev" and self.s < 0:
            raise ValueError("s >= 0 required")

    def log_weight(self, k, xi):
        """log of the squared-norm weight at (k, xi)."""
        if self.kind == "l2":
            return np.zeros(np.broadcast(k, xi).shape)
        if self.kind == "gevrey_star":
            return 2.0 * kappa(k, xi, self.N1)
        if self.kind == "gevrey_lambda":
            return 2.0 * self.lam * kappa(k, xi, self.N1)
        if self.kind == "analytic":
            return 2.0 * self.lam * (np.abs(k) + np.abs(xi))
        return self.s * np.log1p(k * k + xi * xi)


def log_norm2(F, spec):
    """log of the squared norm, with the offending mode reported on overflow of a term."""
    g = F.grid
    kk = np.broadcast_to(g.k[:, None], g.shape)
    xx = np.broadcast_to(g.xi[None, :], g.shape)
    logw = spec.log_weight(kk, xx)
    amp2 = np.abs(F.coeffs) ** 2 * g.dxi
    with np.errstate(divide="ignore"):
        term = logw + np.log(np.where(amp2 > 0, amp2, 1.0))
    bad = (amp2 > 0) & (term > 709.0)
    if np.any(bad):
        i, j = np.unravel_index(np.argmax(np.where(bad, term, -np.inf)), g.shape)
        raise NormOverflow(int(g.k[i]), float(g.xi[j]), float(term[i, j]))
    val, _ = _accel.log_weighted_sum(np.ascontiguousarray(logw, dtype=float), np.ascontiguousarray(amp2))
    return val


def norm(F, spec=None):
    """sqrt of sum_k sum_xi w(k, xi) |F^(k, xi)|^2 dxi."""
    spec = NormSpec("l2") if spec is None else spec
    lv = log_norm2(F, spec)
    if lv == -np.inf:
        return 0.0
    if lv > 1418.0:
        raise NormOverflow(0, 0.0, lv)
    return float(np.exp(0.5 * lv))


def localization_mass(F, center, box, rate=0.0):
    """Weighted mass of the coefficients outside the box around ``center``."""
    kc, xc = center
    dk, dxi_box = box
    if dk < 0 or dxi_box <= 0:
        raise ValueError("box must be positive")
    g = F.grid
    kk = g.k[:, None].astype(float)
    xx = g.xi[None, :]
    dist = np.abs(kk - kc) + np.abs(xx - xc)
    outside = (np.abs(kk - kc) > dk) | (np.abs(xx - xc) > dxi_box)
    amp2 = np.where(outside, np.abs(F.coeffs) ** 2 * g.dxi, 0.0)
    lv, _ = _accel.log_weighted_sum(np.ascontiguousarray(2.0 * rate * np.broadcast_to(dist, g.shape), dtype=float), np.ascontiguousarray(amp2))
    return 0.0 if lv == -np.inf else float(np.exp(lv))


def box_fraction(F, center, box):
    """Fraction of the plain L^2 mass inside the box."""
    total = norm(F) ** 2
    if total == 0:
        return 1.0
    # rounding can push the complement a hair outside [0, 1]
    return min(1.0, max(0.0, 1.0 - localization_mass(F, center, box) / total))


# -- serialization -------------------------------------------------------------

_MAGIC = b"CEFD"
_VERSION = 1
_HEADER = struct.Struct("<4sHHiid")
FLAG_REAL = 1
FLAG_DOUBLE = 2


def encode_field(F, double=False):
    flags = (FLAG_REAL if F.is_real_symmetric() else 0) | (FLAG_DOUBLE if double else 0)
    g = F.grid
    head = _HEADER.pack(_MAGIC, _VERSION, flags, g.K_z, g.N_v, float(g.L_v))
    dt = "<c16" if double else "<c8"
    return head + np.ascontiguousarray(F.coeffs).astype(dt).tobytes()


def decode_field(buf, offset=0):
    magic, ver, flags, K, N, L = _HEADER.unpack_from(buf, offset)
    if magic != _MAGIC or ver != _VERSION:
        raise ValueError("not a field record")
    g = Grid(K, N, L)
    dt = np.dtype("<c16" if flags & FLAG_DOUBLE else "<c8")
    start = offset + _HEADER.size
    count = g.nk * N
    data = np.frombuffer(buf, dtype=dt, count=count, offset=start).reshape(g.shape)
    return SpectralField(data.astype(np.complex128), g), start + count * dt.itemsize


def write_field(path, F, double=False):
    with open(path, "wb") as fh:
        fh.write(encode_field(F, double))


def read_field(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    F, _ = decode_field(buf)
    return F


def export_csv(path, F, skip_zero=True):
    g = F.grid
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "xi", "re", "im"])
        for i, k in enumerate(g.k):
            for j in np.argsort(g.n):
                c = F.coeffs[i, j]
                if skip_zero and c == 0:
                    continue
                w.writerow([int(k), repr(float(g.xi[j])), repr(float(c.real)), repr(float(c.imag))])
