"""Moving-frame coordinates.

The frame follows the shear and the zonal drift:

    v(t, y) = y - (gamma(y) + int_1^t d_y^{-1} P0 omega dtau) / t,    z = x - t v,

and the unknowns are f(z, v) = omega(x, y), h = d_y v - 1 and theta = d_t v,
the latter two viewed as functions of v.  The physical y-line is periodized;
fields are assumed to decay towards the ends of the window so that the shear
phase e^{iktv} does not create a seam.
"""
from dataclasses import dataclass

import numpy as np

from .spectral import SpectralField, _phase, _drop_nyquist
from .green import SingularMap


class ConstraintViolation(ValueError):
    pass


@dataclass
class StateTriple:
    f: SpectralField
    h: SpectralField
    theta: SpectralField
    t: float = 0.0

    @property
    def grid(self):
        return self.f.grid

    @classmethod
    def zeros(cls, grid, t=0.0):
        return cls(grid.zeros(), grid.zeros(), grid.zeros(), t)

    def fields(self):
        return (self.f, self.h, self.theta)

    def __add__(self, o):
        return StateTriple(self.f + o.f, self.h + o.h, self.theta + o.theta, self.t)

    def __sub__(self, o):
        return StateTriple(self.f - o.f, self.h - o.h, self.theta - o.theta, self.t)

    def __mul__(self, s):
        return StateTriple(self.f * s, self.h * s, self.theta * s, self.t)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def axpy(self, a, o):
        """self + a * o without intermediate fields."""
        return StateTriple(SpectralField(self.f.coeffs + a * o.f.coeffs, self.grid),
                           SpectralField(self.h.coeffs + a * o.h.coeffs, self.grid),
                           SpectralField(self.theta.coeffs + a * o.theta.coeffs, self.grid), self.t)

    def with_t(self, t):
        return StateTriple(self.f, self.h, self.theta, t)

    def conj_reflect(self):
        return StateTriple(self.f.conj_reflect(), self.h.conj_reflect(), self.theta.conj_reflect(), self.t)

    def norm(self):
        """Combined L^2 norm of the three components."""
        return float(np.sqrt(self.f.l2() ** 2 + self.h.l2() ** 2 + self.theta.l2() ** 2))

    def resample(self, grid):
        return StateTriple(self.f.resample(grid), self.h.resample(grid), self.theta.resample(grid), self.t)

    def is_valid(self, rtol=1e-10):
        return self.h.is_zonal and self.theta.is_zonal and all(F.is_real_symmetric(rtol) for F in self.fields())

    def stacked(self):
        return np.stack([F.coeffs for F in self.fields()])

    @classmethod
    def from_stacked(cls, arr, grid, t=0.0):
        return cls(SpectralField(arr[0], grid), SpectralField(arr[1], grid), SpectralField(arr[2], grid), t)


@dataclass
class PhysicalVorticity:
    """Samples omega(x_i, y_j), x_i = 2 pi i / Mx, y_j = -L_y/2 + j L_y / My."""
    samples: np.ndarray
    L_y: float
    t: float

    @property
    def y(self):
        my = self.samples.shape[1]
        return -0.5 * self.L_y + self.L_y / my * np.arange(my)

    @property
    def x(self):
        mx = self.samples.shape[0]
        return 2 * np.pi * np.arange(mx) / mx


@dataclass
class CoordinateMap:
    y: np.ndarray
    v_of_y: np.ndarray
    v: np.ndarray
    y_of_v: np.ndarray
    gamma: np.ndarray
    t: float


class PrimitiveHistory:
    """Running trapezoidal integral of d_y^{-1} P0 omega over time, sampled in y."""

    def __init__(self, t0=1.0, n=None):
        self.t_last = float(t0)
        self.last = None
        self.value = None if n is None else np.zeros(n)

    def add(self, t, profile):
        profile = np.asarray(profile, dtype=float)
        if self.value is None:
            self.value = np.zeros_like(profile)
        if self.last is not None:
            self.value = self.value + 0.5 * (t - self.t_last) * (self.last + profile)
        self.last = profile
        self.t_last = float(t)
        return self.value


# -- periodic spectral helpers on a sampled line -----------------------------

def _coeffs(u):
    m = u.shape[-1]
    return np.fft.fft(u, axis=-1) / m


def _wavenumbers(m, L):
    return np.fft.fftfreq(m, 1.0 / m) * (2 * np.pi / L)


def antiderivative(u, L, tol=1e-9):
    """Periodic antiderivative of a mean-free sampled profile, zero at the left end."""
    u = np.asarray(u, dtype=float)
    m = u.shape[-1]
    mean = u.mean()
    if abs(mean) > tol * max(1.0, np.max(np.abs(u))):
        raise ValueError("antiderivative requires a mean-free profile")
    c = _coeffs(u)
    xi = _wavenumbers(m, L)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(xi != 0, c / (1j * xi), 0.0)
    a[m // 2] = 0.0
    U = np.real(np.fft.ifft(a) * m)
    return U - U[0]


def spectral_derivative(u, L):
    m = u.shape[-1]
    c = _coeffs(u)
    xi = _wavenumbers(m, L)
    c = c * 1j * xi
    c[..., m // 2] = 0.0
    return np.fft.ifft(c, axis=-1) * m


def spectral_eval(u, L, pts, x0=None):
    """Evaluate the trigonometric interpolant of samples ``u`` (last axis) at ``pts``."""
    m = u.shape[-1]
    x0 = -0.5 * L if x0 is None else x0
    c = _coeffs(u)
    c[..., m // 2] *= 0.5
    xi = _wavenumbers(m, L)
    # the Nyquist term is split symmetrically so real data stays real
    E = np.exp(1j * np.outer(np.asarray(pts) - x0, xi))
    out = c @ E.T
    nyq = c[..., m // 2]
    out = out + np.multiply.outer(nyq, np.exp(-1j * xi[m // 2] * (np.asarray(pts) - x0)))
    return out


def invert_monotone(q, L, targets, tol=1e-13, maxit=50):
    """Solve y - q(y) = target for y, where q is periodic (samples on the window)."""
    targets = np.asarray(targets, dtype=float)
    qy = np.real(spectral_derivative(q, L))
    y = targets.copy()
    for _ in range(maxit):
        qv = np.real(spectral_eval(q, L, y))
        dq = np.real(spectral_eval(qy, L, y))
        step = (y - qv - targets) / (1.0 - dq)
        y = y - step
        if np.max(np.abs(step)) < tol:
            break
    return y


def _field_from_rows(rows, grid):
    # rows[k] = samples of the k-th z-mode on grid.v
    c = np.fft.fft(rows, axis=1) / grid.N_v * _phase(grid.N_v)[None, :]
    return SpectralField(_drop_nyquist(c / grid.dxi), grid)


def _zonal_from_samples(u, grid):
    return SpectralField.from_physical(np.asarray(u, dtype=float), grid)


# -- transforms ----------------------------------------------------------------

def forward_transform(omega, grid, gamma=None, history=None, tol=1e-9):
    """(f, h, theta) and the coordinate map from physical vorticity at time omega.t.

    ``history`` is the sampled running integral of d_y^{-1} P0 omega from t = 1;
    ``gamma`` the gauge function of y (default zero).
    """
    w = np.asarray(omega.samples, dtype=float)
    mx, my = w.shape
    L = omega.L_y
    t = float(omega.t)
    if t < 1:
        raise ValueError("t >= 1 required")
    if my != grid.N_v or abs(L - grid.L_v) > 1e-12 * L:
        raise ValueError("the y-grid must match the v-grid (same L and sample count)")
    scale = max(1.0, np.max(np.abs(w)))
    if abs(w.mean()) > tol * scale:
        raise ValueError("vorticity must have zero mean")
    gamma = np.zeros(my) if gamma is None else np.asarray(gamma, dtype=float)
    hist = np.zeros(my) if history is None else np.asarray(history, dtype=float)
    p0 = w.mean(axis=0)
    prim = antiderivative(p0 - p0.mean(), L, tol=np.inf)
    q = (gamma + hist) / t
    y = omega.y
    v_of_y = y - q
    dvdy = 1.0 - np.real(spectral_derivative(q, L))
    if np.min(dvdy) <= 0:
        raise SingularMap("v(y) is not monotone")
    vgrid = grid.v
    y_of_v = invert_monotone(q, L, vgrid)
    # zonal quantities as functions of v
    h_v = np.real(spectral_eval(dvdy, L, y_of_v)) - 1.0
    theta_y = (gamma + hist) / t ** 2 - prim / t
    th_v = np.real(spectral_eval(theta_y, L, y_of_v))
    # f_k(v) = omega_k(y(v)) e^{iktv}
    wk = np.fft.fft(w, axis=0) / mx
    rows = np.zeros((grid.nk, grid.N_v), dtype=np.complex128)
    for i, k in enumerate(grid.k):
        if abs(k) > (mx - 1) // 2:
            continue
        rows[i] = spectral_eval(wk[k % mx], L, y_of_v) * np.exp(1j * k * t * vgrid)
    f = _field_from_rows(rows, grid)
    g = StateTriple(f, _zonal_from_samples(h_v, grid), _zonal_from_samples(th_v, grid), t)
    cmap = CoordinateMap(y, v_of_y, vgrid, y_of_v, gamma, t)
    return g, cmap


def inverse_transform(g, t=None, mx=None, tol=1e-8):
    """Physical vorticity and coordinate map from a state satisfying the solvability condition."""
    grid = g.grid
    t = g.t if t is None else float(t)
    L = grid.L_v
    hs = np.real(g.h.profile(0))
    if np.min(hs) <= -1.0:
        raise SingularMap("h + 1 is not positive")
    ratio = hs / (1.0 + hs)
    integral = ratio.mean() * L
    if abs(integral) > tol * max(1.0, L * np.max(np.abs(ratio))):
        raise ConstraintViolation(f"int h/(h+1) dv = {integral:.3e} != 0")
    Q = antiderivative(ratio - ratio.mean(), L, tol=np.inf)
    v = grid.v
    y_of_v = v - Q
    # v(y): solve v - Q(v) = y on the y-grid
    ygrid = v.copy()
    v_of_y = invert_monotone(Q, L, ygrid)
    mx = grid.nk if mx is None else mx
    rows = np.zeros((mx, grid.N_v), dtype=np.complex128)
    for i, k in enumerate(grid.k):
        prof = g.f.profile(int(k))
        if not np.any(prof):
            continue
        vals = spectral_eval(prof, L, v_of_y) * np.exp(-1j * k * t * v_of_y)
        rows[k % mx] += vals
    w = np.real(np.fft.ifft(rows, axis=0) * mx)
    gamma_eff = t * (ygrid - v_of_y)
    cmap = CoordinateMap(ygrid, v_of_y, v, y_of_v, gamma_eff, t)
    return PhysicalVorticity(w, L, t), cmap


def constraint_residual(g, t=None):
    """(||t(h+1) theta_v + P0 f + h||_2, |int h/(h+1) dv|)."""
    t = g.t if t is None else float(t)
    grid = g.grid
    th_v = g.theta.dv()
    chi = (th_v + g.h * th_v) * t + g.f.P0() + g.h
    hs = np.real(g.h.profile(0, 2 * grid.N_v))
    second = abs(np.mean(hs / (1.0 + hs)) * grid.L_v)
    return chi.l2(), float(second)


def chi_field(g, t=None):
    t = g.t if t is None else float(t)
    th_v = g.theta.dv()
    return (th_v + g.h * th_v) * t + g.f.P0() + g.h


def jacobian_defect(cmap, L):
    """max |d_y v * d_v y - 1| over the samples."""
    dvdy = 1.0 + np.real(spectral_derivative(cmap.v_of_y - cmap.y, L))
    dydv = 1.0 + np.real(spectral_derivative(cmap.y_of_v - cmap.v, L))
    back = np.real(spectral_eval(dydv, L, cmap.v_of_y))
    return float(np.max(np.abs(dvdy * back - 1.0)))
