"""Symbols of the linearized system, assembled block by block.

For output mode k and input mode l the linearized right-hand side acts on
the xi-spectrum through matrices q_ij(k, l) over the retained lattice:

    (L g')^(k, xi) = sum_l sum_eta q_ij(t, k, l, xi, eta) g'_j(l, eta) dxi.

Every product with a background field B is the Toeplitz matrix
T_B(d)[xi, eta] = B^(d, xi - eta) dxi, and the inverse of Delta_t on mode l is
the dense inverse of its Galerkin matrix.  The grouping of the factors is
the one used by the evolution code, so contracting the blocks against a state
reproduces its linear right-hand side; the two paths share no code beyond the
Galerkin matrix.  The explicit 1/t damping terms -(P0 f' + h')/t and
-2 theta'/t are kept outside the q_ij, so q_21 = 0.
"""
import csv
import threading
from collections import OrderedDict

import numpy as np
from scipy.integrate import trapezoid

from . import _accel
from .green import EllipticCoeffs, galerkin_matrix, _centered
from .spectral import SpectralField
from .coords import StateTriple
from . import profiles


class SymbolTable:
    """Lazily evaluated blocks q_ij(k, l) for a background snapshot at time t."""

    def __init__(self, gb, t, cache_size=256):
        g = gb.grid
        self.grid = g
        self.t = float(t)
        self.bg = gb
        self.idx = _centered(g)
        self.nvals = g.n[self.idx]
        self.xi = g.xi[self.idx]
        self.size = self.idx.size
        self._coeffs = EllipticCoeffs(gb.h, t)
        self._cache = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()
        self._ginv = {}
        f = gb.f
        # stream function through the dense inverses (not the evolution's solver)
        phi = g.zeros()
        for k in g.k:
            if k != 0:
                phi.coeffs[g.row(k), self.idx] = self.G(int(k)) @ f.coeffs[g.row(k), self.idx]
        self.phi = phi
        self._fields = {
            "theta": gb.theta, "h": gb.h, "hv": gb.h.dv(), "thv": gb.theta.dv(),
            "f": f, "fz": f.dz(), "fv": f.dv(),
            "phiz": phi.dz(), "phiv": phi.dv(),
            "Dphi": phi.dt_shift(t), "D2phi": phi.dt_shift(t).dt_shift(t),
        }
        Jc = g.zeros()
        for k in g.k:
            acc = np.zeros(self.size, dtype=np.complex128)
            for l in g.k:
                acc = acc + self._bracket_bg(int(k), int(l)) @ f.coeffs[g.row(l), self.idx]
            Jc.coeffs[g.row(k), self.idx] = acc
        self._fields["J"] = Jc

    # -- elementary matrices --------------------------------------------------
    def T(self, name, d):
        """Toeplitz matrix of background field ``name`` on mode difference d."""
        key = ("T", name, int(d))
        M = self._get(key)
        if M is None:
            g = self.grid
            if abs(d) > g.K_z:
                M = np.zeros((self.size, self.size), dtype=np.complex128)
            else:
                row = np.ascontiguousarray(self._fields[name].coeffs[g.row(d)] * g.dxi)
                M = _accel.toeplitz(row, self.nvals)
            self._put(key, M)
        return M

    def G(self, l):
        """Dense inverse of Delta_t on mode l."""
        G = self._ginv.get(l)
        if G is None:
            M, _ = galerkin_matrix(self._coeffs, l)
            G = np.linalg.inv(M)
            self._ginv[l] = G
        return G

    def _dv(self):
        return np.diag(1j * self.xi)

    def _bracket_bg(self, k, l):
        # f' -> J(phi_bg, f') on output k from input l
        return -self.T("phiv", k - l) * (1j * l) + self.T("phiz", k - l) * (1j * self.xi)[None, :]

    def _one_plus_h(self):
        return np.eye(self.size) + self.T("h", 0)

    def _reaction_map(self, k, l):
        # phi'_l -> -(1 + h) J(phi', f_bg) on output k
        J = -self.T("fz", k - l) * (1j * self.xi)[None, :] + self.T("fv", k - l) * (1j * l)
        return -self._one_plus_h() @ J

    def E(self, l):
        """h' -> Delta' phi_bg on mode l."""
        key = ("E", int(l))
        M = self._get(key)
        if M is None:
            I = np.eye(self.size)
            Ap = 2.0 * (I + self.T("h", 0))
            Bp = self.T("hv", 0) + self._dv() + self.T("h", 0) @ self._dv()
            M = self.T("D2phi", l) @ Ap + self.T("Dphi", l) @ Bp
            self._put(key, M)
        return M

    # -- blocks -----------------------------------------------------------------
    def q11T(self, k, l):
        key = ("q11T", k, l)
        M = self._get(key)
        if M is None:
            M = -self._one_plus_h() @ self._bracket_bg(k, l)
            if k == l:
                M = M - self.T("theta", 0) * (1j * self.xi)[None, :]
            self._put(key, M)
        return M

    def q11R(self, k, l):
        key = ("q11R", k, l)
        M = self._get(key)
        if M is None:
            if l == 0:
                M = np.zeros((self.size, self.size), dtype=np.complex128)
            else:
                M = self._reaction_map(k, l) @ self.G(l)
            self._put(key, M)
        return M

    def block(self, i, j, k, l):
        """q_ij(k, l) as a matrix acting on lattice coefficient vectors."""
        key = ("q", i, j, k, l)
        M = self._get(key)
        if M is not None:
            return M
        Z = np.zeros((self.size, self.size), dtype=np.complex128)
        g = self.grid
        t = self.t
        if i in (2, 3) and k != 0 or j in (2, 3) and l != 0:
            M = Z
        elif (i, j) == (1, 1):
            M = self.q11T(k, l) + self.q11R(k, l)
        elif (i, j) == (1, 2):
            M = -self.T("J", k)
            for m in g.k:
                m = int(m)
                if m != 0 and abs(k - m) <= g.K_z:
                    M = M - self._reaction_map(k, m) @ self.G(m) @ self.E(m)
        elif (i, j) == (1, 3):
            M = -self.T("fv", k)
        elif (i, j) == (2, 1):
            M = Z
        elif (i, j) == (2, 2):
            M = -self.T("theta", 0) * (1j * self.xi)[None, :]
        elif (i, j) == (2, 3):
            M = -self.T("hv", 0)
        elif (i, j) == (3, 1):
            M = self.T("phiz", -l).copy()
            if l != 0:
                M = M + (self.T("f", -l) * (1j * l)) @ self.G(l)
            M = M / t
        elif (i, j) == (3, 2):
            M = Z.copy()
            for m in g.k:
                m = int(m)
                if m != 0:
                    M = M - (self.T("f", -m) * (1j * m)) @ self.G(m) @ self.E(m)
            M = M / t
        elif (i, j) == (3, 3):
            M = -self.T("theta", 0) * (1j * self.xi)[None, :] - self.T("thv", 0)
        else:
            raise ValueError(f"no symbol q_{i}{j}")
        self._put(key, M)
        return M

    def value(self, i, j, k, l, xi, eta):
        """Continuous-normalization symbol q_ij(t, k, l, xi, eta) at lattice points."""
        g = self.grid
        a = int(np.argmin(np.abs(self.xi - xi)))
        b = int(np.argmin(np.abs(self.xi - eta)))
        return self.block(i, j, k, l)[a, b] / g.dxi

    def kernel_correction(self, l):
        """Direct inverse minus the constant-coefficient multiplier on mode l (lattice matrix)."""
        zeta = self.xi - self.t * l
        return self.G(l) - np.diag(-1.0 / (zeta ** 2 + l * l))

    # -- cache --------------------------------------------------------------------
    def _get(self, key):
        with self._lock:
            M = self._cache.get(key)
            if M is not None:
                self._cache.move_to_end(key)
            return M

    def _put(self, key, M):
        with self._lock:
            self._cache[key] = M
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)


def assemble(gb, t):
    return SymbolTable(gb, t)


def contract(table, gp):
    """Apply the full symbol table (plus the explicit 1/t terms) to a state."""
    g = table.grid
    idx = table.idx
    t = table.t
    comps = [gp.f.coeffs, gp.h.coeffs, gp.theta.coeffs]
    outs = [np.zeros(g.shape, dtype=np.complex128) for _ in range(3)]
    ks = [int(k) for k in g.k]
    for i in (1, 2, 3):
        rows = ks if i == 1 else [0]
        for k in rows:
            acc = np.zeros(table.size, dtype=np.complex128)
            for j in (1, 2, 3):
                cols = ks if j == 1 else [0]
                for l in cols:
                    x = comps[j - 1][g.row(l), idx]
                    if not np.any(x):
                        continue
                    if i == 1 and j == 1 and abs(k - l) > g.K_z and k != l:
                        continue
                    acc = acc + table.block(i, j, k, l) @ x
            outs[i - 1][g.row(k), idx] = acc
    f, h, th = (SpectralField(o, g) for o in outs)
    h = h - (gp.f.P0() + gp.h) / t
    th = th - 2.0 * gp.theta / t
    return StateTriple(f, h, th, t)


def q11_split(table, k, l):
    """(transport part, reaction part) of q_11(k, l)."""
    return table.q11T(k, l), table.q11R(k, l)


def phi_b_hat(xi, C0, n=4096):
    """(1/2pi) int e^{-i xi v} phi_b(v) dv by the trapezoid rule (phi_b is even and flat-topped)."""
    R = 2.0 * C0
    v = np.linspace(-R, R, n + 1)
    w = profiles.phi_b(v, C0)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    vals = trapezoid(np.cos(np.outer(xi, v)) * w[None, :], v, axis=1) / (2 * np.pi)
    return vals if vals.size > 1 else float(vals[0])


def q11_leading(p, t, k, l, xi, eta):
    """Closed-form leading reaction symbol, in the sign convention of J = -phi_v f_z + phi_z f_v.

    Evaluating the reaction block at the resonance with a background
    eps0 cos z phi_b gives eta (k - l) / ((eta - t l)^2 + l^2) * eps0 phi_b^(xi - eta) / 2;
    the published closed form carries (l - k), see the decision notes.
    """
    if l == 0 or abs(l - k) != 1:
        return 0.0
    return eta * (k - l) / ((eta - t * l) ** 2 + l ** 2) * p.eps0 * phi_b_hat(xi - eta, p.C0) / 2.0


def dominance_ratio(table, xi):
    """||R|| / ||T|| of the q_11 rows at output frequency xi, resonant input mode l* = round(xi/t).

    Both parts are restricted to the couplings l* -> l* +- 1 through which the
    resonant mode feeds its neighbours.
    """
    g = table.grid
    a = int(np.argmin(np.abs(table.xi - xi)))
    ls = max(1, int(round(xi / table.t)))
    r2 = t2 = 0.0
    for k in (ls - 1, ls + 1):
        if abs(k) > g.K_z or ls > g.K_z:
            continue
        T, R = q11_split(table, k, ls)
        t2 += float(np.sum(np.abs(T[a]) ** 2))
        r2 += float(np.sum(np.abs(R[a]) ** 2))
    return float(np.sqrt(r2 / t2)) if t2 > 0 else float("inf")


def reaction_shape_constant(table, ks=None, stride=4):
    """max |q11^R| ((xi - t l)^2 + l^2) / (e^{-|k-l|-|xi-eta|} (|xi| + |k| + 1)) over a sampled lattice."""
    g = table.grid
    t = table.t
    ks = [int(k) for k in g.k if k != 0] if ks is None else ks
    sel = np.arange(0, table.size, stride)
    xi = table.xi[sel]
    best = 0.0
    for k in ks:
        for l in ks:
            if abs(k - l) > g.K_z:
                continue
            R = np.abs(table.q11R(k, l)[np.ix_(sel, sel)]) / g.dxi
            num = R * ((xi[:, None] - t * l) ** 2 + l * l)
            # log-domain denominator; exponent differences are bounded on the lattice
            den = np.exp(-abs(k - l) - np.abs(xi[:, None] - xi[None, :])) * (np.abs(xi)[:, None] + abs(k) + 1)
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(den > 1e-300, num / den, 0.0)
            best = max(best, float(np.max(r)))
    return best


def write_slice_csv(path, table, i, j, k, l):
    M = table.block(i, j, k, l) / table.grid.dxi
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "l", "xi", "eta", "re", "im"])
        for a, x in enumerate(table.xi):
            for b, e in enumerate(table.xi):
                z = M[a, b]
                if z != 0:
                    w.writerow([k, l, repr(float(x)), repr(float(e)), repr(float(z.real)), repr(float(z.imag))])
