"""Taylor hierarchy around the background.

Write g = g_bg + g* and expand the right-hand side in g*.  With
Delta_t = Delta_bg + Delta'[h*] + Delta**[h*, h*] the stream function is

    phi = sum_r (-Delta_bg^{-1} delta)^r Delta_bg^{-1} f,

so its degree-q part Psi_q takes q ordered slots: either every slot feeds
an h* into a Delta-factor acting on phi_bg, or the first slot feeds f*
and the remaining ones h*.  The degree-p nonlinearity N_p is assembled from
Psi_j exactly as the nonlinear right-hand side groups its products, so

    RHS(g_bg + g*) = RHS(g_bg) + L g* + sum_{p >= 2} N_p(g*, ..., g*)

holds term by term on the grid (summing N_p over all ordered slot tuples).
The levels g^(n) solve d_t g^(n) = L g^(n) + Z^(n-1) with
Z^(n-1) = sum_p sum_{n_1+...+n_p = n} N_p(g^(n_1), ..., g^(n_p)).
"""
import csv
import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .coords import StateTriple
from .evolve import Dynamics, Trajectory, _BgProvider, integrate
from .green import invert
from .spectral import zonal_times
from .params import ParamError, nu


class Expansion:
    """Multilinear pieces at one time, memoized for the lifetime of the object."""

    def __init__(self, dyn, cache):
        self.dyn = dyn
        self.cache = cache
        self.t = cache.t
        self.P = dyn.P
        self._keep = []
        self._phi = {}
        self._psi = {}
        self._jdeg = {}
        self._src = {}

    def _id(self, obj):
        self._keep.append(obj)
        return id(obj)

    # -- operator pieces ---------------------------------------------------------
    def inv(self, X):
        return invert(X.Pneq0(), self.cache.coeffs, self.dyn.plan)

    def delta_prime(self, a, X):
        """Delta'[a] X with the background h."""
        hb = self.cache.g.h
        av = a.dv()
        A = 2.0 * (a + zonal_times(hb, a))
        B = zonal_times(a, self.cache.hbv) + av + zonal_times(hb, av)
        DX = X.dt_shift(self.t)
        return zonal_times(A, DX.dt_shift(self.t)) + zonal_times(B, DX)

    def delta_ss(self, a, b, X):
        """Delta**[a, b] X: coefficients trunc(ab) and d_v trunc(ab) / 2."""
        A = zonal_times(a, b)
        DX = X.dt_shift(self.t)
        return zonal_times(A, DX.dt_shift(self.t)) + zonal_times(0.5 * A.dv(), DX)

    def phi_p(self, src_key, src, hs):
        """Phi_p[src](h_1..h_p): ordered products of -Delta_bg^{-1} Delta' / Delta** factors."""
        p = len(hs)
        if p == 0:
            return src
        key = (src_key, tuple(self._id(h) for h in hs))
        out = self._phi.get(key)
        if out is not None:
            return out
        out = -self.inv(self.delta_prime(hs[0], self.phi_p(src_key, src, hs[1:])))
        if p >= 2:
            out = out - self.inv(self.delta_ss(hs[0], hs[1], self.phi_p(src_key, src, hs[2:])))
        self._phi[key] = out
        return out

    def source(self, g):
        key = ("f", self._id(g))
        s = self._src.get(key)
        if s is None:
            s = self._src[key] = self.inv(g.f)
        return key, s

    def psi(self, slots):
        """Degree-q part of the stream function on ordered slots."""
        q = len(slots)
        if q == 0:
            return self.cache.phi
        key = tuple(self._id(s) for s in slots)
        out = self._psi.get(key)
        if out is not None:
            return out
        hs = [s.h for s in slots]
        out = self.phi_p("bg", self.cache.phi, hs)
        skey, src = self.source(slots[0])
        out = out + self.phi_p(skey, src, hs[1:])
        self._psi[key] = out
        return out

    def bracket(self, phi, f):
        return self.dyn.bracket(phi, f)

    def jdeg(self, slots):
        """Degree-j part of J(phi, f)."""
        j = len(slots)
        if j == 0:
            return self.cache.J
        key = tuple(self._id(s) for s in slots)
        out = self._jdeg.get(key)
        if out is None:
            out = self.bracket(self.psi(slots), self.cache.g.f)
            out = out + self.bracket(self.psi(slots[1:]), slots[0].f)
            self._jdeg[key] = out
        return out

    def n_p(self, slots):
        """N_p on the ordered tuple of states."""
        p = len(slots)
        if p < 2:
            raise ValueError("N_p needs p >= 2")
        g = self.cache.g
        P = self.P
        t = self.t
        s1 = slots[0]
        Jp = self.jdeg(slots)
        f = -(Jp + zonal_times(g.h, Jp)) - zonal_times(s1.h, self.jdeg(slots[1:]))
        h = s1.grid.zeros()
        th = s1.grid.zeros()
        if p == 2:
            s2 = slots[1]
            f = f - zonal_times(s1.theta, s2.f.dv())
            h = -zonal_times(s1.theta, s2.h.dv())
            th = -zonal_times(s1.theta, s2.theta.dv())
        u = P.to(g.f) * P.to(self.psi(slots).dz()) + P.to(s1.f) * P.to(self.psi(slots[1:]).dz())
        th = th + P.back_mean(u) / t
        return StateTriple(f, h, th, t)


def phi_p(h_list, gb, t, dyn=None):
    """Phi_p[phi_bg](h_1, ..., h_p) at a background snapshot."""
    dyn = Dynamics(gb.grid) if dyn is None else dyn
    ex = Expansion(dyn, dyn.background(gb, t))
    return ex.phi_p("bg", ex.cache.phi, list(h_list))


def n_p(g_list, gb, t, dyn=None):
    dyn = Dynamics(gb.grid) if dyn is None else dyn
    ex = Expansion(dyn, dyn.background(gb, t))
    return ex.n_p(tuple(g_list))


def compositions(n, p):
    """Ordered tuples of p positive integers summing to n."""
    if p == 1:
        yield (n,)
        return
    for first in range(1, n - p + 2):
        for rest in compositions(n - first, p - 1):
            yield (first,) + rest


def _q_values(n):
    return range(-n, n + 1, 2)


# -- bundles of components evolved together ------------------------------------

class _Bundle:
    def __init__(self, parts, t):
        self.parts = parts
        self.t = t

    def axpy(self, a, o):
        return _Bundle({q: s.axpy(a, o.parts[q]) for q, s in self.parts.items()}, self.t)

    def with_t(self, t):
        return _Bundle({q: s.with_t(t) for q, s in self.parts.items()}, t)

    def norm(self):
        return math.sqrt(sum(s.norm() ** 2 for s in self.parts.values()))

    def fields(self):
        return tuple(F for s in self.parts.values() for F in s.fields())


class _Recorder:
    def __init__(self, grid, qs, provenance):
        self.trajs = {q: Trajectory(grid, dict(provenance, q=q)) for q in qs}
        self.times = []

    def __len__(self):
        return len(self.times)

    def append(self, t, y, d):
        for q, tr in self.trajs.items():
            tr.append(t, y.parts[q], d.parts[q])
        self.times.append(float(t))


@dataclass
class Hierarchy:
    grid: object
    components: dict
    n_max: int
    p_max: int
    span: tuple
    dyn: object = None
    bg: object = None

    def component(self, n, q, t):
        """g^(n,q)(t); negative q by conjugate reflection."""
        if (n - q) % 2 or abs(q) > n:
            return StateTriple.zeros(self.grid, t)
        tr = self.components[(n, abs(q))]
        s = tr.at(t)
        return s.conj_reflect() if q < 0 else s

    def component_deriv(self, n, q, t):
        tr = self.components[(n, abs(q))]
        d = tr.deriv_at(t)
        return d.conj_reflect() if q < 0 else d

    def level(self, n, t):
        out = StateTriple.zeros(self.grid, t)
        for q in _q_values(n):
            out = out + self.component(n, q, t)
        return out

    def level_deriv(self, n, t):
        out = StateTriple.zeros(self.grid, t)
        for q in _q_values(n):
            out = out + self.component_deriv(n, q, t)
        return out

    def partial_sum(self, n, t):
        out = StateTriple.zeros(self.grid, t)
        for j in range(1, n + 1):
            out = out + self.level(j, t)
        return out

    @property
    def times(self):
        return list(self.components[(1, 1)].times)

    def box_mass(self, n, q, t, k0, eta0, radius):
        return component_ball_mass(self.component(n, q, t), (q * k0, q * eta0), radius)

    def write_summary_csv(self, path, times, k0, eta0, radius):
        """Rows (n, q, t, l2, box mass fraction); radius(n) gives the ball around (q k0, q eta0)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "q", "t", "l2", "box_mass"])
            for (n, q), tr in sorted(self.components.items()):
                for t in times:
                    w.writerow([n, q, repr(float(t)), repr(tr.at(t).norm()),
                                repr(self.box_mass(n, q, t, k0, eta0, radius(n)))])


def ball_radius(p, n, D=12.0):
    """Localization radius D n sqrt(eps0) T0 around (q k0, q eta0)."""
    return D * n * math.sqrt(p.eps0) * p.T0


def component_ball_mass(s, center, radius):
    """Fraction of the squared mass of (f, h, theta) with |k - kc| + |xi - xc| <= radius."""
    tot = inside = 0.0
    for F in s.fields():
        g = F.grid
        a = np.abs(F.coeffs) ** 2
        d = np.abs(g.k[:, None] - center[0]) + np.abs(g.xi[None, :] - center[1])
        tot += a.sum()
        inside += a[d <= radius].sum()
    return float(inside / tot) if tot > 0 else 1.0


def _forcing(ex, lower, n, q, t, p_max):
    """Z^(n-1, q): sum over p, compositions of n and charge splits adding to q."""
    total = None
    for p in range(2, min(n, p_max) + 1):
        for comp in compositions(n, p):
            for qs in itertools.product(*[_q_values(m) for m in comp]):
                if sum(qs) != q:
                    continue
                slots = tuple(lower[(m, qi)] for m, qi in zip(comp, qs))
                term = ex.n_p(slots)
                total = term if total is None else total + term
    return total


def build_hierarchy(seed, bg, cfg, n_max=3, p_max=4, grid=None, plan=None):
    """Levels g^(1..n_max) from g^(1,1)(T0) = seed, split by charge q."""
    if n_max > 6:
        raise ValueError("n_max <= 6 at desk scale")
    if p_max < 2:
        raise ValueError("p_max >= 2 required")
    grid = seed.grid if grid is None else grid
    dyn = Dynamics(grid, cfg.plan() if plan is None else plan)
    provider = _BgProvider(dyn, bg, size=4)
    t0 = cfg.t_span[0]
    lcfg = replace(cfg, store_every=None, rhs="linearized")
    comps = {}
    hier = Hierarchy(grid, comps, n_max, p_max, cfg.t_span, dyn, bg)
    for n in range(1, n_max + 1):
        qs = [q for q in _q_values(n) if q >= 0]
        rec = _Recorder(grid, qs, {"kind": "hierarchy", "n": n})
        if n == 1:
            y0 = _Bundle({1: seed.with_t(t0)}, t0)
        else:
            y0 = _Bundle({q: StateTriple.zeros(grid, t0) for q in qs}, t0)

        def rhs(y, t, n=n, qs=qs):
            cache = provider(t)
            out = {q: dyn.linear(y.parts[q], cache) for q in qs}
            if n >= 2:
                ex = Expansion(dyn, cache)
                lower = {(m, qq): hier.component(m, qq, t) for m in range(1, n) for qq in _q_values(m)}
                for q in qs:
                    z = _forcing(ex, lower, n, q, t, p_max)
                    if z is not None:
                        out[q] = out[q] + z
            return _Bundle(out, t)

        integrate(rhs, y0, lcfg, rec)
        for q, tr in rec.trajs.items():
            comps[(n, q)] = tr
    return hier


def residual_E(hier, t, n=None, dyn=None):
    """E^(n)(t) = sum_{p <= p_max} sum_{n_i <= n, sum n_i > n} N_p(g^(n_1), ..., g^(n_p))."""
    n = hier.n_max if n is None else n
    dyn = hier.dyn if dyn is None else dyn
    gb = hier.bg.at(t)
    if gb.grid != hier.grid:
        gb = gb.resample(hier.grid)
    ex = Expansion(dyn, dyn.background(gb, t))
    levels = {j: hier.level(j, t) for j in range(1, n + 1)}
    total = StateTriple.zeros(hier.grid, t)
    for p in range(2, hier.p_max + 1):
        for tup in itertools.product(range(1, n + 1), repeat=p):
            if sum(tup) > n:
                total = total + ex.n_p(tuple(levels[j] for j in tup))
    return total


def identity_defect(hier, t, n=None):
    """||d_t G^(n) - (RHS(g_bg + G^(n)) - RHS(g_bg)) + E^(n)|| and ||d_t G^(n)|| at a stored time."""
    n = hier.n_max if n is None else n
    dyn = hier.dyn
    gb = hier.bg.at(t)
    if gb.grid != hier.grid:
        gb = gb.resample(hier.grid)
    G = hier.partial_sum(n, t)
    dG = StateTriple.zeros(hier.grid, t)
    for j in range(1, n + 1):
        dG = dG + hier.level_deriv(j, t)
    full = dyn.nonlinear(gb + G, t) - dyn.nonlinear(gb, t)
    E = residual_E(hier, t, n)
    return (dG - full + E).norm(), dG.norm()


# -- envelope --------------------------------------------------------------------

@dataclass
class EnvelopeB:
    knots_t: np.ndarray
    knots_logB1: np.ndarray
    T0: float
    T2: float
    T3: float
    D: float
    eps0: float
    k0: int

    def _rate(self, t):
        e = self.eps0
        r = e * e ** 0.01 + 1.0 / t + self.T0 ** -0.25
        if t <= self.T2:
            r += math.sqrt(e)
        if t <= self.T3:
            r += e * math.log(self.k0) ** 4
        return self.D * r

    def log_B2(self, t):
        """int_t^T0 of the corrector rate, zero after T0 (closed form per piece)."""
        if t >= self.T0:
            return 0.0
        e = self.eps0
        a, b = t, self.T0
        val = (e * e ** 0.01 + self.T0 ** -0.25) * (b - a) + math.log(b / a)
        val += math.sqrt(e) * max(0.0, min(b, self.T2) - a)
        val += e * math.log(self.k0) ** 4 * max(0.0, min(b, self.T3) - a)
        return self.D * val

    def log_B1(self, t):
        ts, lb = self.knots_t, self.knots_logB1
        if t <= ts[0]:
            return float(lb[0])
        return float(np.interp(t, ts, lb))

    def __call__(self, t):
        return math.exp(self.log(t))

    def log(self, t):
        return self.log_B1(t) + self.log_B2(t)

    def B1(self, t):
        return math.exp(self.log_B1(t))

    def B2(self, t):
        return math.exp(self.log_B2(t))


def envelope_B(p, growth, D=None, power=10, log_scale=0.0):
    """B = B1 B2 from the forward ladder {m: B_m} on k1 <= m <= k0.

    ``log_scale`` is added to log B1 (a ladder computed at eps1 = 1 becomes the
    ladder at eps1 = exp(log_scale)).

    B1(t_m) = B_m / 2 on [T0, T1], B1(t_m) = (B_k0 / 2) prod_{j=k0+1}^m nu(alpha_j)^power
    on [T2, T0], log-linear between knots and constant before T2.
    """
    D = p.D if D is None else D
    need = list(range(p.k1, p.k0 + 1))
    if any(m not in growth for m in need):
        raise ParamError(f"growth sequence must cover m = {p.k1}..{p.k0}")
    vals = [growth[m] for m in need]
    if any(v <= 0 for v in vals):
        raise ParamError("growth values must be positive")
    for m in range(p.k1 + 1, p.k0 + 1):
        if not growth[m - 1] > growth[m]:
            raise ParamError(f"non-monotone ladder: B_{m - 1} <= B_{m}")
    knots = {}
    for m in need:
        knots[m] = math.log(growth[m] / 2.0) + log_scale
    acc = knots[p.k0]
    for j in range(p.k0 + 1, p.k2 + 1):
        acc += power * math.log(nu(min(p.alpha_m(j), 2.0), p.eps0))
        knots[j] = acc
    order = sorted(knots, key=lambda m: p.t(m))
    ts = np.array([p.t(m) for m in order])
    lb = np.array([knots[m] for m in order])
    return EnvelopeB(ts, lb, p.T0, p.T2, p.T3, float(D), p.eps0, p.k0)


def log_eps1_choice(p, B_k1_unit):
    """log eps1 making B_k1 = 2 eta0^{-(N-1)}, given B_k1 for eps1 = 1.

    The ladder is linear in eps1.  The value is returned as a logarithm since
    eta0^{-(N-1)} underflows for any realistic N.
    """
    if B_k1_unit <= 0:
        raise ParamError("B_k1 must be positive")
    return math.log(2.0) - (p.N - 1) * math.log(p.eta0) - math.log(B_k1_unit)


def ratio_condition(env, p, n=1):
    """Rows (m, ratio^n, nu(alpha_m), ok) for B(t_{m-1})/B(t_m) at the knots of [T0, T1]."""
    rows = []
    for m in range(p.k0, p.k1, -1):
        r = math.exp(env.log(p.t(m - 1)) - env.log(p.t(m)))
        v = nu(min(p.alpha_m(m), 2.0), p.eps0)
        rows.append((m, r ** n, v, r ** n >= v))
    return rows
