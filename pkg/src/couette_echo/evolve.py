"""Time integration of the transformed Euler system and its linearization.

Nonlinear system for g = (f, h, theta), with J(phi, f) = -phi_v f_z + phi_z f_v:

    f_t     = -theta f_v - (1 + h) J(phi, f)
    h_t     = -theta h_v - (P0 f + h) / t
    theta_t = -2 theta / t - theta theta_v + P0(f phi_z) / t
    phi     = P_{!=0} Delta_t^{-1} f.

Every product is an exact truncated convolution and the grouping of the
products is fixed, so the linearized right-hand side below is the exact
derivative of the discrete nonlinear one.  Integration is classical RK4 on a
deterministic step schedule that is refined in windows around the critical
times.
"""
import bisect
import hashlib
import json
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, asdict

import numpy as np

from .spectral import SpectralField, padded, zonal_times, encode_field, decode_field
from .green import EllipticCoeffs, InversePlan, invert
from .coords import StateTriple
from . import profiles


class IntegrationFailure(RuntimeError):
    def __init__(self, msg, last_good_time):
        super().__init__(f"{msg} (last good time {last_good_time:.6g})")
        self.last_good_time = last_good_time


@dataclass(frozen=True)
class EvolutionConfig:
    t_span: tuple
    dt_base: float = 0.25
    refine_factor: int = 10
    critical_window: float = 5.0
    critical_times: tuple = ()
    rhs: str = "nonlinear"
    direction: str = None
    # None stores every step
    store_every: float = 1.0
    green: str = "neumann"
    green_tol: float = 1e-13
    max_retries: int = 3
    growth_limit: float = 1e6

    def __post_init__(self):
        ta, tb = (float(x) for x in self.t_span)
        object.__setattr__(self, "t_span", (ta, tb))
        natural = "forward" if tb >= ta else "backward"
        if self.direction is None:
            object.__setattr__(self, "direction", natural)
        elif self.direction != natural:
            raise ValueError(f"direction {self.direction!r} contradicts t_span {self.t_span}")
        if not 0 < self.dt_base <= 0.5:
            raise ValueError("dt_base must lie in (0, 0.5]")
        if self.refine_factor < 1:
            raise ValueError("refine_factor >= 1 required")
        if self.critical_times and self.dt_base / self.refine_factor > 0.1 + 1e-12:
            raise ValueError("effective step inside critical windows must be <= 0.1")
        if self.rhs not in ("nonlinear", "linearized", "linearized_truncated"):
            raise ValueError(f"unknown rhs {self.rhs!r}")
        object.__setattr__(self, "critical_times", tuple(float(c) for c in self.critical_times))

    def plan(self):
        if self.green == "neumann":
            return InversePlan("neumann", tol=self.green_tol)
        return InversePlan(self.green)

    def digest(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


def step_schedule(cfg):
    """Step times from t_a to t_b and the subset at which snapshots are stored."""
    ta, tb = cfg.t_span
    sign = 1.0 if tb >= ta else -1.0
    lo, hi = min(ta, tb), max(ta, tb)
    w = cfg.critical_window
    crit = [c for c in cfg.critical_times if lo - w < c < hi + w]
    bps = {lo, hi}
    for c in crit:
        for x in (c - w, c, c + w):
            if lo < x < hi:
                bps.add(x)
    store = {lo, hi} | {c for c in crit if lo <= c <= hi}
    if cfg.store_every:
        n = int(math.floor((hi - lo) / cfg.store_every + 1e-9))
        for j in range(1, n + 1):
            x = ta + sign * j * cfg.store_every
            if lo < x < hi:
                bps.add(x)
                store.add(x)
    bps = sorted(bps)
    times = [bps[0]]
    for a, b in zip(bps[:-1], bps[1:]):
        mid = 0.5 * (a + b)
        dt = cfg.dt_base
        if any(abs(mid - c) < w for c in crit):
            dt = cfg.dt_base / cfg.refine_factor
        n = max(1, int(math.ceil((b - a) / dt - 1e-9)))
        times.extend(a + (b - a) * np.arange(1, n + 1) / n)
    times = np.array(times)
    times[-1] = hi
    if sign < 0:
        times = times[::-1]
    if cfg.store_every is None:
        flags = np.ones(times.size, dtype=bool)
    else:
        flags = np.array([any(abs(x - s) < 1e-9 for s in store) for x in times])
    return times, flags


class Trajectory:
    """Snapshots with their time derivatives; cubic Hermite interpolation in between."""

    def __init__(self, grid, provenance=None):
        self.grid = grid
        self.times = []
        self.states = []
        self.derivs = []
        self.provenance = dict(provenance or {})

    def append(self, t, state, deriv):
        if self.times:
            last = self.times[-1]
            if len(self.times) >= 2:
                up = self.times[-1] > self.times[-2]
                if (t > last) != up or t == last:
                    raise ValueError("snapshot times must be strictly monotone")
            elif t == last:
                raise ValueError("snapshot times must be strictly monotone")
        self.times.append(float(t))
        self.states.append(state.with_t(t))
        self.derivs.append(deriv)

    def __len__(self):
        return len(self.times)

    @property
    def span(self):
        return min(self.times), max(self.times)

    def final(self):
        return self.states[-1]

    def _sorted(self):
        if len(self.times) > 1 and self.times[0] > self.times[-1]:
            return self.times[::-1], self.states[::-1], self.derivs[::-1]
        return self.times, self.states, self.derivs

    def at(self, t):
        ts, ss, ds = self._sorted()
        t = float(t)
        if not ts[0] - 1e-9 <= t <= ts[-1] + 1e-9:
            raise ValueError(f"time {t} outside trajectory span [{ts[0]}, {ts[-1]}]")
        j = bisect.bisect_left(ts, t)
        if j < len(ts) and abs(ts[j] - t) < 1e-12:
            return ss[j].with_t(t)
        if j > 0 and abs(ts[j - 1] - t) < 1e-12:
            return ss[j - 1].with_t(t)
        j = min(max(j, 1), len(ts) - 1)
        t0, t1 = ts[j - 1], ts[j]
        d = t1 - t0
        s = (t - t0) / d
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        a = ss[j - 1].stacked() * h00 + ds[j - 1].stacked() * (h10 * d) + ss[j].stacked() * h01 + ds[j].stacked() * (h11 * d)
        return StateTriple.from_stacked(a, self.grid, t)

    def deriv_at(self, t):
        ts, ss, ds = self._sorted()
        j = int(np.argmin(np.abs(np.array(ts) - t)))
        if abs(ts[j] - t) > 1e-9:
            raise ValueError("derivative only available at snapshot times")
        return ds[j]

    def resample(self, grid):
        out = Trajectory(grid, self.provenance)
        for t, s, d in zip(self.times, self.states, self.derivs):
            out.append(t, s.resample(grid), d.resample(grid))
        return out

    # -- checkpoints ---------------------------------------------------------
    def save(self, path):
        head = json.dumps({"provenance": self.provenance, "count": len(self.times)}, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(b"CETR")
            fh.write(struct.pack("<I", len(head)))
            fh.write(head)
            for t, s, d in zip(self.times, self.states, self.derivs):
                fh.write(struct.pack("<d", t))
                for F in s.fields() + d.fields():
                    fh.write(encode_field(F, double=True))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            buf = fh.read()
        if buf[:4] != b"CETR":
            raise ValueError("not a trajectory checkpoint")
        (n,) = struct.unpack_from("<I", buf, 4)
        head = json.loads(buf[8:8 + n].decode())
        off = 8 + n
        traj = None
        for _ in range(head["count"]):
            (t,) = struct.unpack_from("<d", buf, off)
            off += 8
            fs = []
            for _ in range(6):
                F, off = decode_field(buf, off)
                fs.append(F)
            if traj is None:
                traj = cls(fs[0].grid, head["provenance"])
            traj.append(t, StateTriple(*fs[:3], t), StateTriple(*fs[3:], t))
        return traj


# -- right-hand sides ----------------------------------------------------------

def _one(grid):
    F = grid.zeros()
    F.coeffs[grid.K_z, 0] = 1.0 / grid.dxi
    return F


class Dynamics:
    """Right-hand sides on a fixed grid with a fixed Green-operator plan."""

    def __init__(self, grid, plan=None):
        self.grid = grid
        self.plan = InversePlan("neumann", tol=1e-13) if plan is None else plan
        self.P = padded(grid)

    def stream(self, f, h, t):
        return invert(f.Pneq0(), EllipticCoeffs(h, t), self.plan)

    def bracket(self, phi, f):
        P = self.P
        return P.back(-P.to(phi.dv()) * P.to(f.dz()) + P.to(phi.dz()) * P.to(f.dv()))

    def nonlinear(self, g, t):
        f, h, th = g.f, g.h, g.theta
        phi = self.stream(f, h, t)
        J = self.bracket(phi, f)
        ft = -(zonal_times(th, f.dv()) + J + zonal_times(h, J))
        ht = -zonal_times(th, h.dv()) - (f.P0() + h) / t
        P = self.P
        tt = -2.0 * th / t - zonal_times(th, th.dv()) + P.back_mean(P.to(f) * P.to(phi.dz())) / t
        return StateTriple(ft, ht, tt, t)

    def background(self, gb, t):
        return BackgroundCache(self, gb, t)

    def delta_prime(self, cache, hp):
        """Delta' phi_bg for the perturbation h' (coefficients A', B' as truncated products)."""
        hb = cache.g.h
        hpv = hp.dv()
        Ap = 2.0 * (hp + zonal_times(hb, hp))
        Bp = zonal_times(hp, cache.hbv) + hpv + zonal_times(hb, hpv)
        return zonal_times(Ap, cache.D2phi) + zonal_times(Bp, cache.Dphi)

    def stream_prime(self, cache, gp):
        src = gp.f.Pneq0()
        if np.any(gp.h.coeffs):
            src = src - self.delta_prime(cache, gp.h)
        return invert(src, cache.coeffs, self.plan)

    def linear(self, gp, cache):
        t = cache.t
        P = self.P
        fp, hp, thp = gp.f, gp.h, gp.theta
        phip = self.stream_prime(cache, gp)
        fpz, fpv = fp.dz(), fp.dv()
        dJ = P.back(-cache.PHv * P.to(fpz) + cache.PHz * P.to(fpv)
                    - P.to(phip.dv()) * cache.Fz + P.to(phip.dz()) * cache.Fv)
        hb, thb = cache.g.h, cache.g.theta
        ft = -(zonal_times(thb, fpv) + zonal_times(thp, cache.fbv) + dJ + zonal_times(hb, dJ)
               + zonal_times(hp, cache.J))
        ht = -(zonal_times(thb, hp.dv()) + zonal_times(thp, cache.hbv)) - (fp.P0() + hp) / t
        tt = (-2.0 * thp / t - zonal_times(thb, thp.dv()) - zonal_times(thp, cache.thbv)
              + P.back_mean(cache.Fp * P.to(phip.dz()) + P.to(fp) * cache.PHz) / t)
        return StateTriple(ft, ht, tt, t)

    def linear_truncated(self, fpp, cache, mask):
        """Q L11 Q applied to f'' (h' = theta' = 0)."""
        P = self.P
        q = SpectralField(fpp.coeffs * mask, self.grid)
        phip = invert(q.Pneq0(), cache.coeffs, self.plan)
        dJ = P.back(-cache.PHv * P.to(q.dz()) + cache.PHz * P.to(q.dv())
                    - P.to(phip.dv()) * cache.Fz + P.to(phip.dz()) * cache.Fv)
        out = -(zonal_times(cache.g.theta, q.dv()) + dJ + zonal_times(cache.g.h, dJ))
        return SpectralField(out.coeffs * mask, self.grid)


class BackgroundCache:
    """Background-derived quantities needed by the linearized right-hand side at time t."""

    def __init__(self, dyn, gb, t):
        self.g = gb
        self.t = float(t)
        P = dyn.P
        self.coeffs = EllipticCoeffs(gb.h, t)
        self.phi = invert(gb.f.Pneq0(), self.coeffs, dyn.plan)
        self.D2phi = self.phi.dt_shift(t).dt_shift(t)
        self.Dphi = self.phi.dt_shift(t)
        self.fbv = gb.f.dv()
        self.hbv = gb.h.dv()
        self.thbv = gb.theta.dv()
        self.Fz = P.to(gb.f.dz())
        self.Fv = P.to(self.fbv)
        self.Fp = P.to(gb.f)
        self.PHz = P.to(self.phi.dz())
        self.PHv = P.to(self.phi.dv())
        self.J = P.back(-self.PHv * self.Fz + self.PHz * self.Fv)


class _BgProvider:
    def __init__(self, dyn, bg, size=6):
        self.dyn = dyn
        self.bg = bg
        self.cache = OrderedDict()
        self.size = size

    def __call__(self, t):
        key = round(float(t), 12)
        c = self.cache.get(key)
        if c is None:
            gb = self.bg.at(t).resample(self.dyn.grid) if self.bg.grid != self.dyn.grid else self.bg.at(t)
            c = BackgroundCache(self.dyn, gb, t)
            self.cache[key] = c
            if len(self.cache) > self.size:
                self.cache.popitem(last=False)
        else:
            self.cache.move_to_end(key)
        return c


# -- integrator ----------------------------------------------------------------

def _rk4(rhs, y, t, dt, k1=None):
    k1 = rhs(y, t) if k1 is None else k1
    k2 = rhs(y.axpy(0.5 * dt, k1), t + 0.5 * dt)
    k3 = rhs(y.axpy(0.5 * dt, k2), t + 0.5 * dt)
    k4 = rhs(y.axpy(dt, k3), t + dt)
    out = y.axpy(dt / 6.0, k1).axpy(dt / 3.0, k2).axpy(dt / 3.0, k3).axpy(dt / 6.0, k4)
    return out.with_t(t + dt)


def _finite(y):
    return all(np.all(np.isfinite(F.coeffs)) for F in y.fields())


def integrate(rhs, y0, cfg, traj, on_step=None):
    """March ``y0`` over the schedule of ``cfg``, storing flagged steps in ``traj``."""
    times, flags = step_schedule(cfg)
    y = y0.with_t(times[0])
    k1 = rhs(y, times[0])
    if not len(traj) or abs(traj.times[-1] - times[0]) > 1e-12:
        traj.append(times[0], y, k1)
    for i in range(1, times.size):
        t0, t1 = times[i - 1], times[i]
        n0 = y.norm()
        ok = False
        for attempt in range(cfg.max_retries + 1):
            sub = 2 ** attempt
            dt = (t1 - t0) / sub
            z = y
            kz = k1
            try:
                for j in range(sub):
                    z = _rk4(rhs, z, t0 + j * dt, dt, kz if j == 0 else None)
                    kz = None
            except (ArithmeticError, FloatingPointError):
                continue
            if _finite(z) and (n0 == 0 or z.norm() <= cfg.growth_limit * n0):
                ok = True
                break
        if not ok:
            raise IntegrationFailure("step rejected after retries", t0)
        y = z.with_t(t1)
        k1 = rhs(y, t1)
        if flags[i]:
            traj.append(t1, y, k1)
        if on_step is not None:
            on_step(t1, y)
    return traj


def background_initial(p, grid, t=1.0):
    """f(1) = eps0 cos z phi_b(v), h = theta = 0."""
    f = grid.zeros()
    if grid.K_z >= 1:
        prof = profiles.phi_b(grid.v, p.C0) * (0.5 * p.eps0)
        row = SpectralField.from_profile(grid, 1, prof)
        f = row + row.conj_reflect()
    return StateTriple(f, grid.zeros(), grid.zeros(), t)


def evolve_background(p, cfg, grid, initial=None, resume=None):
    if cfg.rhs != "nonlinear":
        raise ValueError("background evolution uses the nonlinear right-hand side")
    if resume is None and abs(cfg.t_span[0] - 1.0) > 1e-12 and initial is None:
        raise ValueError("background evolution starts at t = 1")
    dyn = Dynamics(grid, cfg.plan())
    if resume is not None:
        traj = resume
        y0 = resume.final()
        cfg = EvolutionConfig(**{**asdict(cfg), "t_span": (resume.times[-1], cfg.t_span[1])})
    else:
        y0 = background_initial(p, grid) if initial is None else initial
        traj = Trajectory(grid, {"kind": "background", "config": cfg.digest(), "params": p.to_dict()})
    return integrate(dyn.nonlinear, y0, cfg, traj)


def evolve_nonlinear(g0, cfg, grid=None):
    """Nonlinear run from arbitrary data (used for perturbed backgrounds)."""
    grid = g0.grid if grid is None else grid
    dyn = Dynamics(grid, cfg.plan())
    traj = Trajectory(grid, {"kind": "nonlinear", "config": cfg.digest()})
    return integrate(dyn.nonlinear, g0, cfg, traj)


def evolve_linearized(bg, g0, cfg, forcing=None, grid=None):
    grid = g0.grid if grid is None else grid
    lo, hi = bg.span
    ta, tb = cfg.t_span
    if not (lo - 1e-9 <= min(ta, tb) and max(ta, tb) <= hi + 1e-9):
        raise ValueError("background trajectory does not cover the time span")
    dyn = Dynamics(grid, cfg.plan())
    provider = _BgProvider(dyn, bg)

    def rhs(y, t):
        out = dyn.linear(y, provider(t))
        if forcing is not None:
            fr = forcing(t)
            if fr is not None:
                out = out + fr
        return out

    traj = Trajectory(grid, {"kind": "linearized", "config": cfg.digest()})
    return integrate(rhs, g0, cfg, traj)


def truncation_mask(grid, center, widths, psi=None):
    """Q: 1_{|k - k*| <= w_k} psi((xi - eta*)/s) plus the mirrored box."""
    kc, ec = center
    wk, s = widths
    psi = profiles.cutoff if psi is None else psi
    kk = grid.k[:, None]
    xi = grid.xi[None, :]
    m = (np.abs(kk - kc) <= wk) * psi((xi - ec) / s)
    m = m + (np.abs(kk + kc) <= wk) * psi((xi + ec) / s)
    return np.minimum(m, 1.0)


def evolve_linearized_truncated(bg, f0, cfg, center, widths, psi=None, grid=None):
    grid = f0.grid if grid is None else grid
    dyn = Dynamics(grid, cfg.plan())
    provider = _BgProvider(dyn, bg)
    mask = truncation_mask(grid, center, widths, psi)
    zero = grid.zeros()

    def rhs(y, t):
        return StateTriple(dyn.linear_truncated(y.f, provider(t), mask), zero, zero, t)

    g0 = f0 if isinstance(f0, StateTriple) else StateTriple(f0, grid.zeros(), grid.zeros())
    g0 = StateTriple(g0.f, zero, zero, g0.t)
    traj = Trajectory(grid, {"kind": "linearized_truncated", "config": cfg.digest()})
    return integrate(rhs, g0, cfg, traj)


def conserved_integral(g):
    """int int f / (1 + h) dz dv: the pullback of the total vorticity."""
    grid = g.grid
    P = padded(grid)
    w = P.to_zonal(g.h)
    prof = g.f.P0()
    u = P.to_zonal(prof)
    return float(np.real(np.mean(u / (1.0 + w))) * grid.L_v * 2.0 * np.pi)


def fit_exponent(t, y):
    """Least-squares slope of log y against log t."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.vstack([np.log(t), np.ones_like(t)]).T
    return float(np.linalg.lstsq(A, np.log(y), rcond=None)[0][0])
