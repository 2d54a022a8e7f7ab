"""Weighted energies, shifted weights and localization functionals.

All exponential weights are evaluated in the log domain; a sum whose log
exceeds the double range is reported as saturated rather than raised.
"""
import csv
import json
import math
import sys
from dataclasses import dataclass, asdict, field

import numpy as np
from scipy.integrate import quad

from . import _accel
from .spectral import NormSpec, log_norm2, box_fraction

LOG_MAX = math.log(sys.float_info.max)
PRESETS = ("M0", "M1", "M2")


@dataclass(frozen=True)
class WeightSpec:
    beta: float
    shift: tuple = (0, 0.0)
    tau: float = 1.0
    T0: float = 1.0

    def __post_init__(self):
        if not self.beta >= 1.0:
            raise ValueError(f"weight scale must be >= 1, got {self.beta}")
        if not 0.5 <= self.tau <= 2.0:
            raise ValueError("tau must lie in [1/2, 2]")
        if not self.T0 > 1.0:
            raise ValueError("T0 > 1 required for the lambda0 profile")


def weight_spec(p, preset, shift=None, tau=1.0):
    """Preset weights: eps0^{-1/2} for M0/M1, Q = eps0^{-1} (log k0)^{-3} for M2."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    beta = p.eps0 ** -0.5 if preset != "M2" else 1.0 / (p.eps0 * math.log(p.k0) ** 3)
    shift = (p.k0, p.eta0) if shift is None else shift
    return WeightSpec(beta, tuple(shift), tau, p.T0)


def _beta(spec):
    return spec.beta if isinstance(spec, WeightSpec) else float(spec)


def weight_A(t, k, xi, spec):
    """A_{k,beta}(t, xi); the k = 0 branch is 1 / (xi^2 + beta^2)."""
    b = _beta(spec)
    k = np.asarray(k, dtype=float)
    xi = np.asarray(xi, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(k == 0, 1.0 / (xi ** 2 + b * b), 1.0 / ((xi - k * t) ** 2 + b * b * k * k))
    return out[()] if out.ndim == 0 else out


def weight_A_star(t, xi, spec, K):
    """sum_{|k| <= K} e^{-2|k|} A_{k,beta}(t, xi)."""
    ks = np.arange(-K, K + 1)
    xi = np.asarray(xi, dtype=float)
    w = np.exp(-2.0 * np.abs(ks))
    vals = weight_A(t, ks.reshape((-1,) + (1,) * xi.ndim), xi[None, ...], spec)
    return np.tensordot(w, vals, axes=1)


def lambda0(t, T0):
    return 1.0 - abs(math.log(t) - math.log(T0)) / math.log(T0) ** 2


def _log_sum(logw, amp2):
    lv, _ = _accel.log_weighted_sum(np.ascontiguousarray(logw, dtype=float), np.ascontiguousarray(amp2, dtype=float))
    return lv


def energy_log(g, t, preset, spec):
    """log of M0 / M1 / M2; -inf for g = 0."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    grid = g.grid
    kk = np.broadcast_to(grid.k[:, None].astype(float), grid.shape)
    xx = np.broadcast_to(grid.xi[None, :], grid.shape)
    A = weight_A(t, kk, xx, spec)
    Astar = weight_A_star(t, grid.xi, spec, grid.K_z)
    logw1 = np.log(A)
    logw0 = np.log(Astar)
    if preset == "M0":
        ks, es = spec.shift
        lam = spec.tau * lambda0(t, spec.T0)
        logw1 = logw1 + lam * (np.abs(kk - ks) + np.abs(xx - es))
        logw0 = logw0 + lam * (abs(ks) + np.abs(grid.xi - es))
    parts = [_log_sum(logw1, np.abs(g.f.coeffs) ** 2 * grid.dxi)]
    i0 = grid.row(0)
    for F in (g.h, g.theta):
        parts.append(_log_sum(logw0, np.abs(F.coeffs[i0]) ** 2 * grid.dxi))
    return float(np.logaddexp.reduce(parts))


def energy(g, t, preset, spec):
    """M0 / M1 / M2, saturating at the largest double."""
    lv = energy_log(g, t, preset, spec)
    if lv == -np.inf:
        return 0.0
    return sys.float_info.max if lv >= LOG_MAX else math.exp(lv)


# -- the lambda / H / mu weight system ------------------------------------------

@dataclass(frozen=True)
class ShiftedWeights:
    """Moving weights on [T2, T0] ("before") or [T0, T1] ("after")."""
    p: object
    side: str = "before"
    q_range: int = 24

    def __post_init__(self):
        if self.side not in ("before", "after"):
            raise ValueError("side must be 'before' or 'after'")

    def lam(self, t):
        p = self.p
        if self.side == "before":
            return p.C0 ** (2 / 3) - p.C0 ** (1 / 3) * abs(t - p.T0) / p.T0
        return 1.0 - p.E * (t - p.T0) / (math.sqrt(p.sigma) * p.T0)

    def _ks(self):
        p = self.p
        if self.side == "before":
            kmax = 2 * p.k0 + self.q_range
            ks = np.arange(-kmax, kmax + 1)
            return ks[np.abs(ks) > p.k0 / 2]
        w = int(math.floor(2 * p.sigma * p.k0))
        return np.arange(p.k0 - w, p.k0 + w + 1)

    def _qs(self):
        ks = self._ks()
        qs = np.arange(ks.min() - self.q_range, ks.max() + self.q_range + 1)
        qs = qs[qs != 0]
        # sum_k e^{-2|k - q|} over the k-range, per q
        kw = np.exp(-2.0 * np.abs(ks[:, None] - qs[None, :])).sum(axis=0)
        return qs, kw

    def _prefactor(self):
        p = self.p
        return p.C0 ** (1 / 3) if self.side == "before" else 1.0

    def _base(self, t):
        p = self.p
        if self.side == "before":
            return p.E * (p.eps0 + p.eps0 * p.eta0 / t ** 2)
        return p.eps0

    def H(self, t, xi):
        p = self.p
        xi = np.asarray(xi, dtype=float)
        qs, kw = self._qs()
        lor = p.eps0 * p.eta0 / ((xi[..., None] - t * qs) ** 2 + qs ** 2)
        return self._base(t) + self._prefactor() * (lor * kw).sum(axis=-1)

    def _H_integral(self, a, b, xi):
        """int_a^b H(t', xi) dt' in closed form."""
        p = self.p
        xi = np.asarray(xi, dtype=float)
        qs, kw = self._qs()
        at = (np.arctan((b * qs - xi[..., None]) / np.abs(qs)) - np.arctan((a * qs - xi[..., None]) / np.abs(qs)))
        lor = p.eps0 * p.eta0 * at / (qs * np.abs(qs))
        if self.side == "before":
            base = p.E * (p.eps0 * (b - a) + p.eps0 * p.eta0 * (1.0 / a - 1.0 / b))
        else:
            base = p.eps0 * (b - a)
        return base + self._prefactor() * (lor * kw).sum(axis=-1)

    def mu(self, t, xi):
        p = self.p
        if self.side == "before":
            return -self._H_integral(t, p.T0, xi)
        return -p.E * self._H_integral(p.T0, t, xi)

    def mu_quadrature(self, t, xi):
        """The same integral by adaptive quadrature, breaking at the critical times xi / q."""
        p = self.p
        a, b = (t, p.T0) if self.side == "before" else (p.T0, t)
        qs, _ = self._qs()
        crit = sorted(float(xi / q) for q in qs if a < xi / q < b)
        val, _ = quad(lambda s: float(self.H(s, xi)), a, b, points=crit or None, limit=400,
                      epsabs=1e-12, epsrel=1e-11)
        return -val if self.side == "before" else -p.E * val

    def log_weight(self, t, k, xi):
        p = self.p
        dxi = np.abs(xi - p.eta0)
        if self.side == "after":
            dxi = math.sqrt(p.sigma) * dxi
        return self.mu(t, xi) + self.lam(t) * (np.abs(k - p.k0) + dxi)

    def energy_log(self, g, t):
        grid = g.grid
        logw = self.log_weight(t, grid.k[:, None].astype(float), grid.xi[None, :])
        parts = [_log_sum(logw, np.abs(F.coeffs) ** 2 * grid.dxi) for F in g.fields()]
        return float(np.logaddexp.reduce(parts))

    def holder_constant(self, t, xi):
        """max |mu(t, a) - mu(t, b)| / |a - b| over neighbouring samples."""
        xi = np.sort(np.asarray(xi, dtype=float))
        m = self.mu(t, xi)
        return float(np.max(np.abs(np.diff(m)) / np.diff(xi)))


# -- physical localization -------------------------------------------------------

def zeta(x):
    """exp(|x| / log+(|x|)^3) with log+(s) = log(2 + s)."""
    a = np.abs(np.asarray(x, dtype=float))
    return np.exp(a / np.log(2.0 + a) ** 3)


def zeta_mass(profiles, p, v=None):
    """sum_k int zeta(k0 sqrt(sigma) v) |beta_k(v)|^2 dv.

    ``profiles`` is a recurrence state (its grid supplies v) or a mapping of
    profiles sampled at ``v``.
    """
    beta = getattr(profiles, "beta", profiles)
    if v is None:
        v = profiles.grid.v
    v = np.asarray(v, dtype=float)
    dv = (v[-1] - v[0]) / (v.size - 1)
    w = zeta(p.k0 * math.sqrt(p.sigma) * v)
    return float(sum(np.sum(w * np.abs(b) ** 2) for b in beta.values()) * dv)


# -- reports ----------------------------------------------------------------------

@dataclass
class EnergyReport:
    t: float
    M0: float
    M1: float
    M2: float
    gevrey: float
    sobolev: float
    l2: float
    box_mass: float
    zeta_mass: float = 0.0
    saturated: list = field(default_factory=list)

    def validate(self):
        for k, v in asdict(self).items():
            if k == "saturated":
                continue
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"report entry {k} = {v} is not finite and nonnegative")
        return self

    def row(self):
        d = asdict(self)
        d["saturated"] = ";".join(self.saturated)
        return d


def _saturating(fn):
    try:
        v = fn()
    except (OverflowError, FloatingPointError):
        return sys.float_info.max, True
    if not math.isfinite(v):
        return sys.float_info.max, True
    return v, False


def energy_report(g, t, p, shift=None, box=None, profiles=None, gevrey_lam=0.5, sobolev_s=4.0):
    shift = (p.k0, p.eta0) if shift is None else shift
    box = (shift, (p.k0, p.k0)) if box is None else box
    vals, sat = {}, []
    for preset in PRESETS:
        vals[preset], s = _saturating(lambda: energy(g, t, preset, weight_spec(p, preset, shift)))
        if s or vals[preset] == sys.float_info.max:
            sat.append(preset)
    gev, s = _saturating(lambda: _field_norm(g, NormSpec("gevrey_lambda", lam=gevrey_lam, N1=1)))
    if s:
        sat.append("gevrey")
    sob, _ = _saturating(lambda: _field_norm(g, NormSpec("sobolev", s=sobolev_s)))
    l2 = g.norm()
    bm = box_fraction(g.f, box[0], box[1]) if np.any(g.f.coeffs) else 1.0
    zm = zeta_mass(profiles, p) if profiles is not None else 0.0
    return EnergyReport(float(t), vals["M0"], vals["M1"], vals["M2"], gev, sob, l2, float(bm), zm, sat).validate()


def _field_norm(g, spec):
    lv = np.logaddexp.reduce([log_norm2(F, spec) for F in g.fields()])
    if lv == -np.inf:
        return 0.0
    if 0.5 * lv >= LOG_MAX:
        return sys.float_info.max
    return math.exp(0.5 * lv)


def write_reports_csv(path, reports, append=False):
    cols = list(EnergyReport.__dataclass_fields__)
    mode = "a" if append else "w"
    with open(path, mode, newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        if not append or fh.tell() == 0:
            w.writeheader()
        for r in reports:
            row = r.row()
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_summary_json(path, reports):
    data = {"count": len(reports), "reports": [r.row() for r in reports]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
