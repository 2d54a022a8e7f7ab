"""Parameter regime, critical-time partition and growth-product analysis.

Two regimes are supported.  In the ``paper`` regime every small quantity is a
power of ``log k0`` and most of them underflow double precision, so the
parameter set keeps natural logarithms alongside the (possibly saturated)
floating-point values.  The ``desk`` regime takes ``sigma``, ``alpha`` and
``eps0`` independently and derives everything else, which is the operational
default for simulations.
"""
import math
from dataclasses import dataclass, field, asdict

import numpy as np

# exponents of the regime
N = 3000
N_PRIME = 30
N0 = 9000
N1 = 60000
N2 = 30
N3 = 30000

# absolute constants with D >> E >> C; they only enter diagnostic thresholds
DEFAULT_C = 1.0
DEFAULT_E = 10.0
DEFAULT_D = 100.0


class ParamError(ValueError):
    """Raised when a parameter relation is violated."""


def _floor_int(x):
    # integer part, tolerant to rounding noise just below an integer
    return int(math.floor(x + 1e-9))


def _safe_exp(x):
    if x > 709.0:
        return math.inf
    if x < -745.0:
        return 0.0
    return math.exp(x)


@dataclass(frozen=True)
class ParamSet:
    k0: int
    regime: str
    sigma: float
    alpha: float
    eps0: float
    eps1: float
    eta0: float
    T0: float
    T1: float
    T2: float
    T3: float
    k1: int
    k2: int
    k3: int
    C0: float = 1.5
    C: float = DEFAULT_C
    D: float = DEFAULT_D
    E: float = DEFAULT_E
    N: int = N
    Nprime: int = N_PRIME
    N0: int = N0
    N1: int = N1
    N2: int = N2
    N3: int = N3
    # natural logs of the small/large scalars; exact in both regimes
    logs: dict = field(default_factory=dict, compare=False)

    def t(self, m):
        """Critical-interval endpoint t_m = 2 eta0 / (2m + 1)."""
        return 2.0 * self.eta0 / (2 * m + 1)

    def alpha_m(self, m, eta_star=None):
        """Per-interval gain alpha k0^2 eta*/(m^2 eta0); eta* defaults to eta0."""
        a = self.alpha * self.k0 ** 2 / m ** 2
        if eta_star is not None:
            a *= eta_star / self.eta0
        return a

    def eps1_window(self):
        s2k = self.sigma ** 2 * self.k0
        return math.exp(-2.0 * s2k), math.exp(-0.5 * s2k)

    @property
    def eps1_in_window(self):
        lo, hi = self.eps1_window()
        return lo <= self.eps1 <= hi

    def to_dict(self):
        d = asdict(self)
        d.pop("logs")
        return d

    def replace(self, **kw):
        """Re-derive with some desk inputs changed."""
        base = dict(sigma=self.sigma, alpha=self.alpha, eps0=self.eps0,
                    eps1=self.eps1, C0=self.C0, C=self.C, D=self.D, E=self.E)
        k0 = kw.pop("k0", self.k0)
        base.update(kw)
        return derive_params(k0, "desk", base)


def _desk(k0, ov):
    for key in ("sigma", "alpha", "eps0"):
        if key not in ov:
            raise ParamError(f"desk regime requires params.{key}")
    sigma = float(ov["sigma"])
    alpha = float(ov["alpha"])
    eps0 = float(ov["eps0"])
    if not 0.0 < sigma < 1.0:
        raise ParamError("sigma must lie in (0, 1)")
    if not alpha > 1.0:
        raise ParamError("alpha > 1 required")
    if not 0.0 < eps0 < 1.0:
        raise ParamError("eps0 must lie in (0, 1)")
    eps1 = float(ov.get("eps1", 1e-3))
    if not eps1 >= 0.0:
        raise ParamError("eps1 >= 0 required")
    eta0 = 2.0 * k0 ** 2 * alpha / (math.pi * eps0)
    k1 = _floor_int((1.0 - sigma) * k0)
    k2 = _floor_int(eps0 ** (-1.0 / 40.0) * math.sqrt(eta0))
    k3 = _floor_int(eps0 ** (-1.0 / 40.0) * k0)
    logs = dict(sigma=math.log(sigma), alpha_minus_1=math.log(alpha - 1.0),
                eps0=math.log(eps0), eta0=math.log(eta0))
    return dict(sigma=sigma, alpha=alpha, eps0=eps0, eps1=eps1, eta0=eta0,
                k1=k1, k2=k2, k3=k3, logs=logs)


def _paper(k0):
    ll = math.log(math.log(k0))
    log_sigma = -N2 * ll
    log_am1 = -2 * N2 * ll
    log_eps0 = -N3 * ll
    log_alpha = math.log1p(_safe_exp(log_am1))
    log_eta0 = math.log(2.0) + 2 * math.log(k0) + log_alpha - math.log(math.pi) - log_eps0
    # k_j in log form; only k1 is guaranteed to fit in a machine integer
    log_k2 = -log_eps0 / 40.0 + 0.5 * log_eta0
    log_k3 = -log_eps0 / 40.0 + math.log(k0)
    sigma = _safe_exp(log_sigma)
    k1 = _floor_int((1.0 - sigma) * k0)
    k2 = _floor_int(_safe_exp(log_k2)) if log_k2 < 700 else -1
    k3 = _floor_int(_safe_exp(log_k3)) if log_k3 < 700 else -1
    logs = dict(sigma=log_sigma, alpha_minus_1=log_am1, eps0=log_eps0,
                eta0=log_eta0, k2=log_k2, k3=log_k3)
    return dict(sigma=sigma, alpha=math.exp(log_alpha), eps0=_safe_exp(log_eps0),
                eps1=0.0, eta0=_safe_exp(log_eta0), k1=k1, k2=k2, k3=k3, logs=logs)


def derive_params(k0, regime="desk", overrides=None):
    """Build a validated ParamSet from k0 and the regime inputs."""
    overrides = dict(overrides or {})
    if not isinstance(k0, (int, np.integer)) or isinstance(k0, bool):
        raise ParamError("k0 must be an integer")
    k0 = int(k0)
    if k0 < 2:
        raise ParamError("k0 >= 2 required")
    consts = {}
    for key in ("C0", "C", "D", "E"):
        if key in overrides:
            consts[key] = float(overrides.pop(key))
    if regime == "paper":
        if overrides:
            raise ParamError("paper regime accepts no overrides: " + ", ".join(sorted(overrides)))
        d = _paper(k0)
        consts.setdefault("C0", 10.0)
    elif regime == "desk":
        unknown = set(overrides) - {"sigma", "alpha", "eps0", "eps1"}
        if unknown:
            raise ParamError("unknown parameter override: " + ", ".join(sorted(unknown)))
        d = _desk(k0, overrides)
    else:
        raise ParamError(f"unknown regime {regime!r}")
    if consts.get("C0", 1.0) <= 0:
        raise ParamError("C0 > 0 required")
    eta0 = d["eta0"]
    T0 = 2.0 * eta0 / (2 * k0 + 1)

    def tm(m):
        return 2.0 * eta0 / (2 * m + 1) if m > 0 else math.inf

    T1 = tm(d["k1"])
    T2 = tm(d["k2"]) if d["k2"] > 0 else 0.0
    T3 = tm(d["k3"]) if d["k3"] > 0 else 0.0
    p = ParamSet(k0=k0, regime=regime, T0=T0, T1=T1, T2=T2, T3=T3, **d, **consts)
    if regime == "desk":
        if not p.k2 > p.k0 > p.k1:
            raise ParamError(f"ordering k2 > k0 > k1 violated (k1={p.k1}, k0={p.k0}, k2={p.k2})")
        if not p.T1 > p.T0 > p.T2:
            raise ParamError("ordering T1 > T0 > T2 violated")
    return p


@dataclass(frozen=True)
class CriticalGrid:
    m_lo: int
    m_hi: int
    times: dict
    resonances: dict

    def interval(self, m):
        """The critical interval [t_m, t_{m-1}] containing eta0/m."""
        return self.times[m], self.times[m - 1]


def critical_times(p, m_lo, m_hi):
    if m_lo < 1:
        raise ParamError("m_lo >= 1 required")
    if m_hi < m_lo:
        raise ParamError("m_hi >= m_lo required")
    times = {m: p.t(m) for m in range(m_lo - 1, m_hi + 1)}
    res = {m: p.eta0 / m for m in range(m_lo, m_hi + 1)}
    for m in range(m_lo, m_hi + 1):
        if not times[m] <= res[m] <= times[m - 1]:
            raise ParamError(f"resonance eta0/{m} outside its critical interval")
    return CriticalGrid(m_lo, m_hi, times, res)


def nu(beta, eps0):
    """Per-interval amplification envelope.

    The two prescribed pieces only join monotonically when eps0 < 4**-5.  For
    larger eps0 the plateau exceeds the upper branch at its left end; the
    bridge is then replaced by the smallest non-decreasing function that
    agrees with both prescribed pieces, i.e. max(plateau, upper branch).
    """
    scalar = np.ndim(beta) == 0
    b = np.atleast_1d(np.asarray(beta, dtype=float))
    if np.any((b < 0) | (b > 2)) or not np.all(np.isfinite(b)):
        raise ParamError("nu: beta must lie in [0, 2]")
    if not 0.0 < eps0 < 1.0:
        raise ParamError("nu: eps0 must lie in (0, 1)")
    e35 = eps0 ** 0.6
    low = 1.0 + 4.0 * e35
    up = (1.0 + eps0 ** 0.4) * np.maximum(1.0, b)
    up_left = (1.0 + eps0 ** 0.4) * max(1.0, 2.0 * e35)
    if up_left >= low:
        bridge = low + (up_left - low) * (b - e35) / e35
        out = np.where(b <= e35, low, np.where(b >= 2.0 * e35, up, bridge))
    else:
        out = np.maximum(low, up)
    return float(out[0]) if scalar else out


def growth_product(p, m_lo, m_hi, mode="max1", allow_empty=False):
    """Log of prod_m max(1, alpha k0^2/m^2) (or of nu of it) over m_lo..m_hi."""
    if m_lo > m_hi:
        if allow_empty:
            return 0.0
        raise ParamError("empty range; pass allow_empty=True for the empty product")
    if m_lo < 1:
        raise ParamError("m_lo >= 1 required")
    m = np.arange(m_lo, m_hi + 1, dtype=float)
    a = p.alpha * p.k0 ** 2 / m ** 2
    if mode == "max1":
        return float(np.sum(np.log(np.maximum(1.0, a))))
    if mode == "nu":
        return float(np.sum(np.log(nu(np.minimum(a, 2.0), p.eps0))))
    raise ParamError(f"unknown mode {mode!r}")


def stirling_b(sigma):
    """Leading terms of the Stirling constant b(sigma) = sigma^2 + 4 sigma^3 / 3."""
    return sigma ** 2 + 4.0 * sigma ** 3 / 3.0


def envelope_ratio_ok(p, m, ratio, n=2, eta_star=None):
    """Check B(t_{m-1})^n / B(t_m)^n >= nu(alpha*_m) for the n-th power envelope."""
    a = min(p.alpha_m(m, eta_star), 2.0)
    return ratio ** n >= nu(a, p.eps0)
