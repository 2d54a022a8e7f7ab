"""Critical-interval recurrence model of the echo cascade.

On each critical interval [t_m, t_{m-1}] only the mode m is near resonance,
and the background modes k = +-1 pass its energy to the neighbours m +- 1:

    beta_{m+-1} <- beta_{m+-1} + (+-s) c_m phi_b beta_m,   c_m = alpha k0^2 eta* / (m^2 eta0),

and, through theta', the rows k = +-1 pick up tau (c_m / pi) phi_b' beta_theta.
All beta_k share one carrier e^{i eta* v}; the state stores the envelopes
b_k = e^{-i eta* v} beta_k on a v-grid, so the model runs for carriers far
beyond any grid.  Norms are unaffected by the carrier.
"""
import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import profiles
from .params import ParamError, nu
from .spectral import Grid, SpectralField
from .coords import StateTriple

# coupling signs (s for the f-rows, tau for the theta-rows) per direction of travel;
# s is fixed by the linearized PDE, tau by integrating -theta' d_v f_bg over the interval
COUPLING_SIGN = {"forward": 1.0, "backward": -1.0}
THETA_SIGN = {"forward": -1.0, "backward": 1.0}


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class ProfileLibrary:
    C0: float
    n_conv: int
    widths: tuple
    psi_inner: float = 1.0 / 6.0
    psi_outer: float = 0.25

    def phi_b(self, v):
        return profiles.phi_b(v, self.C0)

    def dphi_b(self, v):
        return profiles.dphi_b(v, self.C0)

    def phi_p(self, u):
        return profiles.phi_p(u, self.n_conv)

    def phi_p_periodic(self, v, scale, L):
        return profiles.phi_p_periodic(v, scale, L, self.n_conv)

    def phi_p_hat(self, xi):
        return profiles.phi_p_hat(xi, self.n_conv)

    def psi(self, z):
        return profiles.cutoff(z, self.psi_inner, self.psi_outer, self.n_conv)


def build_profiles(p, n_conv=8):
    if n_conv < 8:
        raise ValueError("n_conv >= 8 required")
    a = profiles.widths(n_conv)
    return ProfileLibrary(float(p.C0), int(n_conv), tuple(float(x) for x in a))


@dataclass(frozen=True)
class RecurrenceState:
    grid: Grid
    beta: dict
    beta_h: np.ndarray
    beta_theta: np.ndarray
    m: int
    center: tuple
    direction: str = "forward"

    @property
    def carrier(self):
        return self.center[1]

    @property
    def v(self):
        return self.grid.v

    def norm(self, k):
        b = self.beta.get(k)
        return 0.0 if b is None else l2(b, self.grid)

    def sup_norm(self):
        return max([l2(b, self.grid) for b in self.beta.values()] + [0.0])

    def scaled(self, c):
        return replace(self, beta={k: c * b for k, b in self.beta.items()},
                       beta_h=c * self.beta_h, beta_theta=c * self.beta_theta)


def l2(b, grid):
    return float(np.sqrt(np.sum(np.abs(b) ** 2) * grid.dv))


def star_indices(p, eta_star):
    """(k0*, k1*, k2*) with t*_{k_j*} <= T_j < t*_{k_j* - 1}, t*_m = 2 eta*/(2m+1)."""
    out = []
    for T in (p.T0, p.T1, p.T2):
        if T <= 0:
            out.append(10 ** 9)
            continue
        out.append(int(math.ceil((2.0 * eta_star / T - 1.0) / 2.0 - 1e-12)))
    return tuple(out)


def t_star(m, eta_star):
    return 2.0 * eta_star / (2 * m + 1)


def snap_carrier(eta, grid):
    """Nearest lattice frequency to eta."""
    return float(np.round(eta / grid.dxi) * grid.dxi)


def seed_state(p, lib, grid, center=None, direction="forward", snap=False, eps1=None):
    """beta_{k*} = (eps1/2) e^{i eta* v} phi_p(k0 sqrt(sigma) v); all other modes zero."""
    kc, ec = (p.k0, p.eta0) if center is None else center
    if snap:
        ec = snap_carrier(ec, grid)
    s = p.k0 * math.sqrt(p.sigma)
    if s >= grid.xi_max or grid.dxi > s / 2.0:
        raise GridError(f"v-grid cannot resolve the spectral width {s:.4g} "
                        f"(dxi = {grid.dxi:.4g}, xi_max = {grid.xi_max:.4g})")
    e1 = p.eps1 if eps1 is None else eps1
    b = 0.5 * e1 * lib.phi_p_periodic(grid.v, s, grid.L_v)
    zero = np.zeros(grid.N_v)
    return RecurrenceState(grid, {int(kc): b.astype(np.complex128)}, zero, zero.copy(),
                           int(kc), (int(kc), float(ec)), direction)


def _check_range(s, p):
    k0s, k1s, k2s = star_indices(p, s.carrier)
    m = s.m
    if s.direction == "forward":
        if not k1s < m <= k0s:
            raise ParamError(f"forward step needs {k1s} < m <= {k0s}, got m = {m}")
    elif s.direction == "backward":
        if not k0s < m + 1 <= k2s:
            raise ParamError(f"backward step needs {k0s} < m + 1 <= {k2s}, got m = {m}")
    else:
        raise ValueError(f"unknown direction {s.direction!r}")


def recurrence_step(s, lib, p, flat=False):
    """One critical interval.  ``flat`` replaces phi_b by 1 (idealized cascade)."""
    _check_range(s, p)
    v = s.grid.v
    fb = np.ones_like(v) if flat else lib.phi_b(v)
    dfb = np.zeros_like(v) if flat else lib.dphi_b(v)
    beta = dict(s.beta)
    if s.direction == "forward":
        m, nxt = s.m, s.m - 1
    else:
        m, nxt = s.m + 1, s.m + 1
    c = p.alpha_m(m, s.carrier)
    sgn = COUPLING_SIGN[s.direction]
    src = s.beta.get(m)
    if src is not None:
        for d in (1, -1):
            beta[m + d] = beta.get(m + d, 0.0) + (d * sgn * c) * fb * src
    if np.any(s.beta_theta):
        tau = THETA_SIGN[s.direction]
        for k in (1, -1):
            # k = -1 carries the conjugate profile of the real field
            th = s.beta_theta if k == 1 else np.conj(s.beta_theta)
            beta[k] = beta.get(k, 0.0) + (tau * c / math.pi) * dfb * th
    beta = {k: np.asarray(b, dtype=np.complex128) for k, b in beta.items()}
    return replace(s, beta=beta, m=nxt)


@dataclass
class GrowthTable:
    rows: list = field(default_factory=list)

    columns = ("m", "t_m", "B_m", "F_m", "ratio", "model_coeff", "pde_gap")

    @property
    def ratios(self):
        return np.array([r["ratio"] for r in self.rows], dtype=float)

    @property
    def coeffs(self):
        return np.array([r["model_coeff"] for r in self.rows], dtype=float)

    def band_check(self, sigma, factor=2.0):
        """Each ratio inside [c (1 - factor sigma^6), c (1 + factor sigma^6)]."""
        d = factor * sigma ** 6
        c = self.coeffs
        r = self.ratios
        return (r >= c * (1 - d)) & (r <= c * (1 + d))

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in self.columns])


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def run_growth(s0, steps, lib, p, flat=False):
    """Iterate the recurrence, recording B_m = ||beta_m(t_m)|| and F_m = sup_k ||beta_k(t_m)||."""
    s = s0
    seq_B, seq_F = [], []
    table = GrowthTable()
    for _ in range(steps):
        m = s.m if s.direction == "forward" else s.m + 1
        Bm = s.norm(m)
        Fm = s.sup_norm()
        s_next = recurrence_step(s, lib, p, flat)
        nxt = m - 1 if s.direction == "forward" else m
        Bn = s_next.norm(nxt) if s.direction == "forward" else s_next.norm(m + 1)
        ratio = Bn / Bm if Bm > 0 else float("nan")
        table.rows.append(dict(m=m, t_m=t_star(m, s.carrier), B_m=Bm, F_m=Fm, ratio=ratio,
                               model_coeff=p.alpha_m(m, s.carrier), pde_gap=None))
        seq_B.append(Bm)
        seq_F.append(Fm)
        s = s_next
    return s, np.array(seq_B), np.array(seq_F), table


def ladder(s0, lib, p, flat=False):
    """{m: B_m} for k1 <= m <= k0 from a forward run seeded at m = k0."""
    if s0.direction != "forward" or s0.m != p.k0:
        raise ValueError("the ladder starts from a forward state at m = k0")
    s, B, _, _ = run_growth(s0, p.k0 - p.k1, lib, p, flat)
    out = {p.k0 - i: float(b) for i, b in enumerate(B)}
    out[p.k1] = s.norm(p.k1)
    return out


def backward_envelope(p, m_hi, eta_star=None):
    """eps1 prod_{j=k0+1}^{m} nu(min(alpha_j, 2)) for m = k0+1..m_hi."""
    out = []
    acc = p.eps1
    for j in range(p.k0 + 1, m_hi + 1):
        acc *= nu(min(p.alpha_m(j, eta_star), 2.0), p.eps0)
        out.append(acc)
    return np.array(out)


def outside_mass(s, radius):
    """Fraction of sum_k ||beta_k||^2 carried by |v| > radius."""
    v = s.grid.v
    tot = sum(np.sum(np.abs(b) ** 2) for b in s.beta.values())
    out = sum(np.sum(np.abs(b[np.abs(v) > radius]) ** 2) for b in s.beta.values())
    return float(out / tot) if tot > 0 else 0.0


# -- PDE bridge ----------------------------------------------------------------

def _check_carrier(s, grid):
    ec = s.carrier
    if abs(ec / grid.dxi - round(ec / grid.dxi)) > 1e-9:
        raise GridError("carrier is not a lattice frequency; seed with snap=True")
    if abs(ec) + grid.xi_max * 0.05 >= grid.xi_max:
        raise GridError("carrier too close to the grid cutoff")


def to_state(s, grid, t, charged=False):
    """The real perturbation sum_k beta_k e^{ikz} + c.c. as a StateTriple.

    With charged=True only the positive-charge half sum_k beta_k e^{ikz} is returned
    (h and theta rows are then dropped, they carry no charge).
    """
    if grid.N_v != s.grid.N_v or abs(grid.L_v - s.grid.L_v) > 1e-12:
        raise GridError("state and PDE grids must share the v-samples")
    _check_carrier(s, grid)
    ph = np.exp(1j * s.carrier * grid.v)
    f = grid.zeros()
    for k, b in s.beta.items():
        if k == 0 or abs(k) > grid.K_z or not np.any(b):
            continue
        if k < 0 and -k in s.beta:
            # negative rows follow from reality
            continue
        row = SpectralField.from_profile(grid, k, ph * b)
        f = f + row if charged else f + row + row.conj_reflect()
    if charged:
        return StateTriple(f, grid.zeros(), grid.zeros(), t)
    h = SpectralField.from_physical(np.real(s.beta_h), grid)
    th = SpectralField.from_physical(np.real(s.beta_theta), grid)
    return StateTriple(f, h, th, t)


def from_state(g, template, m=None):
    """Envelopes of the positive modes of a PDE state, with the template's carrier and grid."""
    grid = g.grid
    ph = np.exp(-1j * template.carrier * grid.v)
    beta = {}
    for k in range(1, grid.K_z + 1):
        prof = g.f.profile(k)
        if np.any(prof):
            beta[k] = prof * ph
    return replace(template, beta=beta, beta_h=np.real(g.h.profile(0)),
                   beta_theta=np.real(g.theta.profile(0)), m=template.m if m is None else m)


def compare_to_pde(s0, bg, cfg, lib, p, grid, intervals=1):
    """Per-interval comparison of the linearized PDE with one recurrence step.

    Each interval starts from the PDE state at its left end (the seed for the
    first).  Reported: the relative increment error on the active rows m +- 1,
    the off-resonant increment size and sup_k ||beta_pde - beta_model|| / F.
    """
    from .evolve import EvolutionConfig, evolve_linearized
    if s0.direction != "forward":
        raise ValueError("PDE comparison runs forward in time")
    s = s0
    g = to_state(s, grid, t_star(s.m, s.carrier))
    out = []
    for _ in range(intervals):
        m = s.m
        ta, tb = t_star(m, s.carrier), t_star(m - 1, s.carrier)
        c = EvolutionConfig((ta, tb), dt_base=cfg.dt_base, refine_factor=cfg.refine_factor,
                            critical_window=cfg.critical_window,
                            critical_times=(s.carrier / m,), store_every=None, green=cfg.green,
                            green_tol=cfg.green_tol)
        traj = evolve_linearized(bg, g.with_t(ta), c, grid=grid)
        g = traj.final()
        pde = from_state(g, s, m - 1)
        model = recurrence_step(s, lib, p)
        F = max(s.sup_norm(), 1e-300)
        keys = set(pde.beta) | set(model.beta)
        gap = max(l2(pde.beta.get(k, 0 * s.v) - model.beta.get(k, 0 * s.v), grid) for k in keys) / F
        inc_err, inc_size = [], []
        for k in (m - 1, m + 1):
            start = s.beta.get(k, 0 * s.v)
            dp = pde.beta.get(k, 0 * s.v) - start
            dm = model.beta.get(k, 0 * s.v) - start
            inc_err.append(l2(dp - dm, grid) / max(l2(dm, grid), 1e-300))
            inc_size.append(l2(dp, grid))
        off = [l2(pde.beta[k] - s.beta.get(k, 0 * s.v), grid) for k in pde.beta if k not in (m - 1, m, m + 1)]
        active = max(inc_size) if inc_size else 0.0
        out.append(dict(m=m, t_start=ta, t_end=tb, gap=gap, increment_error=max(inc_err),
                        increment_error_minus=inc_err[0], increment_error_plus=inc_err[1],
                        off_resonant=(max(off) / active) if off and active > 0 else 0.0,
                        F=F))
        s = pde
    return out


def truncated_quadrature(p, m, t_lo, t_hi, eta=None):
    """int_{t_lo}^{t_hi} eps0 eta dt / ((eta - t m)^2 + m^2) in closed form."""
    eta = p.eta0 if eta is None else eta
    return p.eps0 * eta / m ** 2 * (math.atan((t_hi * m - eta) / m) - math.atan((t_lo * m - eta) / m))
