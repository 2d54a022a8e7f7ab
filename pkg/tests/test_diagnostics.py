import json
import math
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from couette_echo.coords import StateTriple
from couette_echo.diagnostics import (EnergyReport, ShiftedWeights, WeightSpec, energy, energy_log, energy_report,
                                      lambda0, weight_A, weight_A_star, weight_spec, write_reports_csv,
                                      write_summary_json, zeta, zeta_mass)
from couette_echo.echo import build_profiles, seed_state
from couette_echo.spectral import Grid
from tests.helpers import rand_field

G = Grid(10, 256, 4 * np.pi)


def single_mode(k, j, amp, t=5.0):
    s = StateTriple.zeros(G, t)
    s.f.coeffs[G.row(k), j] = amp
    return s


def test_weight_spec_validation(p8):
    with pytest.raises(ValueError):
        WeightSpec(0.5)
    with pytest.raises(ValueError):
        WeightSpec(2.0, tau=3.0)
    with pytest.raises(ValueError):
        WeightSpec(2.0, T0=1.0)
    with pytest.raises(ValueError):
        weight_spec(p8, "M3")
    assert weight_spec(p8, "M1").beta == pytest.approx(p8.eps0 ** -0.5)
    assert weight_spec(p8, "M2").beta == pytest.approx(1 / (p8.eps0 * math.log(8) ** 3))
    assert weight_spec(p8, "M0").shift == (p8.k0, p8.eta0)


def test_weight_at_resonance():
    b = 3.0
    for k in (1, -2, 7):
        assert weight_A(4.0, k, 4.0 * k, b) == pytest.approx(1 / (b * b * k * k))
    assert weight_A(4.0, 0, 2.0, b) == pytest.approx(1 / (4 + b * b))


@settings(max_examples=50)
@given(t=st.floats(0, 100), k=st.integers(-20, 20), xi=st.floats(-1e3, 1e3), b=st.floats(1, 1e3))
def test_weight_symmetry_and_time_derivative(t, k, xi, b):
    A = weight_A(t, k, xi, b)
    assert A == weight_A(t, -k, -xi, b)
    # d_t A = 2k(xi - kt) A^2, bounded by A / beta and by 2|k| A^(3/2)
    dA = 2 * k * (xi - k * t) * A * A
    assert abs(dA) <= A / b * (1 + 1e-12)
    assert abs(dA) <= 2 * abs(k) * A ** 1.5 * (1 + 1e-12)


def test_weight_derivative_matches_difference():
    t, k, xi, b = 3.0, 2, 5.5, 1.5
    h = 1e-5
    fd = (weight_A(t + h, k, xi, b) - weight_A(t - h, k, xi, b)) / (2 * h)
    A = weight_A(t, k, xi, b)
    assert fd == pytest.approx(2 * k * (xi - k * t) * A * A, rel=1e-8)


def test_weight_A_star_sum():
    xi = np.linspace(-20, 20, 41)
    direct = sum(math.exp(-2 * abs(k)) * weight_A(2.0, k, xi, 2.0) for k in range(-3, 4))
    assert np.allclose(weight_A_star(2.0, xi, 2.0, 3), direct, rtol=1e-14)
    assert np.allclose(weight_A_star(2.0, xi, 2.0, 0), weight_A(2.0, 0, xi, 2.0), rtol=1e-14)


def test_lambda0_profile():
    T0 = 50.0
    assert lambda0(T0, T0) == 1.0
    assert lambda0(T0 * 2, T0) == pytest.approx(lambda0(T0 / 2, T0))
    assert lambda0(T0 * 2, T0) < 1.0


def test_single_mode_energy(p8):
    spec = weight_spec(p8, "M1")
    s = single_mode(3, 5, 2.0)
    assert energy(s, 5.0, "M1", spec) == pytest.approx(4 * weight_A(5.0, 3, G.xi[5], spec) * G.dxi, rel=1e-12)


def test_zero_energy(p8):
    z = StateTriple.zeros(G, 5.0)
    for preset in ("M0", "M1", "M2"):
        spec = weight_spec(p8, preset)
        assert energy_log(z, 5.0, preset, spec) == -np.inf
        assert energy(z, 5.0, preset, spec) == 0.0
    with pytest.raises(ValueError):
        energy_log(z, 5.0, "L2", weight_spec(p8, "M1"))


def test_energy_is_quadratic(p8, rng):
    s = StateTriple(rand_field(G, rng), rand_field(G, rng, zonal=True), rand_field(G, rng, zonal=True), 5.0)
    for preset in ("M1", "M2"):
        spec = weight_spec(p8, preset)
        assert energy(s * 3.0, 5.0, preset, spec) == pytest.approx(9 * energy(s, 5.0, preset, spec), rel=1e-12)


def test_large_beta_scaling():
    # for k != 0 the weight tends to 1 / (beta^2 k^2)
    s = single_mode(2, 7, 1.0)
    e = [energy(s, 1.0, "M1", WeightSpec(b, T0=2.0)) for b in (1e2, 1e3)]
    assert e[0] / e[1] == pytest.approx(100.0, rel=0.1)
    assert e[1] * 1e6 * 4 / G.dxi == pytest.approx(1.0, rel=0.1)


def test_m0_saturates_in_log_domain(p8, rng):
    s = StateTriple(rand_field(G, rng), G.zeros(), G.zeros(), 5.0)
    spec = weight_spec(p8, "M0")
    lv = energy_log(s, 5.0, "M0", spec)
    assert np.isfinite(lv) and lv > math.log(sys.float_info.max)
    assert energy(s, 5.0, "M0", spec) == sys.float_info.max
    # the log stays exact under scaling even past the double range
    assert energy_log(s * 3.0, 5.0, "M0", spec) == pytest.approx(lv + 2 * math.log(3.0), rel=1e-14)


@pytest.mark.parametrize("side", ["before", "after"])
def test_mu_closed_form_matches_quadrature(p8, side):
    W = ShiftedWeights(p8, side)
    t = p8.T2 + 5 if side == "before" else p8.t(7) - 3
    for xi in (p8.eta0, 0.9 * p8.eta0, 3.0, -40.0):
        assert W.mu(t, xi) == pytest.approx(W.mu_quadrature(t, xi), rel=1e-10)
    assert W.mu(p8.T0, p8.eta0) == 0.0


@pytest.mark.parametrize("side", ["before", "after"])
def test_holder_constant_finite(p8, side):
    W = ShiftedWeights(p8, side)
    t = p8.T2 + 5 if side == "before" else p8.t(7) - 3
    c = W.holder_constant(t, np.linspace(0, 2 * p8.eta0, 4001))
    assert np.isfinite(c) and 0 < c < 10


def test_shifted_weights_side(p8):
    with pytest.raises(ValueError):
        ShiftedWeights(p8, "during")


@pytest.mark.parametrize("side", ["before", "after"])
def test_shifted_energy_trend_without_background(p8, side, rng):
    """A frozen f (the zero-background flow) sees weights that grow toward T0 and decay after it."""
    g = Grid(10, 512, 8 * np.pi)
    f = rand_field(g, rng, decay=200.0).Pneq0()
    W = ShiftedWeights(p8, side)
    a, b = (p8.T2, p8.T0) if side == "before" else (p8.T0, p8.t(p8.k1))
    ts = np.linspace(a, b, 15)
    M = np.array([W.energy_log(StateTriple(f, g.zeros(), g.zeros(), t), t) for t in ts])
    d = np.diff(M)
    assert np.all(d >= -1e-9) if side == "before" else np.all(d <= 1e-9)


def test_zeta_examples():
    assert zeta(0.0) == 1.0
    assert zeta(-7.0) == zeta(7.0)
    x = np.linspace(0, 90, 901)
    z = zeta(x)
    assert np.all(z <= math.e)
    assert zeta(1.0) == pytest.approx(math.exp(1 / math.log(3) ** 3))
    # eventually superpolynomial: the exponent |x| / log^3 passes 1 near 100
    assert zeta(1e4) == pytest.approx(math.exp(1e4 / math.log(10002.0) ** 3))
    assert zeta(1e4) > 1e5


def test_zeta_mass(p8):
    lib = build_profiles(p8)
    g = Grid(0, 1024, 8 * np.pi)
    s = seed_state(p8, lib, g)
    m = zeta_mass(s, p8)
    w = zeta(p8.k0 * math.sqrt(p8.sigma) * g.v)
    dv = (g.v[-1] - g.v[0]) / (g.N_v - 1)
    assert m == pytest.approx(np.sum(w * np.abs(s.beta[8]) ** 2) * dv, rel=1e-14)
    assert zeta_mass(s.scaled(2.0), p8) == pytest.approx(4 * m, rel=1e-14)
    assert zeta_mass({8: s.beta[8]}, p8, g.v) == m


def test_report_validation():
    r = EnergyReport(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5)
    assert r.validate() is r
    with pytest.raises(ValueError, match="M1"):
        EnergyReport(1.0, 1.0, -1.0, 1.0, 1.0, 1.0, 1.0, 0.5).validate()
    with pytest.raises(ValueError, match="l2"):
        EnergyReport(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, float("nan"), 0.5).validate()


def test_energy_report(p8, rng):
    s = StateTriple(rand_field(G, rng), G.zeros(), G.zeros(), 5.0)
    r = energy_report(s, 5.0, p8)
    assert r.saturated == ["M0"] and r.M0 == sys.float_info.max
    assert r.l2 == pytest.approx(s.norm())
    z = energy_report(StateTriple.zeros(G, 5.0), 5.0, p8)
    assert (z.M0, z.M1, z.M2, z.l2, z.box_mass, z.saturated) == (0.0, 0.0, 0.0, 0.0, 1.0, [])
    one = single_mode(p8.k0, G.col(6), 1.0)
    assert energy_report(one, 5.0, p8, box=((p8.k0, 3.0), (1, 1.0))).box_mass == pytest.approx(1.0)
    assert energy_report(one, 5.0, p8, box=((p8.k0, 30.0), (1, 1.0))).box_mass <= 1e-15


def test_report_files(tmp_path, p8, rng):
    s = StateTriple(rand_field(G, rng), G.zeros(), G.zeros(), 5.0)
    reps = [energy_report(s, 5.0, p8), energy_report(s * 0.5, 6.0, p8)]
    path = tmp_path / "r.csv"
    write_reports_csv(path, reps[:1])
    write_reports_csv(path, reps[1:], append=True)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(EnergyReport.__dataclass_fields__)
    assert len(lines) == 3
    row = dict(zip(lines[0].split(","), lines[2].split(",")))
    assert float(row["M1"]) == reps[1].M1 and row["saturated"] == "M0"
    write_summary_json(tmp_path / "s.json", reps)
    data = json.loads((tmp_path / "s.json").read_text())
    assert data["count"] == 2 and data["reports"][0]["t"] == 5.0
