import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from couette_echo.echo import (GridError, GrowthTable, backward_envelope, build_profiles, from_state, ladder,
                               outside_mass, recurrence_step, run_growth, seed_state, snap_carrier,
                               star_indices, t_star, to_state, truncated_quadrature)
from couette_echo.params import ParamError, derive_params, growth_product
from couette_echo.spectral import Grid


@pytest.fixture(scope="module")
def lib8(p8_mod):
    return build_profiles(p8_mod)


@pytest.fixture(scope="module")
def p8_mod():
    return derive_params(8, "desk", dict(sigma=0.1, alpha=1.01, eps0=0.05))


G8 = Grid(0, 1024, 8 * np.pi)


def test_profile_library(lib8):
    v = np.linspace(-3, 3, 601)
    assert lib8.phi_b(np.array([0.0]))[0] == 1.0
    assert np.max(lib8.phi_b(v)) == 1.0
    assert abs(sum(lib8.widths) - 1.0) <= 1e-12
    xi = np.linspace(-1.5, 1.5, 3001)
    assert np.all(lib8.phi_p_hat(xi)[np.abs(xi) > 1.0] == 0.0)
    z = np.linspace(-0.5, 0.5, 1001)
    assert np.all(lib8.psi(z[np.abs(z) <= 1 / 6]) == 1.0)
    assert np.all(lib8.psi(z[np.abs(z) >= 1 / 4]) == 0.0)
    with pytest.raises(ValueError):
        build_profiles(derive_params(8, "desk", dict(sigma=0.1, alpha=1.01, eps0=0.05)), n_conv=4)


def test_phi_p_unit_norm(lib8):
    u = np.arange(-40000, 40001, dtype=float)
    assert math.sqrt(np.sum(lib8.phi_p(u) ** 2)) == pytest.approx(1.0, abs=1e-8)


def test_phi_p_decay_envelope(lib8):
    u = np.linspace(3.0, 400.0, 4000)
    lg = np.log(np.abs(lib8.phi_p(u)) + 1e-300)
    env = -u / np.log(u) ** 2
    # one fitted constant on the representable range
    C = np.max(lg - env)
    assert np.all(lg <= env + C)
    assert C < 10.0


def test_seed_norm(p8_mod, lib8, oracle):
    s = seed_state(p8_mod, lib8, Grid(0, 4096, 32 * np.pi))
    assert s.norm(8) == pytest.approx(oracle["seed_norm_k8"], rel=1e-6)
    assert set(s.beta) == {8} and s.m == 8
    assert s.carrier == p8_mod.eta0


def test_seed_spectral_support(p8_mod, lib8):
    s = seed_state(p8_mod, lib8, G8)
    c = np.fft.fft(s.beta[8]) / G8.N_v
    width = p8_mod.k0 * math.sqrt(p8_mod.sigma)
    out = np.abs(G8.xi) > width + G8.dxi
    assert np.max(np.abs(c[out])) <= 1e-12 * np.max(np.abs(c))


def test_seed_grid_error(p8_mod, lib8):
    with pytest.raises(GridError):
        seed_state(p8_mod, lib8, Grid(0, 16, 8 * np.pi))


def test_zero_state_maps_to_zero(p8_mod, lib8):
    s = seed_state(p8_mod, lib8, G8).scaled(0.0)
    out = recurrence_step(s, lib8, p8_mod)
    assert all(not np.any(b) for b in out.beta.values())


def test_first_step_coefficient(p8_mod, lib8):
    s = seed_state(p8_mod, lib8, G8)
    out = recurrence_step(s, lib8, p8_mod)
    b = s.beta[8]
    fb = lib8.phi_b(G8.v)
    # signs follow the linearized PDE (see compare_to_pde); the magnitude is alpha = 1.01
    assert np.array_equal(out.beta[9], 1.01 * fb * b)
    assert np.array_equal(out.beta[7], -1.01 * fb * b)
    assert out.m == 7


def test_first_step_ratio(p8_mod, lib8):
    s = seed_state(p8_mod, lib8, G8)
    _, B, _, table = run_growth(s, 1, lib8, p8_mod)
    fb = lib8.phi_b(G8.v)
    ref = 1.01 * np.linalg.norm(fb * s.beta[8]) / np.linalg.norm(s.beta[8])
    assert table.ratios[0] == pytest.approx(ref, rel=1e-12)
    assert table.ratios[0] <= 1.01


def test_doubled_center(p8_mod, lib8):
    s = seed_state(p8_mod, lib8, G8, center=(16, 2 * p8_mod.eta0))
    assert p8_mod.alpha_m(8, 2 * p8_mod.eta0) == pytest.approx(2 * 1.01)
    # alpha_m* = alpha at m = k0 sqrt(2)
    m = round(8 * math.sqrt(2))
    assert p8_mod.alpha_m(m, 2 * p8_mod.eta0) == pytest.approx(1.01 * 128 / m ** 2)
    assert s.m == 16


def test_flat_ratio_exact():
    p = derive_params(100, "desk", dict(sigma=0.1, alpha=1.01, eps0=0.05))
    lib = build_profiles(p)
    g = Grid(0, 2 ** 13, 8 * np.pi)
    _, _, _, table = run_growth(seed_state(p, lib, g), 9, lib, p, flat=True)
    assert np.max(np.abs(table.ratios / table.coeffs - 1)) <= 1e-12


@settings(max_examples=10, deadline=None)
@given(c=st.floats(1e-6, 1e6))
def test_ratios_scale_invariant(c):
    p = derive_params(8, "desk", dict(sigma=0.1, alpha=1.01, eps0=0.05))
    lib = build_profiles(p)
    s = seed_state(p, lib, G8)
    _, B1, _, t1 = run_growth(s, 1, lib, p)
    _, B2, _, t2 = run_growth(s.scaled(c), 1, lib, p)
    assert np.allclose(B2, c * B1, rtol=1e-12)
    assert np.allclose(t2.ratios, t1.ratios, rtol=1e-12)


def test_step_is_linear(p8_mod, lib8, rng):
    s = seed_state(p8_mod, lib8, G8)
    other = replace(s, beta={8: rng.standard_normal(G8.N_v) + 0j, 9: rng.standard_normal(G8.N_v) + 0j})
    a = recurrence_step(s, lib8, p8_mod)
    b = recurrence_step(other, lib8, p8_mod)
    comb = replace(s, beta={k: 2 * s.beta.get(k, 0) - other.beta.get(k, 0) for k in (8, 9)})
    c = recurrence_step(comb, lib8, p8_mod)
    for k in c.beta:
        assert np.allclose(c.beta[k], 2 * a.beta.get(k, 0) - b.beta.get(k, 0), atol=1e-15)


def test_range_errors(p8_mod, lib8):
    s = seed_state(p8_mod, lib8, G8)
    s = recurrence_step(s, lib8, p8_mod)  # m = 7 = k1
    with pytest.raises(ParamError):
        recurrence_step(s, lib8, p8_mod)
    back = seed_state(p8_mod, lib8, G8, direction="backward")
    s2 = back
    for _ in range(p8_mod.k2 - p8_mod.k0):
        s2 = recurrence_step(s2, lib8, p8_mod)
    with pytest.raises(ParamError):
        recurrence_step(s2, lib8, p8_mod)


def test_forward_gain_matches_growth_product():
    p = derive_params(100, "desk", dict(sigma=0.1, alpha=1.01, eps0=0.05))
    lib = build_profiles(p)
    B = ladder(seed_state(p, lib, Grid(0, 2 ** 13, 8 * np.pi)), lib, p)
    gain = math.log(B[p.k1] / B[p.k0])
    ref = growth_product(p, p.k1 + 1, p.k0)
    slack = (p.k0 - p.k1) * math.log((1 + 2 * p.sigma ** 6) / (1 - 2 * p.sigma ** 6))
    assert abs(gain - ref) <= slack


def test_localization_along_forward_run():
    # the sigma^(1/3) radius covers k0 sigma^(5/6) ~ 29 profile widths at k0 = 200
    p = derive_params(200, "desk", dict(sigma=0.1, alpha=1.01, eps0=0.05))
    lib = build_profiles(p)
    s = seed_state(p, lib, Grid(0, 2 ** 14, 4 * np.pi))
    r = p.sigma ** (1 / 3)
    for _ in range(p.k0 - p.k1):
        assert outside_mass(s, r) <= 1e-6
        s = recurrence_step(s, lib, p)
    assert outside_mass(s, r) <= 1e-6


def test_backward_envelope_bounds_model(p8_mod, lib8):
    s = seed_state(p8_mod, lib8, G8, direction="backward")
    env = backward_envelope(p8_mod, p8_mod.k2)
    assert np.all(np.diff(env) > 0)
    for i in range(p8_mod.k2 - p8_mod.k0):
        s = recurrence_step(s, lib8, p8_mod)
        assert s.sup_norm() <= env[i]


def test_theta_rows_are_exercised(p8_mod, lib8):
    s = seed_state(p8_mod, lib8, G8, direction="backward")
    bump = np.exp(-G8.v ** 2)
    s = replace(s, beta_theta=bump)
    out = recurrence_step(s, lib8, p8_mod)
    c = p8_mod.alpha_m(9)
    expect = (c / math.pi) * lib8.dphi_b(G8.v) * bump
    assert np.allclose(out.beta[1], expect, atol=1e-18)
    assert np.allclose(out.beta[-1], expect, atol=1e-18)


def test_star_indices(p8_mod):
    assert star_indices(p8_mod, p8_mod.eta0) == (p8_mod.k0, p8_mod.k1, p8_mod.k2)
    assert t_star(8, p8_mod.eta0) == pytest.approx(p8_mod.T0)


def test_state_bridge_round_trip(p8_mod, lib8):
    grid = Grid(10, 4096, 4 * np.pi)
    s = seed_state(p8_mod, lib8, Grid(0, 4096, 4 * np.pi), snap=True)
    assert s.carrier == snap_carrier(p8_mod.eta0, grid)
    g = to_state(s, grid, p8_mod.T0, charged=True)
    back = from_state(g, s)
    assert np.allclose(back.beta[8], s.beta[8], atol=1e-12 * np.max(np.abs(s.beta[8])))
    full = to_state(s, grid, p8_mod.T0)
    assert full.is_valid()
    with pytest.raises(GridError):
        to_state(seed_state(p8_mod, lib8, Grid(0, 4096, 4 * np.pi)), grid, p8_mod.T0)


def test_growth_csv(tmp_path, p8_mod, lib8):
    _, _, _, table = run_growth(seed_state(p8_mod, lib8, G8), 1, lib8, p8_mod)
    table.write_csv(tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == ",".join(GrowthTable.columns)
    assert lines[1].startswith("8,") and lines[1].endswith(",")


def test_truncated_quadrature_oracle(p8_mod, oracle):
    full = math.pi * p8_mod.eps0 * p8_mod.eta0 / 64
    assert full == pytest.approx(oracle["lorentz_full_k8"], rel=1e-14)
    assert full == pytest.approx(oracle["lorentz_full_identity_k8"], rel=1e-14)
    part = truncated_quadrature(p8_mod, 8, p8_mod.t(8), p8_mod.t(7))
    assert part / full == pytest.approx(oracle["lorentz_fraction_k8"], rel=1e-12)
