import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import cumulative_trapezoid

from couette_echo.coords import (ConstraintViolation, PhysicalVorticity, PrimitiveHistory, StateTriple,
                                 antiderivative, constraint_residual, forward_transform, inverse_transform,
                                 invert_monotone, jacobian_defect, spectral_eval)
from couette_echo.green import SingularMap
from couette_echo.spectral import Grid
from tests.helpers import rand_state

MX = 13


@pytest.fixture(scope="module")
def grid():
    return Grid(6, 256, 4 * np.pi)


def packet_vorticity(grid, seed, kmax=3):
    rng = np.random.default_rng(seed)
    y = grid.v
    x = 2 * np.pi * np.arange(MX) / MX
    env = np.exp(-(y / 2.0) ** 2)
    w = np.zeros((MX, grid.N_v))
    for k in range(kmax + 1):
        for _ in range(3):
            a, b, xi = rng.normal(), rng.uniform(0, 2 * np.pi), rng.uniform(-3, 3)
            w += a * np.cos(k * x[:, None] + xi * y[None, :] + b) * env[None, :]
    return w - w.mean()


def test_zero_vorticity_gives_identity_map(grid):
    g, cmap = forward_transform(PhysicalVorticity(np.zeros((MX, grid.N_v)), grid.L_v, 3.0), grid)
    assert g.norm() == 0.0
    assert np.array_equal(cmap.v_of_y, cmap.y)
    assert jacobian_defect(cmap, grid.L_v) <= 1e-14


def test_pure_shear_theta_matches_quadrature(grid):
    """For a z-independent omega at t = 1 with no gauge, theta is minus the primitive of P0 omega."""
    y = grid.v
    prof = np.sin(y) * np.exp(-(y / 2.0) ** 2)
    w = np.tile(prof, (MX, 1))
    w -= w.mean()
    g, _ = forward_transform(PhysicalVorticity(w, grid.L_v, 1.0), grid)
    yy = np.linspace(-grid.L_v / 2, grid.L_v / 2, 200001)
    p = np.sin(yy) * np.exp(-(yy / 2.0) ** 2) - prof.mean()
    prim = cumulative_trapezoid(p, yy, initial=0.0)
    theta = np.real(g.theta.profile(0))
    assert np.max(np.abs(theta + np.interp(y, yy, prim))) <= 1e-6
    # no gauge and no history: the map is the identity, so h = 0
    assert g.h.l2() == 0.0


@pytest.mark.parametrize("seed", [2, 5, 11])
def test_round_trip(grid, seed):
    w = packet_vorticity(grid, seed)
    y = grid.v
    gamma = 0.3 * np.exp(-(y / 1.5) ** 2) * np.sin(y)
    g, cmap = forward_transform(PhysicalVorticity(w, grid.L_v, 1.0), grid, gamma=gamma)
    back, _ = inverse_transform(g, mx=MX)
    assert np.linalg.norm(back.samples - w) <= 1e-6 * np.linalg.norm(w)
    assert jacobian_defect(cmap, grid.L_v) <= 1e-10
    chi, second = constraint_residual(g)
    assert chi <= 1e-6 * g.norm()
    assert second <= 1e-12


def test_round_trip_later_time_with_history(grid):
    w = packet_vorticity(grid, 7, kmax=2)
    y = grid.v
    hist = PrimitiveHistory(1.0)
    prim = antiderivative(w.mean(axis=0) - w.mean(), grid.L_v, tol=np.inf)
    hist.add(1.0, prim)
    hist.add(2.0, prim)
    assert np.allclose(hist.value, prim)
    g, _ = forward_transform(PhysicalVorticity(w, grid.L_v, 2.0), grid, history=0.2 * hist.value)
    back, _ = inverse_transform(g, mx=MX)
    assert np.linalg.norm(back.samples - w) <= 1e-6 * np.linalg.norm(w)
    assert y.shape == back.y.shape


def test_forward_preconditions(grid):
    w = packet_vorticity(grid, 2)
    with pytest.raises(ValueError, match="t >= 1"):
        forward_transform(PhysicalVorticity(w, grid.L_v, 0.5), grid)
    with pytest.raises(ValueError, match="zero mean"):
        forward_transform(PhysicalVorticity(w + 1.0, grid.L_v, 1.0), grid)
    with pytest.raises(ValueError, match="y-grid"):
        forward_transform(PhysicalVorticity(w[:, ::2], grid.L_v, 1.0), grid)


def test_forward_rejects_folded_map(grid):
    w = packet_vorticity(grid, 2)
    gamma = 3.0 * np.sin(grid.v)
    with pytest.raises(SingularMap):
        forward_transform(PhysicalVorticity(w, grid.L_v, 1.0), grid, gamma=gamma)


def test_inverse_constraint_examples(grid):
    s = StateTriple.zeros(grid, 2.0)
    s.h.coeffs[grid.K_z, 0] = 0.1  # constant h: int h/(h+1) != 0
    with pytest.raises(ConstraintViolation):
        inverse_transform(s)
    s.h.coeffs[grid.K_z, 0] = -2.0 / grid.dxi  # h = -2
    with pytest.raises(SingularMap):
        inverse_transform(s)


def test_constraint_residual_of_zero(grid):
    assert constraint_residual(StateTriple.zeros(grid, 4.0)) == (0.0, 0.0)


def test_state_algebra(grid, rng):
    a = rand_state(grid, rng, t=1.0)
    b = rand_state(grid, rng, t=1.0)
    assert np.allclose(a.axpy(2.0, b).stacked(), (a + b * 2.0).stacked())
    assert a.is_valid()
    c = StateTriple.from_stacked(a.stacked(), grid, 1.0)
    assert np.array_equal(c.stacked(), a.stacked())
    assert (a - a).norm() == 0.0
    assert (-a).norm() == pytest.approx(a.norm())


@settings(max_examples=30, deadline=None)
@given(amp=st.floats(0.0, 0.4), shift=st.floats(-1.0, 1.0))
def test_invert_monotone(amp, shift):
    L = 2 * np.pi
    x = -np.pi + L * np.arange(64) / 64
    q = amp * np.sin(x + shift)
    targets = np.linspace(-3, 3, 17)
    y = invert_monotone(q, L, targets)
    assert np.max(np.abs(y - np.real(spectral_eval(q, L, y)) - targets)) <= 1e-12


def test_antiderivative():
    L = 2 * np.pi
    x = -np.pi + L * np.arange(64) / 64
    U = antiderivative(np.cos(3 * x), L)
    assert np.max(np.abs(U - (np.sin(3 * x) - np.sin(3 * x[0])) / 3)) <= 1e-13
    with pytest.raises(ValueError):
        antiderivative(np.cos(x) + 1, L)
