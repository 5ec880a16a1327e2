import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ideal_toa.errors import InvalidFieldError
from ideal_toa.fields import (
    Grid,
    MadelungState,
    PhysicalConstants,
    SurfaceDensity,
    WaveField,
    boundary_flux,
    current_from_wave,
    density_from_wave,
    discrete_curl,
    energy_field,
    phase_velocity,
    stochastic_velocity_from_density,
    total_probability,
    velocity_fields_from_wave,
)
from ideal_toa.oracles import GaussianParams, analytic_flux, gaussian_2d, wave_on_grid

C = PhysicalConstants()


def centred(nx=801, half=10.0):
    """Grid whose region is [-2 half, 0]; shifted coordinates put x = 0 mid-region."""
    return Grid(-2 * half, nx)


def test_grid_geometry():
    g = Grid(-10.0, 101, 2.0)
    assert g.dx == pytest.approx(0.1)
    assert g.x[g.j_det] == 0.0
    assert g.n_buffer == 20
    assert g.wx[g.nx:].sum() == 0.0
    assert g.wx.sum() == pytest.approx(10.0)


@pytest.mark.parametrize("kw", [dict(x_far=1.0, nx=10), dict(x_far=-1.0, nx=4), dict(x_far=-1.0, nx=10, detector="x")])
def test_grid_rejects_bad_input(kw):
    with pytest.raises(ValueError):
        Grid(**kw)


def test_zero_field_has_zero_density():
    g = Grid(-6.3, 64)
    assert np.all(density_from_wave(WaveField(g, np.zeros(64))) == 0)


def test_non_finite_amplitude_rejected():
    g = Grid(-6.3, 64)
    with pytest.raises(InvalidFieldError):
        WaveField(g, np.full(64, np.nan))


def test_density_peak_of_unit_gaussian():
    g = Grid(-20.0, 1001)
    psi = (2 * np.pi) ** -0.25 * np.exp(-((g.x + 10.0) ** 2) / 4)
    rho = density_from_wave(WaveField(g, psi))
    # (2 pi)^(-1/2), mpmath
    assert rho[500] == pytest.approx(0.3989422804014327, rel=1e-14)
    assert np.sum(rho * g.wx) == pytest.approx(1.0, abs=1e-10)


def test_real_wave_carries_no_current(rng):
    g = Grid(-5.0, 128)
    psi = rng.normal(size=128)
    assert np.all(current_from_wave(WaveField(g, psi)) == 0)
    assert np.all(boundary_flux(WaveField(g, psi)) == 0)


def test_plane_wave_current_and_velocities():
    g = Grid(-10.0, 1001)
    k = 1.3
    wave = WaveField(g, 0.5 * np.exp(1j * k * g.x))
    j = current_from_wave(wave)[0]
    st_ = velocity_fields_from_wave(wave)
    inner = slice(2, -2)
    np.testing.assert_allclose(j[inner], k * 0.25 * np.sinc(k * g.dx / np.pi), rtol=1e-12)
    assert np.max(np.abs(st_.v[0][inner] - k)) < 1e-3
    assert np.max(np.abs(st_.u[0][inner])) < 1e-10


def test_flux_of_gaussian_matches_closed_form():
    p = GaussianParams(-10.0, 1.0, 2.0)
    g = Grid(-20.0, 8001)
    wave = wave_on_grid(p, g, C, t=5.0)
    # mpmath value of Im(conj(psi) psi') at x = 0, t = 5
    assert analytic_flux(p, C, 0.0, 5.0, precise=True) == pytest.approx(0.29632688668907316, rel=1e-14)
    assert boundary_flux(wave)[0] == pytest.approx(0.29632688668907316, rel=1e-5)


def test_real_gaussian_velocities():
    g = Grid(-12.0, 1201)
    x = g.x + 6.0
    psi = (2 * np.pi) ** -0.25 * np.exp(-(x**2) / 4)
    st_ = velocity_fields_from_wave(WaveField(g, psi))
    live = ~st_.mask
    assert np.nanmax(np.abs(st_.v[0])) == 0.0
    np.testing.assert_allclose(st_.u[0][live][1:-1], -x[live][1:-1] / 2, atol=1e-3)


def test_node_is_masked_neighbours_are_not():
    g = Grid(-4.0, 81)
    x = g.x + 2.0
    wave = WaveField(g, x * np.exp(-(x**2)))
    st_ = velocity_fields_from_wave(wave)
    mid = 40
    assert st_.mask[mid]
    assert not st_.mask[mid - 1] and not st_.mask[mid + 1]
    assert np.isnan(st_.v[0][mid])


def test_stochastic_velocity_cases():
    g = Grid(-4.0, 401)
    assert np.all(stochastic_velocity_from_density(np.ones(401), g) == 0)
    x = g.x + 2.0
    u = stochastic_velocity_from_density(np.exp(-(x**2) / 2) / math.sqrt(2 * math.pi), g)[0]
    assert u[np.argmin(np.abs(x - 1.0))] == pytest.approx(-0.5, abs=1e-12)
    alpha = 0.7
    u = stochastic_velocity_from_density(np.exp(2 * alpha * g.x), g)[0]
    np.testing.assert_allclose(u, alpha, rtol=1e-10)


def test_u_routes_agree_at_second_order():
    errs = []
    for nx in (201, 401, 801):
        g = Grid(-12.0, nx)
        w = wave_on_grid(GaussianParams(-6.0, 1.0, 1.5), g, C, t=0.7)
        live = slice(nx // 4, 3 * nx // 4)
        a = velocity_fields_from_wave(w).u[0][live]
        b = stochastic_velocity_from_density(density_from_wave(w), g)[0][live]
        errs.append(np.max(np.abs(a - b)))
    slope = np.polyfit(np.log([1, 0.5, 0.25]), np.log(errs), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.2)


def test_density_gradient_order():
    errs = []
    p = GaussianParams(-6.0, 1.0, 0.0)
    for nx in (101, 201, 401):
        g = Grid(-12.0, nx)
        rho = density_from_wave(wave_on_grid(p, g))
        x = g.x + 6.0
        exact = -x * rho
        errs.append(np.max(np.abs(np.gradient(rho, g.dx, edge_order=2) - exact)))
    slope = np.polyfit(np.log([4, 2, 1]), np.log(errs), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.2)


def test_plane_wave_velocity_converges():
    k = 2.0
    errs = []
    for ppw in (32, 64, 128):
        h = 2 * np.pi / k / ppw
        g = Grid(-h * 200, 201)
        v = velocity_fields_from_wave(WaveField(g, np.exp(1j * k * g.x))).v[0][5:-5]
        errs.append(np.max(np.abs(v - k)) / k)
    assert errs[0] < 0.01
    slope = np.polyfit(np.log([4, 2, 1]), np.log(errs), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.2)


def test_current_equals_rho_v_on_live_nodes(rightward):
    st_ = velocity_fields_from_wave(rightward)
    j = current_from_wave(rightward)[0]
    live = ~st_.mask
    scale = np.max(np.abs(j))
    assert np.max(np.abs(st_.rho[live] * st_.v[0][live] - j[live])) <= 10 * np.finfo(float).eps * scale


def test_energy_of_plane_wave_and_gaussian():
    g = Grid(-10.0, 1001)
    k = 1.5
    st_ = velocity_fields_from_wave(WaveField(g, np.exp(1j * k * g.x)))
    e = energy_field(st_)
    assert np.max(np.abs(e[3:-3] - k**2 / 2)) < 1e-3
    x = g.x + 5.0
    st_ = velocity_fields_from_wave(WaveField(g, np.exp(-(x**2) / 4)))
    e = energy_field(st_)[300:700]
    # v = 0, u = -x/2: E = 1/4 - x^2/8, not a constant
    assert np.max(np.abs(e - (0.25 - x[300:700] ** 2 / 8))) < 1e-4


def test_energy_shifts_with_constant_potential():
    g = Grid(-10.0, 501)
    st_ = velocity_fields_from_wave(wave_on_grid(GaussianParams(-5.0, 1.0, 1.0), g))
    base = energy_field(st_)
    shifted = energy_field(st_, PhysicalConstants(potential=np.full(501, 0.3)))
    np.testing.assert_allclose((shifted - base)[~np.isnan(base)], 0.3, atol=1e-12)


def test_total_probability_cases(rightward):
    g = rightward.grid
    rho = density_from_wave(rightward)
    assert total_probability(rho, SurfaceDensity.empty(g), g) == pytest.approx(1.0, abs=1e-10)
    assert total_probability(np.zeros(g.n_total), SurfaceDensity(np.ones(1), np.ones(1)), g) == 1.0


def test_surface_density_rejects_negative():
    with pytest.raises(InvalidFieldError):
        SurfaceDensity(np.array([-1e-3]), np.ones(1))


def test_madelung_boundary_flux_sign(small_grid):
    wave = wave_on_grid(GaussianParams(-3.0, 1.0, 2.0), small_grid)
    assert boundary_flux(velocity_fields_from_wave(wave))[0] > 0
    assert boundary_flux(wave)[0] > 0


def test_curl_of_phase_gradient_is_small():
    g = Grid(-8.0, 161, 0.0, -4.0, 4.0, 161)
    wave = gaussian_2d(GaussianParams(-4.0, 1.0, 1.0), g, 1.0, 0.5)
    v = phase_velocity(wave)
    curl = discrete_curl(v, g)
    rho = density_from_wave(wave)
    live = rho > 1e-6 * rho.max()
    assert np.nanmax(np.abs(curl[live])) <= 1e-6 * np.nanmax(np.abs(v))


@given(st.floats(-3, 3), st.floats(0.7, 2.0), st.floats(0, 2))
def test_density_nonnegative_and_unit(k0, s, t):
    g = Grid(-40.0, 2001)
    w = wave_on_grid(GaussianParams(-20.0, s, k0), g, C, t)
    rho = density_from_wave(w)
    assert np.all(rho >= 0)
    assert np.sum(rho * g.wx) == pytest.approx(1.0, abs=1e-8)
