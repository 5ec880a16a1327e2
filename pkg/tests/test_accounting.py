import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ideal_toa.accounting import (
    arrival_cumulative,
    arrival_distribution,
    arrival_interval,
    conditional_measure,
    conditional_momentum,
    daumer_flux_distribution,
    detector_distribution,
    interval_weights,
    position_measure,
    signed_flux_cumulative,
    surface_groups,
)
from ideal_toa.engines import EngineConfig, run_evolution
from ideal_toa.errors import ConfigError, DomainError, SemanticsError, UndefinedConditionalError
from ideal_toa.fields import Grid, PhysicalConstants
from ideal_toa.oracles import GaussianParams, flux_integral_series, gaussian_2d, make_backflow_state, wave_on_grid

C = PhysicalConstants()
FORWARD = GaussianParams(-6.0, 1.0, 2.0)


@pytest.fixture(scope="module")
def forward():
    g = Grid(-16.0, 641, 20.0)
    return run_evolution(wave_on_grid(FORWARD, g), None, EngineConfig("ideal-detector-psi", 0.01, 600, stride=100))


@pytest.fixture(scope="module")
def screen():
    g = Grid(-10.0, 96, 8.0, -6.0, 6.0, 97)
    w = gaussian_2d(GaussianParams(-5.0, 1.0, 3.0), g, 1.0, 0.0, 0.0)
    return run_evolution(w, None, EngineConfig("ideal-detector-psi", 0.01, 250, stride=50))


@pytest.fixture(scope="module")
def backflow():
    g = Grid(-20.0, 801, 20.0)
    w = make_backflow_state(1.0, 3.0, grid=g)
    return run_evolution(w, None, EngineConfig("ideal-detector-psi", 0.002, 3000))


# -- quadrature ------------------------------------------------------------------


def test_interval_weights_integrate_linear_functions_exactly():
    nodes = np.linspace(-3.0, 1.0, 17)
    w = interval_weights(nodes, -2.3, 0.71)
    f = 2.0 * nodes - 0.5
    exact = (0.71**2 - 2.3**2) - 0.5 * (0.71 + 2.3)
    assert w @ f == pytest.approx(exact, abs=1e-13)
    assert w.sum() == pytest.approx(3.01, abs=1e-13)


def test_periodic_weights_cover_the_wrap_cell():
    nodes = np.linspace(0.0, 0.9, 10)
    w = interval_weights(nodes, 0.0, 1.0, wrap_to=1.0)
    np.testing.assert_allclose(w, 0.1)


# -- position measure ------------------------------------------------------------


def test_whole_domain_is_everything(forward):
    for snap in forward.snapshots:
        whole = position_measure(snap, [(-16.0, 0.0)])
        assert whole == pytest.approx(snap.interior + snap.surface, abs=1e-12)
        assert whole == pytest.approx(1.0, abs=1e-6)


def test_zero_width_box_at_detector_is_the_surface(forward):
    snap = forward.snapshots[-1]
    assert snap.surface > 0.5
    assert position_measure(snap, [(0.0, 0.0)]) == snap.sigma.total()


def test_left_half_of_symmetric_packet():
    g = Grid(-16.0, 641)
    rec = run_evolution(wave_on_grid(GaussianParams(-8.0, 1.0, 0.0), g), None, EngineConfig("ideal-detector-psi", 0.01, 0))
    assert position_measure(rec.snapshots[0], [(-16.0, -8.0)]) == pytest.approx(0.5, abs=1e-9)


def test_region_outside_domain(forward):
    snap = forward.snapshots[0]
    with pytest.raises(DomainError):
        position_measure(snap, [(-20.0, -1.0)])
    with pytest.raises(DomainError):
        position_measure(snap, [(-1.0, 0.5)])
    with pytest.raises(DomainError):
        position_measure(snap, [(-1.0, -2.0)])
    with pytest.raises(DomainError):
        position_measure(snap, [(-1.0, 0.0), (0.0, 1.0)])


@given(st.floats(-16.0, 0.0), st.floats(-16.0, 0.0), st.floats(-16.0, 0.0), st.integers(0, 6))
def test_measure_axioms(forward, a, b, c, k):
    lo, mid, hi = sorted((a, b, c))
    snap = forward.snapshots[k]
    pl, pr = position_measure(snap, [(lo, mid)]), position_measure(snap, [(mid, hi)])
    both = position_measure(snap, [(lo, hi)])
    assert pl >= -1e-15 and pr >= -1e-15
    # a shared endpoint has zero x-measure unless it is the detector (within the box slack)
    shared = snap.sigma.total() if mid >= -1e-9 else 0.0
    assert both == pytest.approx(pl + pr - shared, abs=1e-12)
    assert both <= position_measure(snap, [(-16.0, 0.0)]) + 1e-12


def test_measure_axioms_in_two_dimensions(screen):
    snap = screen.snapshots[-1]
    whole = position_measure(snap, [(-10.0, 0.0), (-6.0, 6.0)])
    assert whole == pytest.approx(snap.interior + snap.surface, abs=1e-12)
    top = position_measure(snap, [(-10.0, 0.0), (0.0, 6.0)])
    bottom = position_measure(snap, [(-10.0, 0.0), (-6.0, 0.0)])
    assert top + bottom == pytest.approx(whole, abs=1e-12)
    assert top == pytest.approx(bottom, rel=1e-6)


# -- arrival distribution --------------------------------------------------------


def test_cumulative_matches_surface_and_flux_oracle(forward):
    assert arrival_cumulative(forward, forward.horizon) == forward.surface[-1]
    oracle = flux_integral_series(FORWARD, C, 0.0, forward.times)
    assert np.max(np.abs(forward.surface - oracle)) < 1e-3


def test_intervals_add_up(forward):
    a = arrival_interval(forward, 1.0, 1.5)
    b = arrival_interval(forward, 2.5, 1.2)
    assert arrival_interval(forward, 1.0, 2.7) == pytest.approx(a + b, abs=1e-15)
    assert arrival_interval(forward, 0.0, 0.5) < 1e-6
    with pytest.raises(DomainError):
        arrival_cumulative(forward, forward.horizon + 1.0)
    with pytest.raises(ConfigError):
        arrival_interval(forward, 1.0, 0.0)


def test_classical_arrival_carries_the_bulk(forward):
    # a packet at -6 moving with speed 2 arrives around t = 3
    assert arrival_interval(forward, 2.0, 2.0) > 0.5
    assert arrival_cumulative(forward, 3.0) == pytest.approx(0.5, abs=0.1)


def test_distribution_is_a_probability(forward):
    dist = arrival_distribution(forward, 0.25)
    assert np.all(dist.mass >= 0)
    assert dist.total() == pytest.approx(1.0, abs=1e-12)
    assert dist.mass.sum() == pytest.approx(forward.surface[-1], abs=1e-13)
    assert dist.edges[-1] == forward.horizon
    assert dist.truncated and forward.interior[-1] > 1e-3
    settled = arrival_distribution(forward, 0.25, stop_threshold=0.05)
    assert not settled.truncated and settled.never_label == "estimate"


def test_truncated_horizon_labels_never_as_bound(forward):
    g = Grid(-16.0, 641, 20.0)
    rec = run_evolution(wave_on_grid(FORWARD, g), None, EngineConfig("ideal-detector-psi", 0.01, 200))
    dist = arrival_distribution(rec, 0.25)
    assert dist.truncated and dist.never_label == "upper bound"
    assert dist.never > 0.5


def test_walled_detector_never_arrives():
    g = Grid(-16.0, 321, 0.0, detector="walled")
    rec = run_evolution(wave_on_grid(FORWARD, g), None, EngineConfig("ideal-detector-psi", 0.01, 500))
    dist = arrival_distribution(rec, 0.5)
    assert np.all(dist.mass == 0)
    assert dist.never == 1.0


def test_reference_records_have_no_arrival_semantics(forward):
    g = Grid(-16.0, 321, 20.0)
    rec = run_evolution(wave_on_grid(FORWARD, g), None, EngineConfig("reference", 0.01, 50))
    with pytest.raises(SemanticsError):
        arrival_distribution(rec, 0.1)
    with pytest.raises(SemanticsError):
        detector_distribution(rec)
    with pytest.raises(SemanticsError):
        arrival_cumulative(rec, 0.2)


def test_bin_width_must_be_positive(forward):
    with pytest.raises(ConfigError):
        arrival_distribution(forward, 0.0)


# -- joint detector distribution ------------------------------------------------


def test_one_dimensional_joint_is_the_arrival_distribution(forward):
    joint = detector_distribution(forward, bin_width=0.25)
    assert joint.mass.shape[0] == 1
    assert np.array_equal(joint.mass[0], arrival_distribution(forward, 0.25).mass)
    assert np.array_equal(joint.time_marginal(), arrival_distribution(forward, 0.25).mass)


def test_two_dimensional_marginals(screen):
    joint = detector_distribution(screen, surface_bins=8, bin_width=0.1)
    arrival = arrival_distribution(screen, 0.1)
    np.testing.assert_allclose(joint.time_marginal(), arrival.mass, rtol=0, atol=1e-15)
    assert joint.total() == pytest.approx(arrival.total(), abs=1e-14)
    s = detector_distribution(screen, bin_width=0.1).surface_marginal()
    assert np.max(np.abs(s - s[::-1])) < 1e-6 * s.max()
    assert np.all(joint.mass >= 0)


def test_surface_groups():
    assert len(surface_groups(10)) == 10
    assert [g.size for g in surface_groups(10, 3)] == [4, 3, 3]
    assert [list(g) for g in surface_groups(5, [0, 2, 5])] == [[0, 1], [2, 3, 4]]
    with pytest.raises(ConfigError):
        surface_groups(5, [0, 3, 2, 5])
    with pytest.raises(ConfigError):
        surface_groups(5, 9)


# -- conditionals ----------------------------------------------------------------


def test_conditional_on_detector(screen):
    snap = screen.snapshots[-1]
    full = conditional_measure(snap, [(0.0, 0.0), (-6.0, 6.0)])
    assert full == pytest.approx(1.0, abs=1e-12)
    top = conditional_measure(snap, [(0.0, 0.0), (0.0, 6.0)])
    bottom = conditional_measure(snap, [(0.0, 0.0), (-6.0, 0.0)])
    # the node at y = 0 is shared by both halves with half of its hat each
    assert top + bottom == pytest.approx(1.0, abs=1e-12)
    box = [(-10.0, 0.0), (1.0, 3.0)]
    joint = position_measure(snap, [(0.0, 0.0), (1.0, 3.0)])
    assert conditional_measure(snap, box) * snap.sigma.total() == pytest.approx(joint, abs=1e-15)
    assert conditional_measure(snap, [(-10.0, -1.0), (-6.0, 6.0)]) == 0.0


def test_conditional_undefined_before_arrival(forward):
    with pytest.raises(UndefinedConditionalError):
        conditional_measure(forward.snapshots[0], [(0.0, 0.0)])
    with pytest.raises(UndefinedConditionalError):
        conditional_momentum(forward.snapshots[0])


def test_impact_momentum_near_carrier(forward, screen):
    p = conditional_momentum(forward.snapshots[-1])
    assert p[0] == pytest.approx(2.0, rel=0.1)
    p2 = conditional_momentum(screen.snapshots[-1])
    assert p2[0] == pytest.approx(3.0, rel=0.1)
    assert abs(p2[1]) < 1e-6


# -- signed flux ------------------------------------------------------------------


def test_positive_flux_signed_distribution_equals_arrivals(forward):
    signed = daumer_flux_distribution(forward, 0.25)
    assert signed.monotone
    np.testing.assert_allclose(signed.mass, arrival_distribution(forward, 0.25).mass, rtol=0, atol=1e-14)
    assert signed_flux_cumulative(forward)[-1] == pytest.approx(signed.mass.sum(), abs=1e-14)


def test_backflow_makes_signed_distribution_negative(backflow):
    signed = daumer_flux_distribution(backflow, 0.05)
    assert not signed.monotone
    assert signed.mass.min() < -1e-5
    assert np.all(arrival_distribution(backflow, 0.05).mass >= 0)
    gap = np.abs(np.interp(backflow.times, backflow.times, backflow.surface) - signed_flux_cumulative(backflow))
    assert gap.max() > 1e-4


def test_sigma_flat_while_flux_is_negative(backflow):
    inflow = backflow.flux[:, 0] < 0
    assert inflow.sum() > 10
    assert np.all(backflow.dsigma[inflow, 0] == 0.0)
    g = backflow.grid
    ref = run_evolution(make_backflow_state(1.0, 3.0, grid=g), None, EngineConfig("reference", 0.002, 3000))
    signed = signed_flux_cumulative(ref)
    steps = np.flatnonzero(np.diff(signed) < 0)
    assert steps.size > 10
    # the signed reference integral goes down where the surface curve cannot
    assert np.all(np.diff(backflow.surface)[steps] >= 0)
