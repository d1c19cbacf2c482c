import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import ndtr

from receptosim.errors import CalibrationError
from receptosim.infusion import MatrixCell
from receptosim.photo import (
    EDGE_WIDTH_PER_SIGMA,
    MaskPattern,
    SynthesisParams,
    UvSource,
    advance_conversion,
    calibrate_kinetics,
    closed_form_rate,
    conversion_step,
    exposure_trace,
    fit_initial_slope,
    fit_plateau,
    irradiance_at,
    irradiance_field,
    make_synthesis_source,
    make_test_source,
    rise_width,
    transmittance_580,
)

PARAMS = SynthesisParams(k_p=2.5e-4)


def test_closed_form_rate_matches_derivation():
    # dT/dt at t=0 is -(1 - T_inf) k I
    assert closed_form_rate(-0.018, 0.25, 100.0) * 100.0 == pytest.approx(0.024)


@given(st.floats(0.0, 1.0), st.floats(50.0, 500.0), st.floats(1e-3, 5.0), st.floats(1e-3, 5.0))
def test_conversion_step_is_exact_exponential(x0, irr, a, b):
    k = 2.5e-4
    two = conversion_step(conversion_step(x0, irr, k, 50.0, a), irr, k, 50.0, b)
    one = conversion_step(x0, irr, k, 50.0, a + b)
    assert float(two) == pytest.approx(float(one), abs=1e-14)
    assert float(one) == pytest.approx(1 - (1 - x0) * math.exp(-k * irr * (a + b)), abs=1e-14)


@given(st.floats(0.0, 1.0), st.floats(0.0, 49.999), st.floats(1e-3, 100.0))
def test_no_conversion_below_threshold(x0, irr, dt):
    assert float(conversion_step(x0, irr, 2.5e-4, 50.0, dt)) == x0


def test_no_conversion_without_precursor():
    assert float(conversion_step(0.2, 100.0, 2.5e-4, 50.0, 10.0, precursor=False)) == 0.2
    cell = MatrixCell(0, 0, (0, 0), precursor_present=False)
    assert advance_conversion(cell, 100.0, PARAMS, 10.0).conversion == 0.0
    wet = MatrixCell(1, 0, (0, 0), precursor_present=True)
    assert advance_conversion(wet, 100.0, PARAMS, 10.0).conversion > 0.0


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=20))
def test_transmittance_is_bounded_and_decreasing_in_conversion(xs):
    xs = np.sort(np.array(xs))
    T = transmittance_580(xs, PARAMS)
    assert np.all(T <= 1.0) and np.all(T >= PARAMS.T_inf)
    assert np.all(np.diff(T) <= 0)


def test_transmittance_rejects_out_of_range():
    with pytest.raises(ValueError):
        transmittance_580(1.2, PARAMS)


def test_exposure_trace_decays_monotonically():
    t, T = exposure_trace(PARAMS, 100.0, 60.0)
    assert T[0] == 1.0
    assert np.all(np.diff(T) < 0)
    assert fit_plateau(t, T) == pytest.approx(PARAMS.T_inf, rel=1e-3)


def test_slope_calibration_hits_fitted_target():
    p = calibrate_kinetics(-0.018, 0.25, 100.0)
    t, T = exposure_trace(p)
    assert fit_initial_slope(t, T) == pytest.approx(-0.018, rel=1e-6)
    # the fitted slope over 5 s is shallower than the t=0 slope, so k sits above the closed form
    assert p.k_p > closed_form_rate(-0.018, 0.25, 100.0)


def test_calibration_rejects_bad_targets():
    with pytest.raises(CalibrationError):
        calibrate_kinetics(0.0)
    with pytest.raises(CalibrationError):
        calibrate_kinetics(-0.018, T_inf=1.0)


def brute_force_transmission(poly, px, py, sigma):
    """2-D quadrature of the Gaussian over the polygon (axis-aligned rectangle only)."""
    xs, ys = [p[0] for p in poly], [p[1] for p in poly]
    g = lambda y, x: math.exp(-((x - px) ** 2 + (y - py) ** 2) / (2 * sigma**2)) / (2 * math.pi * sigma**2)
    val, _ = integrate.dblquad(g, max(min(xs), px - 8 * sigma), min(max(xs), px + 8 * sigma),
                               max(min(ys), py - 8 * sigma), min(max(ys), py + 8 * sigma), epsabs=1e-12)
    return 1.0 - val


@pytest.mark.parametrize("point", [(0.0, 0.0), (0.5, 0.1), (-0.3, 0.9), (1.2, 1.2), (0.99, -1.01)])
def test_mask_matches_2d_quadrature(point):
    square = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
    mask = MaskPattern([square], 0.3)
    assert mask.transmission([point])[0] == pytest.approx(brute_force_transmission(square, *point, 0.3), abs=1e-7)


def test_mask_triangle_matches_separable_limit():
    # far from the other edges a triangle behaves like a straight half-plane
    tri = [(0.0, -100.0), (100.0, 100.0), (0.0, 100.0)]
    mask = MaskPattern([tri], 0.2)
    for x in (-0.4, -0.1, 0.0, 0.3):
        assert mask.transmission([(x, 0.0)])[0] == pytest.approx(1 - ndtr(x / 0.2), abs=1e-9)


def test_mask_orientation_does_not_matter():
    sq = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
    pts = [(0.2, 0.9), (1.1, 0.0)]
    assert np.allclose(MaskPattern([sq], 0.3).transmission(pts), MaskPattern([sq[::-1]], 0.3).transmission(pts))


def test_optical_edge_width_is_2_563_sigma():
    x = np.linspace(-2, 2, 40001)
    assert rise_width(x, ndtr(x / 0.1)) == pytest.approx(EDGE_WIDTH_PER_SIGMA * 0.1, rel=1e-6)
    assert EDGE_WIDTH_PER_SIGMA == pytest.approx(2.563, abs=1e-3)


def test_sources_and_irradiance():
    syn = make_synthesis_source([(10.0, 20.0)])
    probe = make_test_source([(0.0, 5.0)])
    assert irradiance_at((0, 0), [syn, probe], [], 2.0) == 30.0
    assert irradiance_at((0, 0), [syn, probe], [], 15.0) == 100.0
    assert irradiance_at((0, 0), [syn, probe], [], 20.0) == 0.0
    mask = MaskPattern([[(-1, -1), (1, -1), (1, 1), (-1, 1)]], 0.01)
    field = irradiance_field([(0, 0), (5, 5)], [syn], [mask], 15.0)
    assert field[0] == pytest.approx(0.0, abs=1e-12)
    assert field[1] == pytest.approx(100.0)
    with pytest.raises(ValueError):
        UvSource(1, "x", 10.0, schedule=[(0, 5), (4, 8)])
    with pytest.raises(ValueError):
        MaskPattern([[(0, 0), (1, 1)]], 0.1)
