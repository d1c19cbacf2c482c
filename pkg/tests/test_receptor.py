import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from receptosim.photo import SynthesisParams
from receptosim.receptor import (
    ADC_MAX,
    AdcSample,
    ElectrodePair,
    ReceptorElectrical,
    effective_capacitance,
    effective_resistance,
    estimate_impedance,
    pe_is_reference,
    polaron_step,
    pulse_readout,
    quantize,
    sample_times,
)

ELEC = ReceptorElectrical()
PARAMS = SynthesisParams(k_p=2.5e-4)


def test_divider_midpoint_reads_512():
    rd = pulse_readout(460e3, 0.0)
    assert rd.positive.code == rd.negative.code == 512
    assert estimate_impedance(512) == pytest.approx(460e3 * 512 / 511)


def test_quantize_rounds_half_up():
    # vcc = 1023 makes one LSB exactly 1 V
    assert quantize(10.5, vcc=1023.0) == 11
    assert quantize(10.49, vcc=1023.0) == 10
    assert quantize(-1.0) == 0 and quantize(99.0) == ADC_MAX


@given(st.floats(1e3, 1e8), st.floats(1e3, 1e8))
def test_code_is_monotone_in_resistance(r1, r2):
    lo, hi = sorted((r1, r2))
    assert pulse_readout(lo).positive.code <= pulse_readout(hi).positive.code


@given(st.integers(1, 1022))
def test_estimate_inverts_divider(code):
    z = estimate_impedance(code)
    v = 4.2 * z / (460e3 + z)
    assert v * 1023 / 4.2 == pytest.approx(code, rel=1e-12)


def test_estimate_edges():
    assert estimate_impedance(0) == 0.0
    assert math.isinf(estimate_impedance(ADC_MAX))
    with pytest.raises(ValueError):
        estimate_impedance(1024)


@pytest.mark.parametrize("cap", [0.0, 1e-9, 1e-8])
@pytest.mark.parametrize("r", [4e5, 4.6e5, 1e6, 5e6])
def test_pulse_pair_codes_agree(r, cap):
    rd = pulse_readout(r, cap)
    assert abs(rd.positive.code - rd.negative.code) <= 1


def test_pulse_pair_charge_nearly_cancels():
    rd = pulse_readout(460e3, 10e-9)
    assert abs(rd.net_charge) <= 0.05 * rd.charge[0]


def test_samples_sit_in_final_half_of_pulse():
    ts = sample_times()
    assert len(ts) == 8
    assert ts.min() > 0.1 and ts.max() < 0.2


def test_noise_is_reproducible_with_seed():
    a = pulse_readout(460e3, 0.0, noise_std=0.01, rng=np.random.default_rng(3))
    b = pulse_readout(460e3, 0.0, noise_std=0.01, rng=np.random.default_rng(3))
    assert a.v_mean == b.v_mean


@given(st.floats(0.0, 100.0), st.floats(0.0, 200.0), st.floats(0.0, 1.0), st.floats(1e-3, 5.0), st.floats(1e-3, 5.0))
def test_polaron_step_composes_exactly(p0, irr, x, a, b):
    two = polaron_step(polaron_step(p0, irr, PARAMS, x, a), irr, PARAMS, x, b)
    one = polaron_step(p0, irr, PARAMS, x, a + b)
    assert two == pytest.approx(one, rel=1e-12, abs=1e-12)


def test_polaron_steady_state_and_decay():
    p = polaron_step(0.0, 30.0, PARAMS, 1.0, 1e3)
    assert p == pytest.approx(PARAMS.alpha_p * 30.0 * PARAMS.tau_p)
    assert polaron_step(p, 0.0, PARAMS, 1.0, PARAMS.tau_p) == pytest.approx(p / math.e)
    assert polaron_step(0.0, 100.0, PARAMS, 0.0, 10.0) == 0.0
    with pytest.raises(ValueError):
        polaron_step(0.0, 1.0, PARAMS, 1.0, 0.0)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 50.0))
def test_conversion_and_polarons_lower_resistance(x1, x2, p):
    lo, hi = sorted((x1, x2))
    assert effective_resistance(ELEC, hi, 0.0) <= effective_resistance(ELEC, lo, 0.0)
    assert effective_resistance(ELEC, lo, p) <= effective_resistance(ELEC, lo, 0.0)
    assert effective_capacitance(ELEC, hi) >= effective_capacitance(ELEC, lo)


def test_resistance_endpoints():
    assert effective_resistance(ELEC, 0.0, 0.0) == pytest.approx(ELEC.R_py)
    assert effective_resistance(ELEC, 1.0, 0.0) == pytest.approx(ELEC.R_ppy)
    with pytest.raises(ValueError):
        effective_resistance(ELEC, 1.1, 0.0)


def test_peis_reference_is_parallel_rc_magnitude():
    r, c, f = 4e5, 1e-8, 115.0
    z = 1 / abs(1 / r + 2j * math.pi * f * c)
    assert pe_is_reference(r, c, f) == pytest.approx(z)
    with pytest.raises(ValueError):
        pe_is_reference(r, c, 0.0)


def test_validation():
    with pytest.raises(ValueError):
        ReceptorElectrical(R_py=1e5, R_ppy=4e5)
    with pytest.raises(ValueError):
        ElectrodePair(1, (0, 0), [], "thorax")
    with pytest.raises(ValueError):
        ElectrodePair(1, (0, 0), [1], "leg")
    with pytest.raises(ValueError):
        AdcSample(0.0, 2000, "+")
