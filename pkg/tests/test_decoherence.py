import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import time_domain_chi
from spinbath.decoherence import (
    DEER, ECHO, RAMSEY, NoiseModel, PulseSequence, QuadratureError, b1_rms_sq_from_density, chi_closed_echo,
    chi_closed_ramsey, chi_numeric, coherence, dchi_closed_echo, dchi_closed_ramsey, deer_envelope, deer_signal,
    density_to_dephasing, dephasing_constant, dephasing_to_density, filter_function, predict_coherence,
    predict_scenario, t2, t2_star,
)
from spinbath.flipflop import BathComposition
from spinbath.presets import get_preset

NOISE = NoiseModel(b1_rms_sq=(1e-6) ** 2, tau_c=1e-6)


@pytest.mark.parametrize("ratio", [0.01, 0.3, 1.0, 7.0, 100.0])
def test_closed_forms_match_time_domain_oracle(ratio):
    T = ratio * NOISE.tau_c
    for kind, closed in ((RAMSEY, chi_closed_ramsey), (ECHO, chi_closed_echo)):
        ref = time_domain_chi(NOISE.strength, NOISE.tau_c, T, kind)
        assert closed(NOISE, T) == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("ratio", [0.05, 2.0, 50.0])
def test_numeric_chi_matches_closed_forms(ratio):
    T = ratio * NOISE.tau_c
    assert chi_numeric(NOISE, RAMSEY, T) == pytest.approx(chi_closed_ramsey(NOISE, T), rel=1e-6)
    assert chi_numeric(NOISE, ECHO, T) == pytest.approx(chi_closed_echo(NOISE, T), rel=1e-6)


def test_numeric_chi_with_larmor_offset_is_finite_and_smaller():
    shifted = NoiseModel(NOISE.b1_rms_sq, NOISE.tau_c, larmor_omega=2 * np.pi * 5e6)
    for kind in (RAMSEY, ECHO):
        v = chi_numeric(shifted, kind, 3e-6)
        assert 0 < v < chi_numeric(NOISE, kind, 3e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-9, 1e-3))
def test_echo_never_exceeds_ramsey_without_larmor_offset(ratio, tau_c):
    noise = NoiseModel(1e-12, tau_c)
    T = ratio * tau_c
    assert chi_closed_echo(noise, T) <= chi_closed_ramsey(noise, T) * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-2, 1e3))
def test_derivatives_match_finite_differences(ratio):
    T, h = ratio * NOISE.tau_c, 1e-4 * ratio * NOISE.tau_c
    for chi, dchi in ((chi_closed_ramsey, dchi_closed_ramsey), (chi_closed_echo, dchi_closed_echo)):
        fd = (chi(NOISE, T + h) - chi(NOISE, T - h)) / (2 * h)
        assert dchi(NOISE, T) == pytest.approx(fd, rel=1e-5)


def test_filter_functions():
    assert filter_function(RAMSEY, 0.0, 2.0) == pytest.approx(4.0)
    assert filter_function(ECHO, 0.0, 2.0) == 0.0
    w = np.array([0.3, 1.7])
    T = 2.0
    assert np.allclose(filter_function(RAMSEY, w, T), 4 * np.sin(w * T / 2) ** 2 / w**2)
    assert np.allclose(filter_function(ECHO, w, T), 16 * np.sin(w * T / 4) ** 4 / w**2)
    with pytest.raises(ValueError):
        filter_function("cpmg", 1.0, 1.0)


def test_limits_of_coherence_times():
    b1 = b1_rms_sq_from_density(4.5)
    tau = 1e-3
    # quasi-static Gaussian decay and slow-bath cubic echo decay
    assert coherence(NoiseModel(b1, 1.0), RAMSEY, t2_star(b1)) == pytest.approx(np.exp(-1), rel=1e-5)
    assert coherence(NoiseModel(b1, tau), ECHO, t2(b1, tau)) == pytest.approx(np.exp(-1), rel=1e-2)
    assert t2_star(0.0) == np.inf and t2(0.0, 1.0) == np.inf


def test_dephasing_constant_and_round_trip():
    assert dephasing_constant() == pytest.approx(0.1455, abs=1e-3)
    assert density_to_dephasing(2.0, 0.5) == pytest.approx(dephasing_constant())
    assert dephasing_to_density(density_to_dephasing(3.3, 0.7), 0.7) == pytest.approx(3.3)
    with pytest.raises(ValueError):
        density_to_dephasing(-1.0)
    with pytest.raises(ValueError):
        dephasing_to_density(1.0, 0.0)


def test_t2_star_calibration_near_one_microsecond():
    assert t2_star(b1_rms_sq_from_density(4.5)) == pytest.approx(1.08e-6, rel=1e-2)


def test_deer_signal_shape():
    assert deer_signal(0.0, 1e-6, 1e-5, c0=0.5, c=0.4, phi0=0.0) == pytest.approx(0.7)
    assert deer_signal(5e-6, np.inf, np.inf, c0=0.1, c=0.2, d_omega=0.0) == pytest.approx(0.2)
    assert np.allclose(deer_envelope([0.0, 1e-6], 1e-6, np.inf), [1.0, np.exp(-1)])
    with pytest.raises(ValueError):
        deer_signal(0.0, 0.0, 1.0)


def test_quadrature_failure_is_reported():
    with pytest.raises(QuadratureError) as info:
        chi_numeric(NOISE, RAMSEY, 1e-6, rtol=1e-18)
    assert info.value.achieved_error >= 0


def test_validation():
    with pytest.raises(ValueError):
        NoiseModel(1.0, 0.0)
    with pytest.raises(ValueError):
        NoiseModel(-1.0, 1.0)
    with pytest.raises(ValueError):
        PulseSequence(DEER, 1e-6)
    with pytest.raises(ValueError):
        PulseSequence("x", 1e-6)
    with pytest.raises(ValueError):
        chi_numeric(NOISE, RAMSEY, 0.0)


def test_zero_change_scenario_is_identity(field_111):
    bath = BathComposition([(get_preset("P1"), 2.0), (get_preset("NVH-"), 2.5)])
    s = predict_scenario(bath, bath, field_111, 2000, seed=5)
    assert s.fractional_t2_star == 0.0 and s.fractional_t2 == 0.0


def test_prediction_contents(field_111):
    bath = BathComposition([(get_preset("P1"), 2.0), (get_preset("e"), 0.0)])
    p = predict_coherence(bath, field_111, 2000)
    assert p.ts_star["e"] == np.inf
    assert p.ts_star["P1"] == pytest.approx(1e-6 / (2 * dephasing_constant()))
    assert np.all(np.diff(p.deer_contrast_curve["P1"]) < 0)
    assert p.t2 > p.t2_star
