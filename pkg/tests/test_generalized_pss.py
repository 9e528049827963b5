import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError
from scipy.integrate import solve_ivp

from backend.Models.generalized_pss import (PssConfig, PssState, chain_output, control_error,
                                            equivalent_speed_signal, equivalent_standard_gain, executed_error,
                                            pss_derivatives, pss_output, reference_and_feedback, standard_config,
                                            tuning_description, uncompensated_config)

beta = st.floats(0.0, 1.0)
speed = st.floats(0.9, 1.1)


@settings(max_examples=500, deadline=None)
@given(b1=beta, b2=beta, omega_i=speed, omega_bar=speed)
def test_executed_error_equals_control_error(b1, b2, omega_i, omega_bar):
    cfg = PssConfig(beta1=b1, beta2=b2)
    assert executed_error(omega_i, omega_bar, 1.0, cfg) == pytest.approx(
        control_error(omega_i, omega_bar, 1.0, cfg), abs=1e-12)


def test_reference_depends_only_on_global_weight():
    cfg = PssConfig(beta1=0.7, beta2=0.4)
    signals = reference_and_feedback(1.01, 0.99, 1.0, cfg)
    assert signals.nu_ref == pytest.approx(0.4)
    assert signals.nu == pytest.approx(0.7 * 0.02 + 0.4 * 0.99)


@pytest.mark.parametrize("b1,b2,expected", [
    (1.0, 1.0, 1.02 - 1.0),
    (1.0, 0.0, 1.02 - 1.005),
    (0.0, 1.0, 1.005 - 1.0),
    (0.0, 0.0, 0.0),
])
def test_control_error_special_cases(b1, b2, expected):
    cfg = PssConfig(beta1=b1, beta2=b2)
    assert control_error(1.02, 1.005, 1.0, cfg) == pytest.approx(expected, abs=1e-15)


@settings(max_examples=300, deadline=None)
@given(b1=beta, b2=st.floats(0.01, 1.0), omega_i=speed, omega_bar=speed)
def test_equivalent_speed_signal_reproduces_error(b1, b2, omega_i, omega_bar):
    cfg = PssConfig(beta1=b1, beta2=b2)
    tilde = equivalent_speed_signal(omega_i, omega_bar, 1.0, cfg)
    assert b2 * (tilde - 1.0) == pytest.approx(control_error(omega_i, omega_bar, 1.0, cfg), abs=1e-12)


def test_equivalent_speed_signal_is_local_speed_for_standard_tuning():
    cfg = PssConfig(beta1=0.5, beta2=0.5)
    assert equivalent_speed_signal(1.013, 0.998, 1.0, cfg) == 1.013


def test_equivalent_speed_signal_without_global_term():
    cfg = PssConfig(beta1=0.6, beta2=0.0)
    assert equivalent_speed_signal(1.01, 1.0, 1.0, cfg) == pytest.approx(1.0 + 0.6 * 0.01)


def test_washout_blocks_constant_error():
    cfg = PssConfig(beta1=1.0, beta2=0.0)
    dnu = 0.004
    state = PssState(washout_state=dnu, leadlag_states=(0.0,))
    deriv = pss_derivatives(state, dnu, cfg)
    assert deriv.washout_state == 0.0
    assert deriv.leadlag_states == (0.0,)
    assert chain_output(state, dnu, cfg) == 0.0
    assert pss_output(state, dnu, cfg) == 0.0


def test_washout_step_response_decays_with_tw():
    cfg = PssConfig(gain_k=1.0, washout_tw=10.0, leadlag_stages=[])

    def rhs(t, y):
        return [pss_derivatives(PssState(y[0], ()), 1.0, cfg).washout_state]

    times = np.array([1.0, 5.0, 10.0])
    sol = solve_ivp(rhs, (0.0, 10.0), [0.0], t_eval=times, rtol=1e-10, atol=1e-12)
    output = [chain_output(PssState(w, ()), 1.0, cfg) for w in sol.y[0]]
    assert np.allclose(output, np.exp(-times / 10.0), rtol=0, atol=1e-6)


def test_leadlag_direct_feedthrough():
    cfg = PssConfig(gain_k=1.0, leadlag_stages=[(0.25, 0.04)])
    out = chain_output(PssState.zeros(cfg), 0.001, cfg)
    assert out == pytest.approx(0.001 * 0.25 / 0.04)


def test_output_is_clipped():
    cfg = PssConfig(gain_k=25.0, vs_min=-0.05, vs_max=0.1)
    zeros = PssState.zeros(cfg)
    assert pss_output(zeros, 1.0, cfg) == 0.1
    assert pss_output(zeros, -1.0, cfg) == -0.05


def test_state_vector_layout():
    cfg = PssConfig(leadlag_stages=[(0.2, 0.05), (0.3, 0.1)])
    assert cfg.n_states == 3
    state = PssState.from_array(np.array([0.1, 0.2, 0.3]))
    assert state.washout_state == 0.1
    assert state.leadlag_states == (0.2, 0.3)
    assert np.array_equal(state.as_array(), [0.1, 0.2, 0.3])


@pytest.mark.parametrize("b1,b2,label", [
    (0.33, 0.33, "standard"),
    (0.0, 0.0, "none"),
    (1.0, 0.5, "inter_area_local"),
    (0.2, 0.9, "frequency_regulation"),
])
def test_tuning_description(b1, b2, label):
    assert tuning_description(PssConfig(beta1=b1, beta2=b2)) == label


def test_equal_weights_scale_a_standard_stabilizer():
    cfg = PssConfig(beta1=1 / 3, beta2=1 / 3, gain_k=18.0)
    assert equivalent_standard_gain(cfg) == pytest.approx(6.0)
    with pytest.raises(ValueError):
        equivalent_standard_gain(PssConfig(beta1=1.0, beta2=0.5))


def test_equal_weights_match_scaled_standard_output():
    generalized = PssConfig(beta1=0.4, beta2=0.4, gain_k=20.0)
    standard = standard_config(8.0, generalized)
    state = PssState.zeros(generalized)
    err_g = executed_error(1.0005, 0.999, 1.0, generalized)
    err_s = executed_error(1.0005, 0.999, 1.0, standard)
    out = pss_output(state, err_g, generalized)
    assert abs(out) < generalized.vs_max
    assert out == pytest.approx(pss_output(state, err_s, standard), rel=1e-12)


def test_uncompensated_config_is_washout_only():
    cfg = uncompensated_config(PssConfig(beta1=0.2, beta2=0.1, gain_k=30.0))
    assert (cfg.beta1, cfg.beta2, cfg.gain_k) == (1.0, 1.0, 1.0)
    assert cfg.leadlag_stages == []
    assert cfg.n_states == 1


@pytest.mark.parametrize("kwargs", [
    {"beta1": 1.2},
    {"beta2": -0.1},
    {"washout_tw": 0.0},
    {"leadlag_stages": [(0.2, 0.0)]},
    {"vs_min": 0.1, "vs_max": 0.1},
])
def test_invalid_configs_rejected(kwargs):
    with pytest.raises(ValidationError):
        PssConfig(**kwargs)
