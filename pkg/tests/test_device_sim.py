"""
test_device_sim.py
==================
Tests for ``fsimlab.device_sim``.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.linalg import expm

from fsimlab.device_sim import (
    CouplerModel,
    DeviceModel,
    PulseProgram,
    TlsDip,
    apply_single_qubit_gate,
    basis_state,
    block_propagator,
    block_to_computational,
    coupler_amplitude_for_g,
    depolarizing_channel,
    detuning_to_amplitude,
    evolve_block,
    evolve_density,
    evolve_unitary,
    freq_to_bias,
    gate_channel,
    gate_matrix,
    hamiltonian_block,
    make_pulse,
    measured_distribution,
    outcome_labels,
    qubit_freq,
    realize_program,
    sample_measurement,
    unitary_channel,
    validate_density,
)
from fsimlab.fsim_model import conditional_phase, simulate_tomography

# 9x9 indices of |01>, |10>, |11>, |20>, |02>
BLOCK_INDEX = [1, 3, 4, 6, 2]


def _iswap_pulse(model: DeviceModel, length: float = 11.0) -> PulseProgram:
    g = 1e3 / (4.0 * length)
    amps = (detuning_to_amplitude(0.0, model), 0.0, coupler_amplitude_for_g(-g, model))
    return make_pulse(length, 0.0, amps)


class TestCoupler:

    def test_default_anchors(self):
        c = CouplerModel.from_anchors()
        assert c.g(0.0) == pytest.approx(6.0)
        assert c.g(0.45) == pytest.approx(-50.0)

    def test_off_bias_zeroes_coupling(self):
        c = CouplerModel.from_anchors()
        assert 0.0 < c.off_bias < c.guard_bias
        assert c.g(c.off_bias) == pytest.approx(0.0, abs=1e-9)

    def test_bias_for_g_inverts(self):
        c = CouplerModel.from_anchors()
        assert c.g(c.bias_for_g(-20.0)) == pytest.approx(-20.0)
        assert c.bias_for_g(c.g(0.0)) == 0.0

    def test_vectorised(self):
        c = CouplerModel.from_anchors()
        out = c.g(np.array([0.0, 0.45, 0.0]))
        np.testing.assert_allclose(out, [6.0, -50.0, 6.0])

    def test_guard_band(self):
        c = CouplerModel.from_anchors()
        with pytest.raises(ValueError):
            c.g(c.divergence_bias)
        with pytest.raises(ValueError):
            c.bias_for_g(-1e5)

    def test_from_dict_accepts_anchors(self):
        c = CouplerModel.from_dict({"anchors": {"g_zero": 6, "g_anchor": -50, "anchor_bias": 0.45}})
        assert c.g(0.45) == pytest.approx(-50.0)

    def test_rejects_bad_ratio(self):
        with pytest.raises(ValueError):
            CouplerModel(1.0, 10.0, junction_ratio=1.2)


class TestDeviceModel:

    def test_defaults(self, default_device):
        assert default_device.eta == 240.0
        assert default_device.t1 == 25.3
        assert default_device.dac_bits == 14
        assert default_device.settling_coupler is not None

    def test_without_distortion(self, default_device):
        ideal = default_device.without_distortion()
        assert ideal.settling_q0 is None and ideal.dac_bits is None
        assert ideal.t1 == default_device.t1

    def test_dict_round_trip(self):
        m = DeviceModel(tls=TlsDip(6.05, 2.0, 5.0), t_phi=None)
        assert DeviceModel.from_dict(m.to_dict()) == m

    def test_from_dict_rejects_unknown_fields(self):
        with pytest.raises(ValueError):
            DeviceModel.from_dict({"eta": 200.0, "colour": "red"})

    @pytest.mark.parametrize("override", [
        {"eta": -1.0},
        {"t1": 0.0},
        {"idle_f_q0": 7.0},
        {"readout_q0": ((0.5, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))},
    ])
    def test_validation(self, override):
        with pytest.raises(ValueError):
            DeviceModel(**override)

    def test_tls_raises_relaxation_rate(self):
        m = DeviceModel(tls=TlsDip(6.0, 4.0, 5.0))
        assert m.relaxation_rate(6.0) == pytest.approx(1 / 25.3 + 1 / 5.0)
        assert m.relaxation_rate(6.5) < m.relaxation_rate(6.0)


class TestFrequencies:

    def test_zero_bias_is_max_frequency(self, ideal_device):
        assert qubit_freq(0.0, ideal_device, 0) == pytest.approx(6.8)

    def test_bias_round_trip(self, ideal_device):
        b = freq_to_bias(6.3, ideal_device, 1)
        assert qubit_freq(b, ideal_device, 1) == pytest.approx(6.3)

    def test_bias_range(self, ideal_device):
        with pytest.raises(ValueError):
            qubit_freq(0.5, ideal_device, 0)

    def test_detuning_amplitude_reaches_target(self, ideal_device):
        amp = detuning_to_amplitude(240.0, ideal_device)
        f0 = qubit_freq(ideal_device.idle_bias(0) + amp, ideal_device, 0)
        assert 1e3 * (f0 - ideal_device.idle_f_q1) == pytest.approx(240.0)


class TestHamiltonian:

    def test_block_structure(self):
        h = hamiltonian_block(10.0, 50.0, 240.0).matrix
        assert h[0, 1] == 10.0
        assert h[2, 3] == pytest.approx(10.0 * math.sqrt(2))
        np.testing.assert_allclose(np.diag(h), [0.0, 50.0, 50.0, 340.0, 240.0])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            hamiltonian_block(math.inf, 0.0, 240.0)

    @pytest.mark.parametrize("g, delta", [(20.0, 0.0), (15.0, 30.0), (-8.0, -12.0)])
    def test_single_excitation_rabi_oracle(self, g, delta):
        t = 17.0
        u = block_propagator(np.full(17, delta), np.full(17, g), 240.0, 1.0)
        omega = math.hypot(delta, 2 * g)
        expected = (2 * g / omega) ** 2 * math.sin(math.pi * omega * t * 1e-3) ** 2
        assert abs(u[0, 1]) ** 2 == pytest.approx(expected, abs=1e-8)

    def test_constant_block_matches_matrix_exponential(self):
        h = hamiltonian_block(12.0, 230.0, 240.0).matrix
        u = block_propagator(np.full(13, 230.0), np.full(13, 12.0), 240.0, 1.0)
        np.testing.assert_allclose(u, expm(-2j * math.pi * h * 13e-3), atol=1e-8)

    def test_piecewise_product_is_time_ordered(self):
        d = np.array([0.0] * 5 + [100.0] * 5)
        g = np.array([10.0] * 5 + [3.0] * 5)
        first = expm(-2j * math.pi * hamiltonian_block(10.0, 0.0, 240.0).matrix * 5e-3)
        second = expm(-2j * math.pi * hamiltonian_block(3.0, 100.0, 240.0).matrix * 5e-3)
        np.testing.assert_allclose(block_propagator(d, g, 240.0, 1.0), second @ first, atol=1e-10)


class TestEvolution:

    def test_iswap_pulse_swaps(self, ideal_device):
        u = block_to_computational(evolve_block(_iswap_pulse(ideal_device), ideal_device, frame="idle"))
        assert abs(u[1, 2]) == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("frame", ["shared", "idle"])
    def test_full_propagator_contains_block(self, ideal_device, frame):
        prog = make_pulse(12.0, 1.0, (detuning_to_amplitude(200.0, ideal_device), 0.0,
                                      coupler_amplitude_for_g(-15.0, ideal_device)))
        u9 = evolve_unitary(prog, ideal_device, frame=frame)
        u5 = evolve_block(prog, ideal_device, frame=frame)
        np.testing.assert_allclose(u9[np.ix_(BLOCK_INDEX, BLOCK_INDEX)], u5, atol=1e-10)

    def test_conditional_phase_is_frame_independent(self, ideal_device):
        prog = make_pulse(13.0, 1.0, (detuning_to_amplitude(230.0, ideal_device), 0.0,
                                      coupler_amplitude_for_g(-20.0, ideal_device)))
        phases = [conditional_phase(simulate_tomography(
            block_to_computational(evolve_block(prog, ideal_device, frame=f))))
            for f in ("shared", "idle")]
        assert phases[0] == pytest.approx(phases[1], abs=1e-9)

    def test_unknown_frame(self, ideal_device):
        with pytest.raises(ValueError):
            evolve_block(_iswap_pulse(ideal_device), ideal_device, frame="lab")

    def test_relaxation_during_idle(self):
        model = DeviceModel(t_phi=None).without_distortion()
        idle = make_pulse(1000.0, 0.0, (0.0, 0.0, 0.0))
        rho = evolve_density(basis_state("10"), idle, model, noise=True)
        assert np.real(rho[3, 3]) == pytest.approx(math.exp(-1.0 / 25.3), rel=1e-6)
        assert np.real(np.trace(rho)) == pytest.approx(1.0)

    def test_noiseless_density_matches_unitary(self, ideal_device):
        prog = _iswap_pulse(ideal_device)
        rho = evolve_density(basis_state("01"), prog, ideal_device)
        assert np.real(rho[3, 3]) == pytest.approx(1.0, abs=1e-6)


class TestChannels:

    def test_noiseless_channel_is_unitary(self, ideal_device):
        prog = _iswap_pulse(ideal_device)
        ch = gate_channel(prog, ideal_device, noise=False)
        u = evolve_unitary(prog, ideal_device, frame="idle")
        rho = basis_state("01")
        np.testing.assert_allclose(ch.apply(rho), u @ rho @ u.conj().T, atol=1e-12)

    def test_noisy_channel_has_error(self):
        model = DeviceModel().without_distortion()
        prog = _iswap_pulse(model)
        target = block_to_computational(evolve_block(prog, model, frame="idle"))
        noisy = gate_channel(prog, model, noise=True)
        ideal = gate_channel(prog, model, noise=False)
        assert ideal.pauli_error(target) < noisy.pauli_error(target) < 0.05

    def test_depolarizing_pauli_error(self):
        assert depolarizing_channel(0.01).pauli_error(np.eye(4)) == pytest.approx(0.01)

    def test_unitary_channel_then(self):
        x = np.zeros((4, 4))
        x[[0, 1, 2, 3], [1, 0, 3, 2]] = 1.0
        ch = unitary_channel(np.eye(4)).then(unitary_channel(x))
        out = ch.apply(basis_state("00"))
        assert np.real(out[1, 1]) == pytest.approx(1.0)

    def test_leakage_comes_from_double_excitation(self, ideal_device):
        prog = _iswap_pulse(ideal_device)
        u5 = evolve_block(prog, ideal_device)
        leak = gate_channel(prog, ideal_device, noise=False).leakage()
        assert leak == pytest.approx((1.0 - abs(u5[2, 2]) ** 2) / 4.0, abs=1e-10)


class TestSingleQubitGates:

    def test_x_flips_qubit(self):
        rho = apply_single_qubit_gate(basis_state("00"), 0, "X", pauli_error=0.0)
        assert np.real(rho[3, 3]) == pytest.approx(1.0)

    def test_depolarizing_error(self):
        rho = apply_single_qubit_gate(basis_state("00"), 1, "I", pauli_error=0.03)
        # X and Y errors flip the qubit
        assert np.real(rho[1, 1]) == pytest.approx(0.02)

    def test_leaves_second_level_alone(self):
        rho = apply_single_qubit_gate(basis_state("20"), 0, "X", pauli_error=0.0)
        assert np.real(rho[6, 6]) == pytest.approx(1.0)

    def test_unknown_gate(self):
        with pytest.raises(ValueError):
            gate_matrix("Z/4")


class TestMeasurement:

    def test_labels(self):
        assert outcome_labels() == ["00", "01", "10", "11"]
        assert len(outcome_labels(True)) == 9

    def test_second_level_folds_into_one(self, ideal_device):
        p = measured_distribution(basis_state("02"), ideal_device)
        np.testing.assert_allclose(p, [0, 1, 0, 0])
        p2 = measured_distribution(basis_state("02"), ideal_device, discriminate_2=True)
        assert p2[outcome_labels(True).index("02")] == pytest.approx(1.0)

    def test_readout_confusion(self):
        confusion = ((0.9, 0.1, 0.0), (0.05, 0.95, 0.0), (0.0, 0.1, 0.9))
        model = replace(DeviceModel(), readout_q0=confusion)
        p = measured_distribution(basis_state("00"), model)
        assert p[2] == pytest.approx(0.1)

    def test_sampling_is_seeded(self, ideal_device):
        rho = apply_single_qubit_gate(basis_state("00"), 0, "X/2", pauli_error=0.0)
        a = sample_measurement(rho, 500, model=ideal_device, rng=7)
        b = sample_measurement(rho, 500, model=ideal_device, rng=7)
        assert a == b
        assert sum(a.values()) == 500

    def test_validate_density(self):
        bad = basis_state("00")
        bad[0, 1] = 0.5
        with pytest.raises(ValueError):
            validate_density(bad)


class TestPulses:

    def test_rectangular_length(self):
        p = make_pulse(11.0, 1.0, (0.1, 0.0, -0.2))
        assert p.n_samples == 13
        assert p.q0[0] == 0.0 and p.q0[6] == pytest.approx(0.1)

    def test_cosine_peaks_mid_pulse(self):
        p = make_pulse(20.0, 0.0, (0.0, 0.0, 0.2), "cosine")
        assert p.coupler.max() == pytest.approx(0.2, rel=0.02)
        assert p.coupler[0] < 0.01

    def test_smoothed_widens_pads(self):
        p = make_pulse(20.0, 0.0, (0.0, 0.0, 0.2), "smoothed", rise=3.0)
        assert p.n_samples > 20
        assert p.coupler.sum() == pytest.approx(0.2 * 20.0)

    @pytest.mark.parametrize("shape", ["cosine", "smoothed"])
    def test_shape_acts_on_coupler_only(self, shape):
        p = make_pulse(20.0, 2.0, (0.3, 0.1, 0.2), shape)
        assert set(np.round(p.q0, 12)) == {0.0, 0.3}
        assert np.count_nonzero(p.q0) == 20
        assert np.count_nonzero(p.q1) == 20
        on = np.flatnonzero(p.q0)
        assert p.coupler[on].max() == pytest.approx(p.coupler.max())

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            make_pulse(0.0, 0.0, (0.1, 0.0, 0.0))
        with pytest.raises(ValueError):
            make_pulse(10.0, 0.0, (0.1, 0.0, 0.0), "triangle")
        with pytest.raises(ValueError):
            PulseProgram(np.array([1.5]), np.array([0.0]), np.array([0.0]), duration=1.0)

    def test_then_concatenates(self):
        a = make_pulse(5.0, 1.0, (0.1, 0.0, 0.0))
        b = make_pulse(4.0, 0.0, (0.0, 0.0, 0.1))
        joined = a.then(b, gap=2.0)
        assert joined.n_samples == 7 + 2 + 4
        assert joined.shape == "composite"

    def test_ideal_realisation_is_transparent(self, ideal_device):
        p = _iswap_pulse(ideal_device)
        r = realize_program(p, ideal_device)
        np.testing.assert_allclose(r.coupler, p.coupler)

    def test_settling_reduces_amplitude(self, default_device):
        p = make_pulse(20.0, 0.0, (0.0, 0.0, 0.1))
        r = realize_program(p, default_device)
        assert r.coupler[0] < p.coupler[0]
        assert r.coupler[0] == pytest.approx(0.1 * (1 + sum(default_device.settling_coupler.alphas)),
                                             abs=2e-4)
