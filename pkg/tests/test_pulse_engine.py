"""
test_pulse_engine.py
====================
Tests for ``fsimlab.pulse_engine``.
"""

from __future__ import annotations

import numpy as np
import pytest

from fsimlab.pulse_engine import (
    SETTLING_Q2,
    SETTLING_Q3,
    SettlingModel,
    Waveform,
    apply_settling,
    average_settling,
    fit_settling,
    load_waveform_csv,
    lsb,
    predistort,
    quantize,
    save_waveform_csv,
    step_response,
)


def _step(n: int = 3000, amplitude: float = 0.5) -> Waveform:
    return Waveform(np.full(n, amplitude))


class TestSettlingModel:

    def test_from_percent(self):
        assert SETTLING_Q2.alphas[2] == pytest.approx(-0.0494)
        assert SETTLING_Q2.taus == (858.0, 104.0, 10.0)

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ValueError):
            SettlingModel((0.1,), (10.0, 20.0))

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            SettlingModel((-1.0,), (10.0,))
        with pytest.raises(ValueError):
            SettlingModel((-0.1,), (0.0,))

    def test_sorted_orders_by_decreasing_tau(self):
        m = SettlingModel((-0.05, -0.01), (10.0, 500.0)).sorted()
        assert m.taus == (500.0, 10.0)
        assert m.alphas == (-0.01, -0.05)

    def test_identity(self):
        assert SettlingModel().is_identity
        assert not SETTLING_Q3.is_identity

    def test_dict_round_trip(self):
        assert SettlingModel.from_dict(SETTLING_Q3.to_dict()) == SETTLING_Q3

    def test_average(self):
        avg = average_settling(SETTLING_Q2, SETTLING_Q3)
        assert avg.taus == pytest.approx((927.0, 99.0, 9.5))
        assert avg.alphas[0] == pytest.approx(-0.00535)


class TestLineResponse:

    def test_sampled_step_matches_closed_form(self):
        w = apply_settling(Waveform(np.ones(2000)), SETTLING_Q2)
        np.testing.assert_allclose(w.samples, step_response(SETTLING_Q2, w.times()), atol=1e-12)

    def test_step_settles_to_one(self):
        assert step_response(SETTLING_Q3, [0.0, 1e6]) == pytest.approx(
            [1.0 + sum(SETTLING_Q3.alphas), 1.0])

    def test_predistortion_cancels_settling(self):
        w = _step()
        out = apply_settling(predistort(w, SETTLING_Q3), SETTLING_Q3)
        assert np.max(np.abs(out.samples - w.samples)) < 1e-6

    def test_predistortion_with_quantisation_within_two_lsb(self):
        w = _step()
        out = apply_settling(quantize(predistort(w, SETTLING_Q2), 14), SETTLING_Q2)
        assert np.max(np.abs(out.samples - w.samples)) < 2 * lsb(14)

    def test_predistortion_rejects_singular_model(self):
        with pytest.raises(ValueError):
            predistort(_step(10), SettlingModel((-0.5, -0.5), (10.0, 100.0)))

    def test_identity_model_is_transparent(self):
        w = Waveform(np.linspace(-0.5, 0.5, 50))
        np.testing.assert_allclose(apply_settling(w, SettlingModel()).samples, w.samples)


class TestQuantize:

    def test_lsb(self):
        assert lsb(14) == pytest.approx(2.0 / 16384)

    def test_rounds_half_away_from_zero(self):
        step = lsb(14)
        out = quantize(Waveform(np.array([0.5 * step, -0.5 * step, 0.2 * step])), 14)
        np.testing.assert_allclose(out.samples, [step, -step, 0.0])
        assert not out.clipped

    def test_clips_and_flags(self):
        out = quantize(Waveform(np.array([1.5, -0.2])), 14)
        assert out.clipped
        assert out.samples[0] == 1.0

    def test_rejects_tiny_resolution(self):
        with pytest.raises(ValueError):
            quantize(_step(4), 1)


class TestWaveform:

    def test_rejects_two_dimensional_samples(self):
        with pytest.raises(ValueError):
            Waveform(np.zeros((2, 2)))

    def test_times(self):
        w = Waveform(np.zeros(4), sample_rate=2.0)
        np.testing.assert_allclose(w.times(), [0.0, 0.5, 1.0, 1.5])

    def test_csv_round_trip(self, tmp_path):
        w = Waveform(np.array([0.0, 0.25, -0.125]), sample_rate=2.0)
        back = load_waveform_csv(save_waveform_csv(tmp_path / "w.csv", w))
        np.testing.assert_allclose(back.samples, w.samples)
        assert back.sample_rate == pytest.approx(2.0)

    def test_csv_requires_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            load_waveform_csv(path)


class TestFitSettling:

    def test_recovers_measured_response(self):
        t = np.arange(0.0, 4000.0, 1.0)
        fitted = fit_settling(t, step_response(SETTLING_Q3, t), SETTLING_Q2)
        assert np.max(np.abs(step_response(fitted, t) - step_response(SETTLING_Q3, t))) < 1e-5
