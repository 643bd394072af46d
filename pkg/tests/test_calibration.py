"""
test_calibration.py
===================
Tests for ``fsimlab.calibration``.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest

from fsimlab.calibration import (
    CPHASE_LENGTH,
    GATE_PAD,
    ISWAP_LENGTH,
    CalCurve,
    GateRegistry,
    RegistryEntry,
    calibrate_composite_fsim,
    calibrate_cphase_family,
    calibrate_iswap_family,
    composite_program,
    convergence_csv,
    default_timestamp,
    entry_program,
    find_full_swap,
    quadratic_fit_r2,
    registry_lookup,
    standard_grid,
)
from fsimlab.device_sim import (
    DeviceModel,
    PulseProgram,
    coupler_amplitude_for_g,
    detuning_to_amplitude,
    evolve_block,
    make_pulse,
    realize_program,
)
from fsimlab.errors import CalibrationError, RegistryError
from fsimlab.experiments import gate_unitary
from fsimlab.fsim_model import FsimParams

STAMP = "2026-01-01T00:00:00+00:00"


@pytest.fixture(scope="module")
def model() -> DeviceModel:
    return DeviceModel(t_phi=None, single_qubit_error=0.0).without_distortion()


@pytest.fixture(scope="module")
def iswap_curve(model) -> CalCurve:
    return calibrate_iswap_family(model, n_fraction=9, n_coarse=61)


@pytest.fixture(scope="module")
def cphase_curve(model) -> CalCurve:
    return calibrate_cphase_family(model, n_detunings=9, n_extension=8)


def _entry(theta: float, phi: float, converged: bool = True) -> RegistryEntry:
    return RegistryEntry(
        theta_target=theta,
        phi_target=phi,
        cphase=(0.1, 0.0, 0.2),
        iswap=(0.01, 0.0, 0.3),
        measured=FsimParams.from_degrees(theta + 0.2, phi - 0.3),
        residual_theta=0.2,
        residual_phi=-0.3,
        iterations=2,
        converged=converged,
        timestamp=STAMP,
    )


class TestCalCurve:

    def test_requires_increasing_abscissa(self):
        with pytest.raises(CalibrationError):
            CalCurve("iswap", [0.0, 0.0], {"fraction": [0.0, 1.0]})
        with pytest.raises(CalibrationError):
            CalCurve("iswap", [0.0], {"fraction": [0.0]})

    def test_interpolates_and_clamps(self):
        curve = CalCurve("iswap", [0.0, 45.0, 90.0], {"fraction": [0.0, 0.5, 1.0]})
        assert curve.controls_for(45.0)["fraction"] == pytest.approx(0.5)
        assert curve.controls_for(120.0)["fraction"] == pytest.approx(1.0)

    def test_cphase_wraps_phase_into_domain(self):
        curve = CalCurve("cphase", [0.0, 180.0, 350.0], {"delta": [200.0, 240.0, 280.0]})
        assert curve.controls_for(-180.0)["delta"] == pytest.approx(240.0)
        assert curve.controls_for(356.0)["delta"] == pytest.approx(200.0)

    def test_dict_round_trip(self):
        curve = CalCurve("iswap", [0.0, 90.0], {"fraction": [0.0, 1.0]}, {"q0": 0.1})
        back = CalCurve.from_dict(json.loads(json.dumps(curve.to_dict())))
        np.testing.assert_allclose(back.x, curve.x)
        assert back.meta == {"q0": 0.1}

    def test_csv(self, tmp_path):
        curve = CalCurve("cphase", [0.0, 90.0], {"delta": [1.0, 2.0], "coupler": [0.1, 0.2]})
        with curve.to_csv(tmp_path / "c.csv", {"seed": 1}).open(newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["phi", "delta", "coupler", "seed"]
        assert len(rows) == 3

    def test_quadratic_fit_of_exact_parabola(self):
        theta = np.linspace(0.0, 90.0, 10)
        curve = CalCurve("iswap", theta, {"fraction": theta / 90.0,
                                          "phi_iswap": np.degrees(0.3 * np.radians(theta) ** 2)})
        assert quadratic_fit_r2(curve) == pytest.approx(1.0)


class TestRegistry:

    def test_save_load(self, tmp_path):
        reg = GateRegistry([_entry(45.0, 90.0), _entry(90.0, 0.0, converged=False)], {"stride": 1.0})
        back = GateRegistry.load(reg.save(tmp_path / "reg.json"))
        assert back.to_dict() == reg.to_dict()
        assert len(back) == 2

    def test_load_rejects_other_schema(self, tmp_path):
        path = tmp_path / "reg.json"
        path.write_text(json.dumps({"schema_version": 99, "entries": []}))
        with pytest.raises(RegistryError):
            GateRegistry.load(path)

    def test_load_rejects_garbage(self, tmp_path):
        path = tmp_path / "reg.json"
        path.write_text("{")
        with pytest.raises(RegistryError):
            GateRegistry.load(path)

    def test_lookup_exact_and_nearest(self):
        reg = GateRegistry([_entry(45.0, 90.0), _entry(90.0, 0.0)])
        hit = registry_lookup(reg, 45.0, 90.0)
        assert not hit.off_grid and hit.entry.theta_target == 45.0
        near = registry_lookup(reg, 88.0, 359.0)
        assert near.off_grid and near.entry.theta_target == 90.0

    def test_lookup_empty(self):
        with pytest.raises(RegistryError):
            registry_lookup(GateRegistry(), 0.0, 0.0)

    def test_standard_grid(self):
        grid = standard_grid()
        assert len(grid) == 525
        assert grid[0] == (0.0, 0.0)
        assert grid[-1] == (90.0, 360.0)

    def test_convergence_csv(self, tmp_path):
        reg = GateRegistry([_entry(45.0, 90.0), _entry(90.0, 0.0, converged=False)])
        with convergence_csv(reg, tmp_path / "conv.csv").open(newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:2] == ["theta_target", "phi_target"]
        assert [r[7] for r in rows[1:]] == ["1", "0"]

    def test_entry_program_uses_registry_lengths(self, model):
        reg = GateRegistry([_entry(45.0, 90.0)], {"cphase_len": 10.0, "iswap_len": 8.0, "pad": 0.5})
        prog = entry_program(reg.entries[0], reg, model)
        assert prog.total_duration == pytest.approx(10.0 + 8.0 + 4 * 0.5)


class TestFamilies:

    def test_full_swap_returns_population(self, model):
        a = find_full_swap(model.eta, model)
        assert a > 0.0
        pulse = make_pulse(13.0, 1.0, (detuning_to_amplitude(model.eta, model), 0.0, a))
        assert abs(gate_unitary(pulse, model)[3, 3]) == pytest.approx(1.0, abs=1e-2)

    def test_iswap_family(self, iswap_curve):
        assert iswap_curve.meta["converged"]
        assert iswap_curve.meta["transfer"] >= 0.99
        lo, hi = iswap_curve.domain
        assert lo == pytest.approx(0.0, abs=0.5)
        assert hi == pytest.approx(90.0, abs=1.0)
        assert quadratic_fit_r2(iswap_curve) <= 1.0

    def test_cphase_family(self, cphase_curve):
        assert cphase_curve.kind == "cphase"
        assert np.all(np.diff(cphase_curve.x) > 0)
        assert set(cphase_curve.columns) == {"delta", "coupler"}
        assert cphase_curve.meta["span_deg"] >= 359.0
        lo, hi = cphase_curve.domain
        assert lo == pytest.approx(0.0, abs=1e-6)
        assert hi == pytest.approx(360.0, abs=1.0)

    def test_default_band_stays_inside_the_full_swap_limit(self, cphase_curve):
        half_width = 0.8 * 1e3 / 13.0
        assert cphase_curve.meta["delta_min"] == pytest.approx(240.0 - half_width)
        assert cphase_curve.meta["delta_max"] == pytest.approx(240.0 + half_width)

    def test_cphase_family_on_the_default_profile(self):
        curve = calibrate_cphase_family(DeviceModel(), n_detunings=5, n_extension=6)
        assert curve.meta["span_deg"] >= 359.0

    def test_band_edges_without_a_full_swap_are_dropped(self, model, caplog):
        with caplog.at_level("WARNING", logger="fsimlab.calibration"):
            curve = calibrate_cphase_family(model, span=100.0, n_detunings=5, n_extension=6)
        assert curve.meta["delta_min"] == pytest.approx(190.0)
        assert curve.meta["delta_max"] == pytest.approx(290.0)
        assert "trimmed" in caplog.text


class TestCompositeCalibration:

    def test_single_target(self, model, cphase_curve, iswap_curve, tmp_path):
        reg = calibrate_composite_fsim([(45.0, 90.0)], model, cphase=cphase_curve,
                                       iswap=iswap_curve, max_iterations=3, timestamp=STAMP)
        assert len(reg) == 1
        entry = reg.entries[0]
        assert entry.timestamp == STAMP
        assert entry.iterations <= 3
        assert entry.residual_theta == pytest.approx(
            math.degrees(entry.measured.theta) - 45.0)
        assert reg.meta["max_iterations"] == 3
        back = GateRegistry.load(reg.save(tmp_path / "reg.json"))
        assert back.to_dict() == reg.to_dict()

    def test_rejects_empty_targets(self, model):
        with pytest.raises(ValueError):
            calibrate_composite_fsim([], model)

    def test_default_timestamp_is_reproducible(self, model, cphase_curve, iswap_curve,
                                               monkeypatch):
        monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
        assert default_timestamp() == "1970-01-01T00:00:00+00:00"
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "1767225600")
        assert default_timestamp() == STAMP
        reg = calibrate_composite_fsim([(45.0, 90.0)], model, cphase=cphase_curve,
                                       iswap=iswap_curve, max_iterations=0)
        assert reg.entries[0].timestamp == STAMP

    def test_workers_do_not_change_the_registry(self, model, cphase_curve, iswap_curve):
        targets = [(30.0, 90.0), (60.0, 270.0)]
        kwargs = dict(cphase=cphase_curve, iswap=iswap_curve, max_iterations=2,
                      shots=500, seed=7, timestamp=STAMP)
        a = calibrate_composite_fsim(targets, model, **kwargs)
        b = calibrate_composite_fsim(targets, model, workers=2, **kwargs)
        assert a.to_dict() == b.to_dict()

    def test_targets_converge_without_settling(self, model, cphase_curve, iswap_curve):
        targets = [(30.0, 90.0), (60.0, 270.0), (75.0, 180.0)]
        reg = calibrate_composite_fsim(targets, model, cphase=cphase_curve, iswap=iswap_curve,
                                       timestamp=STAMP)
        assert all(e.converged for e in reg.entries)
        assert max(e.iterations for e in reg.entries) <= 9

    def test_reversed_order_is_recorded_and_replayed(self, model, cphase_curve, iswap_curve):
        reg = calibrate_composite_fsim([(45.0, 90.0)], model, cphase=cphase_curve,
                                       iswap=iswap_curve, max_iterations=0, timestamp=STAMP,
                                       order="iswap_first")
        assert reg.meta["order"] == "iswap_first"
        entry = reg.entries[0]
        prog = entry_program(entry, reg, model)
        expected = composite_program(entry.cphase, entry.iswap, model, order="iswap_first")
        np.testing.assert_array_equal(prog.coupler, expected.coupler)
        default = composite_program(entry.cphase, entry.iswap, model)
        assert prog.coupler.shape == default.coupler.shape
        assert not np.array_equal(prog.coupler, default.coupler)

    def test_rejects_unknown_order(self, model):
        with pytest.raises(ValueError):
            composite_program((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), model, order="both")


class TestGateOrder:
    """Flux-line settling tails of the first pulse act on the second."""

    @staticmethod
    def _cphase_leg_leakage(program, model, start):
        realized = realize_program(program, model)
        stop = start + int(round((CPHASE_LENGTH + 2 * GATE_PAD) * model.sample_rate))
        leg = PulseProgram(realized.q0[start:stop], realized.q1[start:stop],
                           realized.coupler[start:stop], duration=CPHASE_LENGTH,
                           pad=GATE_PAD, sample_rate=model.sample_rate)
        return 1.0 - abs(evolve_block(leg, model)[2, 2]) ** 2

    def test_iswap_tail_makes_the_cphase_leak(self, default_device):
        model = default_device
        cphase = (detuning_to_amplitude(model.eta, model), 0.0, find_full_swap(model.eta, model))
        iswap = (detuning_to_amplitude(0.0, model), 0.0, coupler_amplitude_for_g(-1e3 / 44.0, model))
        first = composite_program(cphase, iswap, model)
        second = composite_program(cphase, iswap, model, order="iswap_first")
        iswap_samples = int(round((ISWAP_LENGTH + 2 * GATE_PAD) * model.sample_rate))
        leak_first = self._cphase_leg_leakage(first, model, 0)
        leak_second = self._cphase_leg_leakage(second, model, iswap_samples)
        assert leak_second > leak_first
