"""
fsimlab
=======
Simulate, characterise, benchmark and calibrate fSim two-qubit gates on
a pair of flux-tunable transmons joined by a tunable coupler.

Features
--------
* **Device model**: three-level qubits, a flux-dependent coupler,
  decoherence, readout and a flux-line settling model with DAC
  quantisation and optional pre-distortion.
* **Experiments**: swap spectroscopy, leakage / swap-angle /
  conditional-phase landscapes, six-circuit unitary tomography and
  leakage-per-cycle estimation.
* **Benchmarking**: cross-entropy and purity benchmarking, single-qubit
  randomized benchmarking, ex-situ model optimisation and error budgets.
* **Calibration**: CPHASE and iSWAP-like gate families and a persisted
  registry of composite fSim gates.
* **Command line**: ``fsimlab`` runs every protocol and writes CSV/JSON
  artifacts plus a reproducibility manifest.

Quick start
-----------
>>> import math
>>> from fsimlab import DeviceModel, make_pulse, measure_fsim
>>> from fsimlab import coupler_amplitude_for_g, detuning_to_amplitude
>>> model = DeviceModel().without_distortion()
>>> amps = (detuning_to_amplitude(0.0, model), 0.0, coupler_amplitude_for_g(-1e3 / 44, model))
>>> params = measure_fsim(make_pulse(11.0, 0.0, amps), model)
>>> round(math.degrees(params.theta))
90
"""

from __future__ import annotations

import logging

from fsimlab.errors import (
    CalibrationError,
    ConfigError,
    DegenerateTomographyError,
    FitError,
    FsimlabError,
    NonUnitaryError,
    RegistryError,
    ReportSchemaError,
)
from fsimlab.fsim_model import (
    ErrorRates,
    FsimParams,
    SubtractedError,
    TomographyElements,
    build_fsim,
    coherence_limit,
    extract_fsim_params,
    fsim_unitary,
    normalize,
    pauli_from_decay,
    simulate_tomography,
    two_qubit_error_from_cycle,
    unitary_overlap_error,
)
from fsimlab.pulse_engine import (
    SettlingModel,
    Waveform,
    apply_settling,
    fit_settling,
    predistort,
    quantize,
)
from fsimlab.device_sim import (
    CouplerModel,
    DeviceModel,
    GateChannel,
    PulseProgram,
    coupler_amplitude_for_g,
    detuning_to_amplitude,
    evolve_block,
    evolve_density,
    gate_channel,
    make_pulse,
    realize_program,
    sample_measurement,
)
from fsimlab.experiments import (
    cphase_lobe_grid,
    landscape_scan,
    leakage_per_cycle,
    measure_fsim,
    swap_spectroscopy,
    unitary_tomography,
)
from fsimlab.benchmarking import (
    ErrorBudget,
    error_budget,
    ex_situ_optimize,
    fit_decay,
    generate_xeb_circuits,
    purity_benchmark,
    single_qubit_rb,
    xeb_benchmark,
    xeb_fidelity,
)
from fsimlab.calibration import (
    CalCurve,
    GateRegistry,
    calibrate_composite_fsim,
    calibrate_cphase_family,
    calibrate_iswap_family,
    composite_program,
    registry_lookup,
)
from fsimlab.config import RunConfig, load_device_model

__all__ = [
    # errors
    "FsimlabError",
    "ConfigError",
    "NonUnitaryError",
    "DegenerateTomographyError",
    "FitError",
    "CalibrationError",
    "RegistryError",
    "ReportSchemaError",
    # gate model
    "FsimParams",
    "TomographyElements",
    "ErrorRates",
    "SubtractedError",
    "build_fsim",
    "fsim_unitary",
    "normalize",
    "unitary_overlap_error",
    "pauli_from_decay",
    "two_qubit_error_from_cycle",
    "coherence_limit",
    "simulate_tomography",
    "extract_fsim_params",
    # pulses
    "SettlingModel",
    "Waveform",
    "apply_settling",
    "predistort",
    "quantize",
    "fit_settling",
    # device
    "CouplerModel",
    "DeviceModel",
    "PulseProgram",
    "GateChannel",
    "make_pulse",
    "realize_program",
    "evolve_block",
    "evolve_density",
    "gate_channel",
    "sample_measurement",
    "detuning_to_amplitude",
    "coupler_amplitude_for_g",
    # experiments
    "swap_spectroscopy",
    "landscape_scan",
    "cphase_lobe_grid",
    "unitary_tomography",
    "measure_fsim",
    "leakage_per_cycle",
    # benchmarking
    "generate_xeb_circuits",
    "xeb_fidelity",
    "xeb_benchmark",
    "fit_decay",
    "purity_benchmark",
    "single_qubit_rb",
    "ex_situ_optimize",
    "error_budget",
    "ErrorBudget",
    # calibration
    "CalCurve",
    "GateRegistry",
    "calibrate_cphase_family",
    "calibrate_iswap_family",
    "calibrate_composite_fsim",
    "composite_program",
    "registry_lookup",
    # configuration
    "RunConfig",
    "load_device_model",
]

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())
