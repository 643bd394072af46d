"""
experiments.py
==============
Shallow characterisation protocols run against :mod:`fsimlab.device_sim`.

* :func:`swap_spectroscopy`   coupling strength versus coupler bias
* :func:`landscape_scan`      leakage / swap angle / conditional phase maps
* :func:`unitary_tomography`  the six-circuit unitary tomography
* :func:`leakage_per_cycle`   leakage growth in random gate sequences

Every protocol takes ``shots=None`` for expectation mode (exact
probabilities) or a shot count for binomial/multinomial sampling.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy.optimize import curve_fit

from fsimlab.device_sim import (
    XEB_GATES,
    DeviceModel,
    PulseProgram,
    apply_single_qubit_gate,
    basis_state,
    block_to_computational,
    detuning_to_amplitude,
    evolve_block,
    evolve_unitary,
    gate_channel,
    idle_phase_difference,
    make_pulse,
    measured_distribution,
    realize_program,
    single_qubit_channel,
)
from fsimlab.errors import FitError
from fsimlab.fsim_model import (
    FsimParams,
    TomographyElements,
    extract_fsim_params,
    simulate_tomography,
)
from fsimlab.parallel import derive_rng, map_ordered

logger = logging.getLogger(__name__)

#: Leakage below which a pixel counts as usable.
LEAKAGE_THRESHOLD = 0.01
DEFAULT_SHOTS = 2000
#: Oscillation amplitude below which a spectroscopy column is noise.
SPECTROSCOPY_NOISE_FLOOR = 0.05
SCAN_MODES = ("leakage", "theta", "phi")


# ── Results ────────────────────────────────────────────────────── #

@dataclass
class ScanResult:
    """Two-dimensional scan.

    Attributes
    ----------
    axes : dict[str, ndarray]
        Ordered axis name -> grid.  ``values[i, j]`` belongs to the i-th
        value of the first axis and the j-th of the second.
    values : ndarray
        Measured quantity (population, or angle in degrees).
    mode : str
        ``leakage``, ``theta``, ``phi`` or ``population``.
    failed : list[tuple[int, int]]
        Pixels that could not be evaluated (``values`` holds NaN there).
    """

    axes: dict[str, npt.NDArray[np.float64]]
    values: npt.NDArray[np.float64]
    mode: str
    failed: list[tuple[int, int]] = field(default_factory=list)

    def count_below(self, threshold: float = LEAKAGE_THRESHOLD) -> int:
        """Number of pixels with a value strictly below *threshold*."""
        return int(np.sum(np.nan_to_num(self.values, nan=np.inf) < threshold))

    def rows(self) -> list[tuple[float, float, float]]:
        (a, xa), (b, xb) = self.axes.items()
        return [(float(xa[i]), float(xb[j]), float(self.values[i, j]))
                for i in range(len(xa)) for j in range(len(xb))]

    def to_csv(self, path: str | Path, extra: Optional[Mapping[str, object]] = None) -> Path:
        """One row per pixel: axis values, the measurement, then *extra* columns."""
        path = Path(path)
        extra = dict(extra or {})
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([*self.axes, self.mode, *extra])
            for row in self.rows():
                writer.writerow([*(repr(v) for v in row), *extra.values()])
        return path


@dataclass
class SpectroscopyResult:
    """Swap spectroscopy outcome.

    Attributes
    ----------
    scan : ScanResult
        Population of q1 versus (coupler bias, duration).
    g : ndarray
        Extracted ``|g|`` per bias, MHz (0 where below the noise floor).
    resolution : float
        FFT bin width expressed as coupling, MHz.
    below_noise : ndarray of bool
        Columns whose oscillation amplitude did not clear the floor.
    """

    scan: ScanResult
    g: npt.NDArray[np.float64]
    resolution: float
    below_noise: npt.NDArray[np.bool_]


@dataclass
class LeakageResult:
    depths: npt.NDArray[np.int64]
    population: npt.NDArray[np.float64]
    rate: float
    amplitude: float
    decay: float


# ── Circuit primitives ─────────────────────────────────────────── #

def _rng(shots: Optional[int], rng: Optional[np.random.Generator]) -> Optional[np.random.Generator]:
    if shots is None:
        return None
    if shots < 1:
        raise ValueError(f"shots must be >= 1 or None, got {shots}")
    return rng if rng is not None else np.random.default_rng()


def _sample(p: float, shots: Optional[int], rng: Optional[np.random.Generator]) -> float:
    p = min(max(float(p), 0.0), 1.0)
    if shots is None:
        return p
    return rng.binomial(shots, p) / shots


def _evolver(program: PulseProgram, model: DeviceModel, *, noise: bool, frame: str = "idle"):
    """Return ``rho -> rho'`` for the realised *program*."""
    realized = realize_program(program, model)
    if noise:
        return gate_channel(realized, model, noise=True, frame=frame).apply
    u = evolve_unitary(realized, model, frame=frame)
    return lambda rho: u @ rho @ u.conj().T


def gate_unitary(program: PulseProgram, model: DeviceModel, *, frame: str = "idle") -> npt.NDArray[np.complex128]:
    """Computational block of the realised *program*'s propagator."""
    return block_to_computational(evolve_block(realize_program(program, model), model, frame=frame))


# ── Unitary tomography ─────────────────────────────────────────── #

# name -> (qubit prepared in superposition, qubit measured, spectator excited)
TOMOGRAPHY_CIRCUITS: dict[str, tuple[int, int, bool]] = {
    "u11": (1, 1, False),
    "u12": (0, 1, False),
    "u21": (1, 0, False),
    "u22": (0, 0, False),
    "u12_excited": (0, 1, True),
    "u22_excited": (0, 0, True),
}


def _p_zero(rho: npt.NDArray[np.complex128], model: DeviceModel, which: int) -> float:
    probs = measured_distribution(rho, model).reshape(2, 2)
    return float(probs.sum(axis=1 - which)[0])


def _tomography_elements(
    evolve,
    model: DeviceModel,
    names: Sequence[str],
    *,
    shots: Optional[int],
    rng: Optional[np.random.Generator],
    pauli_error: float,
) -> dict[str, complex]:
    out = {}
    for name in names:
        prepared, measured, excited = TOMOGRAPHY_CIRCUITS[name]
        rho = basis_state("00")
        if excited:
            rho = apply_single_qubit_gate(rho, 1, "X", pauli_error=pauli_error)
        rho = apply_single_qubit_gate(rho, prepared, "Y/2", pauli_error=pauli_error)
        rho = evolve(rho)
        # <sigma_x> after -Y/2, <sigma_y> after X/2, both read as <Z>.
        expect = []
        for pre in ("-Y/2", "X/2"):
            final = apply_single_qubit_gate(rho, measured, pre, pauli_error=pauli_error)
            expect.append(2.0 * _sample(_p_zero(final, model, measured), shots, rng) - 1.0)
        out[name] = complex(expect[0], expect[1])
    return out


def unitary_tomography(
    program: PulseProgram,
    model: DeviceModel,
    *,
    shots: Optional[int] = DEFAULT_SHOTS,
    seed: Optional[int | np.random.Generator] = None,
    noise: bool = False,
    frame: str = "idle",
) -> TomographyElements:
    """Run the six tomography circuits around *program*.

    Parameters
    ----------
    shots : int or None
        Repetitions per measurement basis; ``None`` for exact expectations.
    noise : bool
        Simulate decoherence and single-qubit gate errors.
    frame : str
        ``idle`` (hardware frame) or ``shared``; in the shared frame the
        idle phase difference is recorded in ``psi10``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    rng = _rng(shots, rng)
    evolve = _evolver(program, model, noise=noise, frame=frame)
    pauli_error = model.single_qubit_error if noise else 0.0
    elems = _tomography_elements(evolve, model, list(TOMOGRAPHY_CIRCUITS),
                                 shots=shots, rng=rng, pauli_error=pauli_error)
    psi10 = 0.0 if frame == "idle" else idle_phase_difference(model, program.total_duration)
    tol = 0.05 if shots is None else max(0.05, 4.0 / math.sqrt(shots))
    return TomographyElements(**elems, psi10=psi10, tolerance=tol).with_consistency_check()


def measure_fsim(
    program: PulseProgram,
    model: DeviceModel,
    *,
    shots: Optional[int] = None,
    seed: Optional[int | np.random.Generator] = None,
    noise: bool = False,
) -> FsimParams:
    """fSim angles of *program* as seen by unitary tomography."""
    if shots is None and not noise:
        elems = simulate_tomography(gate_unitary(program, model))
    else:
        elems = unitary_tomography(program, model, shots=shots, seed=seed, noise=noise)
    return extract_fsim_params(elems)


# ── Swap spectroscopy ──────────────────────────────────────────── #

def _resonant_pulse(duration: float, coupler_bias: float, model: DeviceModel, *,
                    delta: float = 0.0, shape: str = "rectangular", pad: float = 0.0,
                    rise: float = 3.0) -> PulseProgram:
    amps = (detuning_to_amplitude(delta, model), 0.0, coupler_bias - model.coupler.off_bias)
    return make_pulse(duration, pad, amps, shape, rise=rise, sample_rate=model.sample_rate)


def swap_spectroscopy(
    bias_grid: npt.ArrayLike,
    duration_grid: npt.ArrayLike,
    model: DeviceModel,
    *,
    shots: Optional[int] = None,
    seed: Optional[int] = None,
    noise: bool = False,
    noise_floor: float = SPECTROSCOPY_NOISE_FLOOR,
    workers: int = 1,
) -> SpectroscopyResult:
    """Swap |10> into |01> on resonance and read ``|g|`` off the oscillation.

    *duration_grid* must be uniformly spaced.
    """
    biases = np.asarray(bias_grid, dtype=float)
    durations = np.asarray(duration_grid, dtype=float)
    if len(durations) < 4:
        raise ValueError("duration_grid needs at least 4 points")
    step = float(durations[1] - durations[0])
    if step <= 0 or not np.allclose(np.diff(durations), step, rtol=1e-9, atol=1e-12):
        raise ValueError("duration_grid must be uniformly spaced and increasing")

    def pixel(idx: tuple[int, int]) -> float:
        i, j = idx
        rng = _rng(shots, derive_rng(seed, idx) if shots is not None else None)
        prog = _resonant_pulse(durations[j], biases[i], model)
        rho = _evolver(prog, model, noise=noise)(basis_state("10"))
        return _sample(1.0 - _p_zero(rho, model, 1), shots, rng)

    cells = [(i, j) for i in range(len(biases)) for j in range(len(durations))]
    values = np.array(map_ordered(pixel, cells, workers)).reshape(len(biases), len(durations))

    n_fft = max(16 * len(durations), 4096)
    freqs = np.fft.rfftfreq(n_fft, d=step)
    g = np.zeros(len(biases))
    below = np.zeros(len(biases), dtype=bool)
    for i, column in enumerate(values):
        spectrum = np.abs(np.fft.rfft(column - column.mean(), n=n_fft)) * 2.0 / len(column)
        k = int(np.argmax(spectrum[1:])) + 1
        if spectrum[k] < noise_floor:
            below[i] = True
            continue
        g[i] = 0.5 * freqs[k] * 1e3
    if below.any():
        logger.warning("%d spectroscopy column(s) below the noise floor", int(below.sum()))
    resolution = 0.5e3 / (len(durations) * step)
    scan = ScanResult({"coupler_bias": biases, "duration_ns": durations}, values, "population")
    return SpectroscopyResult(scan, g, resolution, below)


# ── Landscape scans ────────────────────────────────────────────── #

def _pixel_value(mode: str, program: PulseProgram, model: DeviceModel, *, noise: bool,
                 shots: Optional[int], rng: Optional[np.random.Generator], proxy: bool) -> float:
    evolve = _evolver(program, model, noise=noise)
    if mode == "phi":
        pauli_error = model.single_qubit_error if noise else 0.0
        el = _tomography_elements(evolve, model, ("u22", "u22_excited"),
                                  shots=shots, rng=rng, pauli_error=pauli_error)
        return math.degrees(float(np.angle(el["u22_excited"] * np.conj(el["u22"]))))
    rho = evolve(basis_state("01" if mode == "theta" else "11"))
    probs = measured_distribution(rho, model, discriminate_2=True).reshape(3, 3)
    if mode == "theta":
        p = _sample(probs[1, 0], shots, rng)
        return math.degrees(math.asin(math.sqrt(min(max(p, 0.0), 1.0))))
    if proxy:
        return _sample(probs[0].sum(), shots, rng)
    return _sample(probs[0, 2], shots, rng)


def landscape_scan(
    mode: str,
    delta_grid: npt.ArrayLike,
    coupler_grid: npt.ArrayLike,
    duration: float,
    model: DeviceModel,
    *,
    shape: str = "rectangular",
    pad: float = 0.0,
    rise: float = 3.0,
    shots: Optional[int] = None,
    seed: Optional[int] = None,
    noise: bool = False,
    proxy: bool = False,
    workers: int = 1,
) -> ScanResult:
    """Map one gate property over detuning (MHz) and absolute coupler bias.

    ``leakage``: start in |11>, report the |02> population (or, with
    *proxy*, the probability that q0 reads 0).  ``theta``: start in |01>
    and report ``asin(sqrt(P(|10>)))`` in degrees.  ``phi``: conditional
    phase from the two-branch Ramsey pair, degrees in (-180, 180].
    """
    if mode not in SCAN_MODES:
        raise ValueError(f"mode must be one of {SCAN_MODES}, got {mode!r}")
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    deltas = np.asarray(delta_grid, dtype=float)
    biases = np.asarray(coupler_grid, dtype=float)
    if not (np.all(np.isfinite(deltas)) and np.all(np.isfinite(biases))):
        raise ValueError("scan grids must be finite")

    def pixel(idx: tuple[int, int]) -> float:
        i, j = idx
        rng = _rng(shots, derive_rng(seed, idx) if shots is not None else None)
        try:
            prog = _resonant_pulse(duration, biases[j], model, delta=deltas[i],
                                   shape=shape, pad=pad, rise=rise)
            return _pixel_value(mode, prog, model, noise=noise, shots=shots, rng=rng, proxy=proxy)
        except ValueError as exc:
            logger.debug("pixel %s failed: %s", idx, exc)
            return float("nan")

    cells = [(i, j) for i in range(len(deltas)) for j in range(len(biases))]
    logger.info("%s scan: %d pixels, %s ns %s pulses", mode, len(cells), duration, shape)
    values = np.array(map_ordered(pixel, cells, workers)).reshape(len(deltas), len(biases))
    failed = [c for c in cells if np.isnan(values[c])]
    if failed:
        logger.warning("%d of %d scan pixels could not be evaluated", len(failed), len(cells))
    return ScanResult({"delta_mhz": deltas, "coupler_bias": biases}, values, mode, failed)


#: Half-width (MHz) of the detuning window around the |11> <-> |02> resonance.
LOBE_HALF_WIDTH = 90.0


def cphase_lobe_grid(model: DeviceModel, *, half_width: float = LOBE_HALF_WIDTH,
                     n_delta: int = 25, n_coupler: int = 25) -> tuple[npt.NDArray, npt.NDArray]:
    """Scan grid over the CPHASE swap lobes.

    Detunings span ``eta +/- half_width`` MHz and coupler biases run from
    0 to 0.01 below the guard bias.  This is the grid on which
    :func:`pulse_length_study` and :func:`smoothing_study` counts are
    compared.
    """
    deltas = np.linspace(model.eta - half_width, model.eta + half_width, n_delta)
    biases = np.linspace(0.0, model.coupler.guard_bias - 0.01, n_coupler)
    return deltas, biases


def pulse_length_study(
    durations: Sequence[float],
    delta_grid: npt.ArrayLike,
    coupler_grid: npt.ArrayLike,
    model: DeviceModel,
    *,
    threshold: float = LEAKAGE_THRESHOLD,
    **scan_kwargs,
) -> dict[float, int]:
    """Sub-threshold leakage pixel count per gate length."""
    return {float(d): landscape_scan("leakage", delta_grid, coupler_grid, d, model,
                                     **scan_kwargs).count_below(threshold)
            for d in durations}


def smoothing_study(
    shapes: Sequence[str],
    delta_grid: npt.ArrayLike,
    coupler_grid: npt.ArrayLike,
    duration: float,
    model: DeviceModel,
    *,
    threshold: float = LEAKAGE_THRESHOLD,
    **scan_kwargs,
) -> dict[str, int]:
    """Sub-threshold leakage pixel count per pulse shape."""
    return {s: landscape_scan("leakage", delta_grid, coupler_grid, duration, model,
                              shape=s, **scan_kwargs).count_below(threshold)
            for s in shapes}


# ── Leakage per cycle ──────────────────────────────────────────── #

def _saturating(m: npt.NDArray, amplitude: float, decay: float) -> npt.NDArray:
    return amplitude * (1.0 - decay ** m)


def leakage_per_cycle(
    gate: PulseProgram,
    depths: Sequence[int],
    model: DeviceModel,
    *,
    n_sequences: int = 10,
    seed: Optional[int] = None,
    noise: bool = True,
) -> LeakageResult:
    """Per-cycle leakage from |2> population growth in random sequences.

    Each cycle is a random gate from the XEB set on each qubit followed
    by *gate*.  The mean population of any |2> level is fitted with
    ``A (1 - lam^m)`` and the rate reported is ``A (1 - lam)``.
    """
    depths = np.asarray(sorted(set(int(d) for d in depths)), dtype=np.int64)
    if len(depths) < 3 or depths[0] < 1:
        raise ValueError("need at least 3 positive depths")
    pair = gate_channel(realize_program(gate, model), model, noise=noise, frame="idle")
    p1 = model.single_qubit_error if noise else 0.0
    cycles = [single_qubit_channel(a, 0, p1).then(single_qubit_channel(b, 1, p1)).then(pair).matrix
              for a in XEB_GATES for b in XEB_GATES]
    leaked = np.array([(a == 2) or (b == 2) for a in range(3) for b in range(3)])

    population = np.zeros(len(depths))
    for s in range(n_sequences):
        rng = derive_rng(seed, s)
        choice = rng.integers(0, len(cycles), size=int(depths[-1]))
        vec = basis_state("00").reshape(-1)
        k = 0
        for m in range(1, int(depths[-1]) + 1):
            vec = cycles[choice[m - 1]] @ vec
            if m == depths[k]:
                population[k] += float(np.real(np.diag(vec.reshape(9, 9)))[leaked].sum())
                k += 1
    population /= n_sequences

    if population.max() < 1e-9:
        return LeakageResult(depths, population, 0.0, 0.0, 1.0)
    try:
        (amp, lam), _ = curve_fit(_saturating, depths.astype(float), population,
                                  p0=(max(population[-1], 1e-6), 0.99),
                                  bounds=([0.0, 0.0], [1.0, 1.0]), maxfev=10000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"leakage growth fit failed: {exc}") from exc
    rate = float(amp * (1.0 - lam))
    logger.info("Leakage per cycle %.3e (A = %.3e, lambda = %.6f)", rate, amp, lam)
    return LeakageResult(depths, population, rate, float(amp), float(lam))
