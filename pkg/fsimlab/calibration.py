"""
calibration.py
==============
Closed-loop calibration of CPHASE-like, iSWAP-like and composite fSim
gates, and the persisted gate registry.

Composite gates are a CPHASE pulse followed by an iSWAP-like pulse
(``order="iswap_first"`` reverses the pair).  The conditional phase of
the pair is ``phi_cphase + phi_iswap(theta)``; the swap angle comes from
the iSWAP-like pulse alone.

All angles at this module's boundary are in degrees.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from fsimlab.device_sim import (
    DeviceModel,
    PulseProgram,
    coupler_amplitude_for_g,
    detuning_to_amplitude,
    make_pulse,
)
from fsimlab.errors import CalibrationError, RegistryError
from fsimlab.experiments import gate_unitary, measure_fsim
from fsimlab.fsim_model import FsimParams, wrap_angle
from fsimlab.parallel import derive_rng, map_ordered
from fsimlab.pulse_engine import lsb

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CPHASE_LENGTH = 13.0
ISWAP_LENGTH = 11.0
GATE_PAD = 1.0
#: Half-width of the CPHASE detuning band as a fraction of ``1e3 / gate_len``
#: MHz, the detuning beyond which no full swap exists.
CPHASE_SPAN_FRACTION = 0.8
MIN_TRANSFER = 0.99
COMPOSITE_ORDERS = ("cphase_first", "iswap_first")
ANGLE_TOLERANCE = 1.0
MAX_ITERATIONS = 15


# ── Helpers ────────────────────────────────────────────────────── #

def default_timestamp() -> str:
    """``SOURCE_DATE_EPOCH`` as ISO-8601 UTC, else the Unix epoch.

    Registries written twice from the same inputs are byte-identical.
    """
    raw = os.environ.get("SOURCE_DATE_EPOCH", "")
    try:
        seconds = int(raw) if raw else 0
    except ValueError:
        logger.warning("Ignoring non-integer SOURCE_DATE_EPOCH %r", raw)
        seconds = 0
    return datetime.fromtimestamp(seconds, timezone.utc).isoformat(timespec="seconds")


def _wrap_deg(x: float) -> float:
    return math.degrees(float(wrap_angle(math.radians(x))))


def _snap(amplitude: float, model: DeviceModel) -> float:
    if model.dac_bits is None:
        return float(amplitude)
    step = lsb(model.dac_bits)
    return float(np.round(amplitude / step) * step)


def _first_local_max(values: npt.NDArray) -> Optional[int]:
    for i in range(1, len(values) - 1):
        if values[i] >= values[i - 1] and values[i] > values[i + 1]:
            return i
    return None


def _first_local_min(values: npt.NDArray, start: int) -> Optional[int]:
    for i in range(max(start, 1), len(values) - 1):
        if values[i] <= values[i - 1] and values[i] <= values[i + 1]:
            return i
    return None


def _refine(fn: Callable[[float], float], lo: float, hi: float, model: DeviceModel) -> float:
    """Bounded Brent minimisation of *fn*, snapped to the DAC grid."""
    xatol = 1e-7 if model.dac_bits is None else lsb(model.dac_bits) / 8.0
    sol = minimize_scalar(fn, bounds=(lo, hi), method="bounded", options={"xatol": xatol})
    return _snap(sol.x, model)


def _pulse(length: float, amps: tuple[float, float, float], model: DeviceModel,
           pad: float = GATE_PAD) -> PulseProgram:
    return make_pulse(length, pad, amps, sample_rate=model.sample_rate)


def _transfer(program: PulseProgram, model: DeviceModel) -> float:
    """Population moved from |01> to |10>."""
    return float(abs(gate_unitary(program, model)[2, 1]) ** 2)


def _conditional_phase_deg(program: PulseProgram, model: DeviceModel) -> float:
    return math.degrees(measure_fsim(program, model).phi)


# ── Calibration curves ─────────────────────────────────────────── #

@dataclass
class CalCurve:
    """Monotone interpolation tables from a calibration sweep.

    Attributes
    ----------
    kind : str
        ``cphase``: ``x`` is the unwrapped conditional phase and the
        columns are ``delta`` (MHz) and ``coupler`` (amplitude).
        ``iswap``: ``x`` is the swap angle and the columns are
        ``fraction`` and ``phi_iswap`` (degrees).
    x : ndarray
        Strictly increasing abscissa, degrees.
    columns : dict[str, ndarray]
        Ordinates sampled at ``x``.
    meta : dict
        Fixed controls (``q0`` amplitude, endpoint amplitudes, gate
        length) and calibration flags.
    """

    kind: str
    x: npt.NDArray[np.float64]
    columns: dict[str, npt.NDArray[np.float64]]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        if len(self.x) < 2 or np.any(np.diff(self.x) <= 0):
            raise CalibrationError(f"{self.kind} curve needs a strictly increasing abscissa")
        self.columns = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        self._splines = {k: PchipInterpolator(self.x, v) for k, v in self.columns.items()}

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.x[-1])

    def _into_domain(self, value: float) -> float:
        lo, hi = self.domain
        if self.kind == "cphase":
            value = lo + (value - lo) % 360.0
            if value > hi:
                nearest = hi if value - hi < lo + 360.0 - value else lo
                logger.warning("phi %.2f outside calibrated range [%.2f, %.2f]; using %.2f",
                               value, lo, hi, nearest)
                value = nearest
            return value
        return min(max(value, lo), hi)

    def controls_for(self, value: float) -> dict[str, float]:
        """Interpolated columns at *value* (degrees)."""
        v = self._into_domain(value)
        return {k: float(s(v)) for k, s in self._splines.items()}

    def to_dict(self) -> dict:
        return {"kind": self.kind, "x": self.x.tolist(),
                "columns": {k: v.tolist() for k, v in self.columns.items()}, "meta": self.meta}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CalCurve":
        return cls(d["kind"], np.array(d["x"]), {k: np.array(v) for k, v in d["columns"].items()},
                   dict(d.get("meta", {})))

    def to_csv(self, path: str | Path, extra: Optional[Mapping[str, object]] = None) -> Path:
        extra = dict(extra or {})
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["phi" if self.kind == "cphase" else "theta", *self.columns, *extra])
            for i, x in enumerate(self.x):
                writer.writerow([repr(float(x)), *(repr(float(v[i])) for v in self.columns.values()),
                                 *extra.values()])
        return path


def _monotone(xs: Sequence[float], rows: Sequence[tuple]) -> tuple[list[float], list[tuple]]:
    keep_x, keep_rows = [], []
    for x, row in zip(xs, rows):
        if not keep_x or x > keep_x[-1] + 1e-9:
            keep_x.append(float(x))
            keep_rows.append(row)
    return keep_x, keep_rows


# ── CPHASE family ──────────────────────────────────────────────── #

def find_full_swap(delta: float, model: DeviceModel, *, gate_len: float = CPHASE_LENGTH,
                   pad: float = GATE_PAD, n_coarse: int = 161) -> float:
    """Coupler amplitude completing one |11> <-> |02> cycle at detuning *delta*.

    Raises
    ------
    CalibrationError
        If the sweep shows no full-swap minimum.
    """
    q0 = detuning_to_amplitude(delta, model)
    g_max = 1.2 * (1e3 / gate_len) / math.sqrt(8.0)
    a_max = coupler_amplitude_for_g(-g_max, model)

    def loss(a: float) -> float:
        u = gate_unitary(_pulse(gate_len, (q0, 0.0, a), model, pad), model)
        return 1.0 - float(abs(u[3, 3]) ** 2)

    amps = np.linspace(0.0, a_max, n_coarse)
    values = np.array([loss(a) for a in amps])
    k_max = _first_local_max(values)
    k_min = None if k_max is None else _first_local_min(values, k_max + 1)
    if k_min is None:
        raise CalibrationError(f"no full-swap amplitude found at delta = {delta:.1f} MHz")
    return _refine(loss, amps[k_min - 1], amps[k_min + 1], model)


def calibrate_cphase_family(
    model: DeviceModel,
    *,
    gate_len: float = CPHASE_LENGTH,
    pad: float = GATE_PAD,
    span: Optional[float] = None,
    n_detunings: int = 31,
    n_extension: int = 24,
    workers: int = 1,
) -> CalCurve:
    """Conditional phase versus controls for diabatic |11> <-> |02> swaps.

    Detunings cover ``eta +/- span``; *span* defaults to
    ``CPHASE_SPAN_FRACTION * 1e3 / gate_len`` MHz.  Detunings at the band
    edges without a full swap are dropped.  Past either end of the band
    the coupler amplitude is swept towards zero, which carries the phase
    the rest of the way to 0 and 360 degrees.

    Raises
    ------
    CalibrationError
        If fewer than two detunings around ``eta`` have a full swap.
    """
    if span is None:
        span = CPHASE_SPAN_FRACTION * 1e3 / gate_len
    limit = 1e3 / gate_len
    if span >= limit:
        logger.warning("CPHASE span %.1f MHz reaches the full-swap limit of %.1f MHz", span, limit)
    deltas = np.linspace(model.eta - span, model.eta + span, n_detunings)
    logger.info("CPHASE calibration over %d detunings (eta +/- %.1f MHz)", len(deltas), span)

    def swap_or_none(delta: float) -> Optional[float]:
        try:
            return find_full_swap(delta, model, gate_len=gate_len, pad=pad)
        except CalibrationError as exc:
            logger.debug("%s", exc)
            return None

    found = map_ordered(swap_or_none, deltas, workers)
    centre = int(np.argmin(np.abs(deltas - model.eta)))
    lo = hi = centre
    while lo > 0 and found[lo - 1] is not None:
        lo -= 1
    while hi < len(deltas) - 1 and found[hi + 1] is not None:
        hi += 1
    if found[centre] is None or hi - lo < 1:
        raise CalibrationError(f"no full-swap band around eta = {model.eta:.1f} MHz")
    if hi - lo + 1 < len(deltas):
        logger.warning("CPHASE band trimmed to %.1f .. %.1f MHz; %d detuning(s) had no full swap",
                       deltas[lo], deltas[hi], len(deltas) - (hi - lo + 1))
    deltas = deltas[lo:hi + 1]
    amps = found[lo:hi + 1]

    def phase(delta: float, a: float) -> float:
        q0 = detuning_to_amplitude(delta, model)
        return _conditional_phase_deg(_pulse(gate_len, (q0, 0.0, a), model, pad), model)

    low = [(deltas[0], a) for a in np.linspace(0.0, amps[0], n_extension, endpoint=False)]
    band = list(zip(deltas, amps))
    high = [(deltas[-1], a) for a in np.linspace(amps[-1], 0.0, n_extension + 1)[1:]]
    path = low + band + high
    phis = np.degrees(np.unwrap(np.radians([phase(d, a) for d, a in path])))
    if phis[-1] < phis[0]:
        phis, path = phis[::-1], path[::-1]
    phis = phis - 360.0 * math.floor((phis[0] + 180.0) / 360.0)

    xs, rows = _monotone(phis, path)
    span_deg = xs[-1] - xs[0]
    if span_deg < 359.0:
        logger.warning("CPHASE family covers only %.1f degrees of conditional phase", span_deg)
    return CalCurve(
        "cphase", np.array(xs),
        {"delta": np.array([r[0] for r in rows]), "coupler": np.array([r[1] for r in rows])},
        {"gate_len": gate_len, "pad": pad, "span_deg": span_deg,
         "delta_min": float(deltas[0]), "delta_max": float(deltas[-1])},
    )


def cphase_controls(curve: CalCurve, phi: float, model: DeviceModel) -> tuple[float, float, float]:
    """Pulse amplitudes ``(q0, q1, coupler)`` for conditional phase *phi*."""
    c = curve.controls_for(phi)
    return (detuning_to_amplitude(c["delta"], model), 0.0, _snap(c["coupler"], model))


# ── iSWAP-like family ──────────────────────────────────────────── #

def _maximize_transfer(build: Callable[[float], PulseProgram], lo: float, hi: float,
                       model: DeviceModel) -> float:
    return _refine(lambda a: -_transfer(build(a), model), lo, hi, model)


def calibrate_iswap_family(
    model: DeviceModel,
    *,
    gate_len: float = ISWAP_LENGTH,
    pad: float = GATE_PAD,
    n_fraction: int = 25,
    n_coarse: int = 121,
    detuning_window: float = 20.0,
) -> CalCurve:
    """Calibrate the theta = 90 degree swap, then interpolate towards OFF.

    Three steps: coupler sweep at nominal resonance, q0 bias sweep to
    restore resonance, coupler re-sweep.  The swap angle and the
    accompanying conditional phase are then measured along the line from
    the OFF bias to the 90 degree bias.
    """
    def program(q0: float, a: float) -> PulseProgram:
        return _pulse(gate_len, (q0, 0.0, a), model, pad)

    g_max = 1.5 * 1e3 / (4.0 * gate_len)
    a_max = coupler_amplitude_for_g(-g_max, model)
    q0 = detuning_to_amplitude(0.0, model)

    amps = np.linspace(0.0, a_max, n_coarse)
    transfer = np.array([_transfer(program(q0, a), model) for a in amps])
    k = _first_local_max(transfer)
    if k is None:
        raise CalibrationError("no swap maximum found in the coupler sweep")
    a90 = _maximize_transfer(lambda a: program(q0, a), amps[k - 1], amps[k + 1], model)

    sol = minimize_scalar(lambda d: -_transfer(program(detuning_to_amplitude(d, model), a90), model),
                          bounds=(-detuning_window, detuning_window), method="bounded",
                          options={"xatol": 1e-3})
    q0 = detuning_to_amplitude(float(sol.x), model)

    a90 = _maximize_transfer(lambda a: program(q0, a), 0.9 * a90, 1.1 * a90, model)
    best = _transfer(program(q0, a90), model)
    converged = best >= MIN_TRANSFER
    if not converged:
        logger.warning("iSWAP calibration reached only %.4f transfer", best)
    logger.info("iSWAP: q0 %.6f, coupler %.6f, transfer %.6f", q0, a90, best)

    thetas, rows = [], []
    for f in np.linspace(0.0, 1.0, n_fraction):
        params = measure_fsim(program(q0, _snap(f * a90, model)), model)
        thetas.append(math.degrees(params.theta))
        rows.append((f, _wrap_deg(math.degrees(params.phi))))
    xs, rows = _monotone(thetas, rows)
    return CalCurve(
        "iswap", np.array(xs),
        {"fraction": np.array([r[0] for r in rows]), "phi_iswap": np.array([r[1] for r in rows])},
        {"gate_len": gate_len, "pad": pad, "q0": q0, "coupler_90": a90, "coupler_0": 0.0,
         "transfer": best, "converged": converged},
    )


def quadratic_fit_r2(curve: CalCurve) -> float:
    """R^2 of ``phi_iswap = c theta^2`` over an iSWAP-like curve."""
    x = np.radians(curve.x)
    y = np.radians(curve.columns["phi_iswap"])
    c = float(np.dot(x ** 2, y) / np.dot(x ** 2, x ** 2))
    ss_res = float(np.sum((y - c * x ** 2) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


# ── Registry ───────────────────────────────────────────────────── #

@dataclass
class RegistryEntry:
    """Calibrated composite gate.

    Attributes
    ----------
    theta_target, phi_target : float
        Requested angles, degrees.
    cphase, iswap : tuple[float, float, float]
        ``(q0, q1, coupler)`` amplitudes of the two pulses.
    measured : FsimParams
        Angles from the final tomography.
    residual_theta, residual_phi : float
        Measured minus target, degrees.
    iterations : int
        Closed-loop adjustments made.
    converged : bool
        Both residuals within tolerance.
    timestamp : str
        ISO-8601 time of calibration.
    """

    theta_target: float
    phi_target: float
    cphase: tuple[float, float, float]
    iswap: tuple[float, float, float]
    measured: FsimParams
    residual_theta: float
    residual_phi: float
    iterations: int
    converged: bool
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "theta_target": self.theta_target,
            "phi_target": self.phi_target,
            "cphase": list(self.cphase),
            "iswap": list(self.iswap),
            "measured": self.measured.to_dict(),
            "residual_theta": self.residual_theta,
            "residual_phi": self.residual_phi,
            "iterations": self.iterations,
            "converged": self.converged,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RegistryEntry":
        return cls(
            theta_target=d["theta_target"],
            phi_target=d["phi_target"],
            cphase=tuple(d["cphase"]),
            iswap=tuple(d["iswap"]),
            measured=FsimParams.from_dict(d["measured"]),
            residual_theta=d["residual_theta"],
            residual_phi=d["residual_phi"],
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            timestamp=d["timestamp"],
        )


@dataclass
class GateRegistry:
    entries: list[RegistryEntry] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "meta": self.meta,
                "entries": [e.to_dict() for e in self.entries]}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "GateRegistry":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise RegistryError(f"cannot read registry {path}: {exc}") from exc
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise RegistryError(f"{path}: unsupported registry schema_version {version!r}")
        return cls([RegistryEntry.from_dict(e) for e in data["entries"]],
                   dict(data.get("meta", {})), version)


@dataclass(frozen=True)
class LookupResult:
    entry: RegistryEntry
    off_grid: bool = False


def registry_lookup(registry: GateRegistry, theta: float, phi: float) -> LookupResult:
    """Entry for target ``(theta, phi)`` in degrees, else the nearest one."""
    if not registry.entries:
        raise RegistryError("registry is empty")

    def distance(e: RegistryEntry) -> float:
        return math.hypot(e.theta_target - theta, _wrap_deg(e.phi_target - phi))

    best = min(registry.entries, key=distance)
    if distance(best) < 1e-9:
        return LookupResult(best)
    logger.warning("Target (%.3f, %.3f) not in registry; using (%.3f, %.3f)",
                   theta, phi, best.theta_target, best.phi_target)
    return LookupResult(best, off_grid=True)


def standard_grid() -> list[tuple[float, float]]:
    """25 swap angles (0-90 in 3.75 degree steps) x 21 phases (0-360 in 18 degree steps)."""
    thetas = np.linspace(0.0, 90.0, 25)
    phis = np.linspace(0.0, 360.0, 21)
    return [(float(t), float(p)) for t in thetas for p in phis]


def _check_order(order: str) -> None:
    if order not in COMPOSITE_ORDERS:
        raise ValueError(f"order must be one of {COMPOSITE_ORDERS}, got {order!r}")


def composite_program(cphase: Sequence[float], iswap: Sequence[float], model: DeviceModel,
                      *, cphase_len: float = CPHASE_LENGTH, iswap_len: float = ISWAP_LENGTH,
                      pad: float = GATE_PAD, order: str = "cphase_first") -> PulseProgram:
    """CPHASE pulse and iSWAP-like pulse back to back, in *order*."""
    _check_order(order)
    first = _pulse(cphase_len, tuple(cphase), model, pad)
    second = _pulse(iswap_len, tuple(iswap), model, pad)
    if order == "iswap_first":
        first, second = second, first
    return first.then(second)


def entry_program(entry: RegistryEntry, registry: GateRegistry, model: DeviceModel) -> PulseProgram:
    m = registry.meta
    return composite_program(entry.cphase, entry.iswap, model,
                             cphase_len=m.get("cphase_len", CPHASE_LENGTH),
                             iswap_len=m.get("iswap_len", ISWAP_LENGTH),
                             pad=m.get("pad", GATE_PAD),
                             order=m.get("order", "cphase_first"))


# ── Composite gates ────────────────────────────────────────────── #

class _CompositeCalibrator:
    """Stages 2 and 3 of composite calibration plus the per-target loop."""

    def __init__(self, model: DeviceModel, cphase: CalCurve, iswap: CalCurve, *,
                 stride: float, cphase_len: float, iswap_len: float, pad: float,
                 order: str = "cphase_first") -> None:
        _check_order(order)
        self.model = model
        self.cphase = cphase
        self.iswap = iswap
        self.stride = stride
        self.cphase_len = cphase_len
        self.iswap_len = iswap_len
        self.pad = pad
        self.order = order
        self.q0_iswap = float(iswap.meta["q0"])
        # Values depend only on the key, so concurrent fills agree.
        self._endpoints: dict[float, tuple[float, float]] = {}
        self.theta_curve = self._theta_curve()

    def program(self, phi_c: float, coupler: float) -> PulseProgram:
        return composite_program(cphase_controls(self.cphase, phi_c, self.model),
                                 (self.q0_iswap, 0.0, coupler), self.model,
                                 cphase_len=self.cphase_len, iswap_len=self.iswap_len,
                                 pad=self.pad, order=self.order)

    def endpoints(self, phi_c: float) -> tuple[float, float]:
        """Coupler amplitudes for theta = 0 and 90 inside the composite pulse."""
        key = self.stride * round(_wrap_deg(phi_c) / self.stride)
        if key not in self._endpoints:
            base = float(self.iswap.meta["coupler_90"])
            build = lambda a: self.program(key, a)
            a90 = _maximize_transfer(build, 0.85 * base, 1.15 * base, self.model)
            a0 = _refine(lambda a: _transfer(build(a), self.model), -0.2 * base, 0.2 * base, self.model)
            logger.debug("endpoints at phi_c %.1f: %.6f .. %.6f", key, a0, a90)
            self._endpoints[key] = (a0, a90)
        return self._endpoints[key]

    def coupler_for(self, phi_c: float, fraction: float) -> float:
        a0, a90 = self.endpoints(phi_c)
        return _snap(a0 + fraction * (a90 - a0), self.model)

    def _theta_curve(self, n_fraction: int = 25) -> CalCurve:
        thetas, rows = [], []
        for f in np.linspace(0.0, 1.0, n_fraction):
            params = measure_fsim(self.program(180.0, self.coupler_for(180.0, f)), self.model)
            thetas.append(math.degrees(params.theta))
            rows.append((f, _wrap_deg(math.degrees(params.phi) - 180.0)))
        xs, rows = _monotone(thetas, rows)
        return CalCurve("iswap", np.array(xs),
                        {"fraction": np.array([r[0] for r in rows]),
                         "phi_iswap": np.array([r[1] for r in rows])},
                        {"phi_cphase": 180.0})

    def calibrate(self, theta: float, phi: float, *, max_iterations: int, tolerance: float,
                  measure: Callable[[PulseProgram], FsimParams], timestamp: str) -> RegistryEntry:
        lo, hi = self.theta_curve.domain
        theta_cmd, phi_cmd = min(max(theta, lo), hi), phi
        iterations = 0
        while True:
            c = self.theta_curve.controls_for(theta_cmd)
            phi_c = _wrap_deg(phi_cmd - c["phi_iswap"])
            cphase = cphase_controls(self.cphase, phi_c, self.model)
            iswap = (self.q0_iswap, 0.0, self.coupler_for(phi_c, c["fraction"]))
            measured = measure(self.program(phi_c, iswap[2]))
            d_theta = math.degrees(measured.theta) - theta
            d_phi = _wrap_deg(math.degrees(measured.phi) - phi)
            converged = abs(d_theta) <= tolerance and abs(d_phi) <= tolerance
            if converged or iterations >= max_iterations:
                break
            if abs(d_theta) > tolerance:
                theta_cmd = min(max(theta_cmd - math.copysign(1.0, d_theta), lo), hi)
            if abs(d_phi) > tolerance:
                phi_cmd -= math.copysign(1.0, d_phi)
            iterations += 1
        if not converged:
            logger.warning("Target (%.2f, %.2f) unconverged after %d adjustments "
                           "(residuals %.2f, %.2f)", theta, phi, iterations, d_theta, d_phi)
        return RegistryEntry(theta, phi, cphase, iswap, measured, d_theta, d_phi,
                             iterations, converged, timestamp)


def calibrate_composite_fsim(
    targets: Sequence[tuple[float, float]],
    model: DeviceModel,
    *,
    cphase: Optional[CalCurve] = None,
    iswap: Optional[CalCurve] = None,
    stride: float = 1.0,
    max_iterations: int = MAX_ITERATIONS,
    tolerance: float = ANGLE_TOLERANCE,
    shots: Optional[int] = None,
    seed: Optional[int] = None,
    noise: bool = False,
    timestamp: Optional[str] = None,
    order: str = "cphase_first",
    workers: int = 1,
) -> GateRegistry:
    """Calibrate a composite fSim gate for every ``(theta, phi)`` target.

    Parameters
    ----------
    cphase, iswap : CalCurve, optional
        Component families; calibrated here when omitted.
    stride : float
        CPHASE phase granularity (degrees) at which the iSWAP endpoint
        amplitudes are re-found.
    shots, seed, noise
        Passed to the tomography of each iteration.  Target ``k`` draws
        from ``derive_rng(seed, k)``.
    timestamp : str, optional
        Recorded on every entry; defaults to :func:`default_timestamp`.
    order : str
        ``cphase_first`` or ``iswap_first``.
    workers : int
        Threads for the CPHASE family and for the per-target loop.
    """
    if not targets:
        raise ValueError("targets must be non-empty")
    _check_order(order)
    cphase = cphase or calibrate_cphase_family(model, workers=workers)
    iswap = iswap or calibrate_iswap_family(model)
    stamp = timestamp or default_timestamp()
    cal = _CompositeCalibrator(model, cphase, iswap, stride=stride,
                               cphase_len=float(cphase.meta.get("gate_len", CPHASE_LENGTH)),
                               iswap_len=float(iswap.meta.get("gate_len", ISWAP_LENGTH)),
                               pad=float(iswap.meta.get("pad", GATE_PAD)), order=order)

    def one(item: tuple[int, tuple[float, float]]) -> RegistryEntry:
        k, (theta, phi) = item
        rng = derive_rng(seed, k) if shots is not None else None
        entry = cal.calibrate(
            float(theta), float(phi), max_iterations=max_iterations, tolerance=tolerance,
            measure=lambda p: measure_fsim(p, model, shots=shots, seed=rng, noise=noise),
            timestamp=stamp)
        if (k + 1) % 25 == 0:
            logger.info("Calibrated target %d / %d", k + 1, len(targets))
        return entry

    entries = map_ordered(one, list(enumerate(targets)), workers)
    n_ok = sum(e.converged for e in entries)
    logger.info("%d of %d composite gates converged", n_ok, len(entries))
    meta = {"cphase_len": cal.cphase_len, "iswap_len": cal.iswap_len, "pad": cal.pad,
            "stride": stride, "max_iterations": max_iterations, "tolerance": tolerance,
            "order": order}
    return GateRegistry(entries, meta)


def convergence_csv(registry: GateRegistry, path: str | Path,
                    extra: Optional[Mapping[str, object]] = None) -> Path:
    """One row per entry: targets, measured angles, residuals, iterations."""
    extra = dict(extra or {})
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta_target", "phi_target", "theta_measured", "phi_measured",
                         "residual_theta", "residual_phi", "iterations", "converged", *extra])
        for e in registry.entries:
            writer.writerow([repr(e.theta_target), repr(e.phi_target),
                             repr(math.degrees(e.measured.theta)), repr(math.degrees(e.measured.phi)),
                             repr(e.residual_theta), repr(e.residual_phi), e.iterations,
                             int(e.converged), *extra.values()])
    return path
