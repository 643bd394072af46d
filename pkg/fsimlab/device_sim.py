"""
device_sim.py
=============
Simulated two-qutrit gmon device.

Conventions
-----------
* Qubit frequencies in GHz; couplings, detunings and nonlinearity in MHz;
  time in ns; T1 and Tphi in µs.
* A Hamiltonian ``H`` in MHz evolves as ``exp(-i 2pi H dt 1e-3)``.
* Basis ``|ab>`` (``a`` = q0 level, ``b`` = q1 level) has index ``3a + b``.
  The excitation-preserving block uses ``|01>, |10>, |11>, |20>, |02>``.
* ``delta = 1000 (f_q0 - f_q1)`` MHz.

Two frames are supported.  ``"shared"`` is the frame of the block
Hamiltonian: both qutrits co-rotate with q1's instantaneous frequency.
``"idle"`` rotates each qubit at its own idle frequency, which is the
frame single-qubit gates and readout live in.

Flux waveforms are amplitudes relative to the idle biases; the coupler
idles at its zero-coupling bias.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy.linalg import expm
from scipy.optimize import brentq
from scipy.signal.windows import gaussian

from fsimlab.pulse_engine import (
    SETTLING_Q2,
    SETTLING_Q3,
    SettlingModel,
    Waveform,
    apply_settling,
    average_settling,
    predistort,
    quantize,
)

logger = logging.getLogger(__name__)

DIM = 9
#: Indices of ``|00>, |01>, |10>, |11>`` in the two-qutrit basis.
COMPUTATIONAL = (0, 1, 3, 4)
#: Level pairs ``(a, b)`` of the excitation-preserving block.
BLOCK_LEVELS = ((0, 1), (1, 0), (1, 1), (2, 0), (0, 2))
SHAPES = ("rectangular", "smoothed", "cosine")
FRAMES = ("shared", "idle")

#: Default single-qubit Pauli error of the depolarizing gate channel.
DEFAULT_SINGLE_QUBIT_ERROR = 7.5e-4
#: Distance kept from the coupler divergence, in flux quanta.
COUPLER_GUARD = 0.01

_TWO_PI_MHZ_NS = 2.0 * math.pi * 1e-3
_LEVEL_A = np.repeat(np.arange(3), 3)
_LEVEL_B = np.tile(np.arange(3), 3)


# ── Coupler ────────────────────────────────────────────────────── #

def _coupler_phase(bias: float, ratio: float) -> float:
    """Solve ``delta + ratio * sin(delta) = 2 pi bias`` for ``delta``."""
    target = 2.0 * math.pi * bias
    return brentq(lambda d: d + ratio * math.sin(d) - target, -math.pi, math.pi, xtol=1e-15)


@dataclass(frozen=True)
class CouplerModel:
    """Flux-tunable inductive coupler.

    ``g(bias) = g_direct + g_tunable * cos(d) / (cos(d) + ratio)`` with the
    junction phase ``d`` solving ``d + ratio * sin(d) = 2 pi bias``.
    Coupling is positive at zero bias, crosses zero once at
    :attr:`off_bias` and diverges towards :attr:`divergence_bias`.

    Attributes
    ----------
    g_direct : float
        Bias-independent coupling in MHz.
    g_tunable : float
        Inductive coupling scale in MHz.
    junction_ratio : float
        Coupler junction participation ratio, in (0, 1).
    """

    g_direct: float
    g_tunable: float
    junction_ratio: float = 0.9
    off_bias: float = field(init=False)
    divergence_bias: float = field(init=False)

    def __post_init__(self) -> None:
        ratio = self.junction_ratio
        if not 0.0 < ratio < 1.0:
            raise ValueError(f"junction_ratio must lie in (0, 1), got {ratio}")
        if self.g_tunable <= 0:
            raise ValueError(f"g_tunable must be positive, got {self.g_tunable}")
        d_star = math.acos(-ratio)
        divergence = (d_star + ratio * math.sin(d_star)) / (2.0 * math.pi)
        object.__setattr__(self, "divergence_bias", divergence)
        lo, hi = self._g_scalar(0.0), self._g_scalar(divergence - COUPLER_GUARD)
        if not lo > 0.0 > hi:
            raise ValueError(
                f"coupling must change sign on [0, {divergence - COUPLER_GUARD:.4f}] "
                f"(g = {lo:.3f} .. {hi:.3f} MHz)")
        off = brentq(self._g_scalar, 0.0, divergence - COUPLER_GUARD, xtol=1e-14)
        object.__setattr__(self, "off_bias", off)

    @classmethod
    def from_anchors(
        cls,
        g_zero: float = 6.0,
        g_anchor: float = -50.0,
        anchor_bias: float = 0.45,
        junction_ratio: float = 0.9,
    ) -> "CouplerModel":
        """Solve for ``g_direct`` and ``g_tunable`` from two measured couplings."""
        h0 = 1.0 / (1.0 + junction_ratio)
        c = math.cos(_coupler_phase(anchor_bias, junction_ratio))
        if c + junction_ratio <= 0:
            raise ValueError(f"anchor_bias {anchor_bias} lies beyond the coupler divergence")
        ha = c / (c + junction_ratio)
        g_tunable = (g_zero - g_anchor) / (h0 - ha)
        return cls(g_direct=g_zero - g_tunable * h0, g_tunable=g_tunable,
                   junction_ratio=junction_ratio)

    @property
    def guard_bias(self) -> float:
        return self.divergence_bias - COUPLER_GUARD

    def _g_scalar(self, bias: float) -> float:
        c = math.cos(_coupler_phase(bias, self.junction_ratio))
        return self.g_direct + self.g_tunable * c / (c + self.junction_ratio)

    def g(self, bias: npt.ArrayLike) -> float | npt.NDArray[np.float64]:
        """Coupling in MHz; *bias* may be an array."""
        b = np.asarray(bias, dtype=float)
        if np.any(np.abs(b) > self.guard_bias):
            raise ValueError(
                f"coupler bias {np.max(np.abs(b)):.4f} outside guard band ±{self.guard_bias:.4f}")
        uniq, inverse = np.unique(b, return_inverse=True)
        values = np.array([self._g_scalar(float(v)) for v in uniq])[inverse].reshape(b.shape)
        return float(values) if values.ndim == 0 else values

    def bias_for_g(self, g_target: float) -> float:
        """Non-negative bias at which the coupling equals *g_target*."""
        lo, hi = self._g_scalar(0.0), self._g_scalar(self.guard_bias)
        if not hi <= g_target <= lo:
            raise ValueError(f"g = {g_target} MHz outside reachable range [{hi:.2f}, {lo:.2f}]")
        if g_target == lo:
            return 0.0
        return brentq(lambda b: self._g_scalar(b) - g_target, 0.0, self.guard_bias, xtol=1e-14)

    def to_dict(self) -> dict:
        return {"g_direct": self.g_direct, "g_tunable": self.g_tunable,
                "junction_ratio": self.junction_ratio}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CouplerModel":
        if "anchors" in d:
            return cls.from_anchors(**{k: float(v) for k, v in d["anchors"].items()})
        return cls(float(d["g_direct"]), float(d["g_tunable"]), float(d.get("junction_ratio", 0.9)))


DEFAULT_COUPLER = CouplerModel.from_anchors()
SETTLING_COUPLER = average_settling(SETTLING_Q2, SETTLING_Q3)
IDEAL_READOUT = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


# ── Device model ───────────────────────────────────────────────── #

@dataclass(frozen=True)
class TlsDip:
    """Lorentzian enhancement of the relaxation rate near a defect.

    Attributes
    ----------
    center : float
        Defect frequency in GHz.
    width : float
        Full width at half maximum in MHz.
    t1_dip : float
        Extra relaxation time at the centre, in µs.
    """

    center: float
    width: float
    t1_dip: float

    def __post_init__(self) -> None:
        if self.width <= 0 or self.t1_dip <= 0:
            raise ValueError("TLS width and t1_dip must be positive")

    def rate(self, freq: float) -> float:
        """Additional relaxation rate (1/µs) at *freq* GHz."""
        x = 2.0 * (freq - self.center) * 1e3 / self.width
        return 1.0 / (self.t1_dip * (1.0 + x * x))


@dataclass(frozen=True)
class DeviceModel:
    """Configuration of the simulated device.

    All fields have defaults reproducing the reference device; override
    only what you need.

    Attributes
    ----------
    eta : float
        Nonlinearity of both qubits, MHz.
    f_max_q0, f_max_q1 : float
        Maximum (zero-bias) qubit frequencies, GHz.
    idle_f_q0, idle_f_q1 : float
        Idle frequencies, GHz.
    coupler : CouplerModel
        Bias-to-coupling transfer function.
    t1 : float
        Energy relaxation time, µs.
    t_phi : float or None
        Pure dephasing time, µs.  ``None`` disables dephasing.
    tls : TlsDip or None
        Optional relaxation hot spot.
    single_qubit_error : float
        Pauli error of the depolarizing channel after each single-qubit gate.
    readout_q0, readout_q1 : tuple
        3x3 confusion matrices, row = prepared level, column = reported level.
    dac_bits : int or None
        DAC resolution; ``None`` disables quantisation.
    sample_rate : float
        AWG sample rate, GS/s.
    settling_q0, settling_q1, settling_coupler : SettlingModel or None
        Flux-line settling per channel; ``None`` for an ideal line.
    predistort : bool
        Pre-distort waveforms with the settling models before the DAC.
    """

    # ── Qubits ──────────────────────────────────────────────────── #
    eta: float = 240.0
    f_max_q0: float = 6.8
    f_max_q1: float = 6.9
    idle_f_q0: float = 6.0
    idle_f_q1: float = 6.1

    # ── Coupler ─────────────────────────────────────────────────── #
    coupler: CouplerModel = DEFAULT_COUPLER

    # ── Decoherence ─────────────────────────────────────────────── #
    t1: float = 25.3
    t_phi: Optional[float] = 10.0
    tls: Optional[TlsDip] = None
    single_qubit_error: float = DEFAULT_SINGLE_QUBIT_ERROR

    # ── Readout ─────────────────────────────────────────────────── #
    readout_q0: tuple = IDEAL_READOUT
    readout_q1: tuple = IDEAL_READOUT

    # ── Control electronics ─────────────────────────────────────── #
    dac_bits: Optional[int] = 14
    sample_rate: float = 1.0
    settling_q0: Optional[SettlingModel] = SETTLING_Q2
    settling_q1: Optional[SettlingModel] = SETTLING_Q3
    settling_coupler: Optional[SettlingModel] = SETTLING_COUPLER
    predistort: bool = False

    def __post_init__(self) -> None:
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.t1 <= 0:
            raise ValueError(f"t1 must be positive, got {self.t1}")
        if self.t_phi is not None and self.t_phi <= 0:
            raise ValueError(f"t_phi must be positive or None, got {self.t_phi}")
        if self.dac_bits is not None and self.dac_bits < 2:
            raise ValueError(f"dac_bits must be >= 2, got {self.dac_bits}")
        if not 0.0 <= self.single_qubit_error < 1.0:
            raise ValueError(f"single_qubit_error must lie in [0, 1), got {self.single_qubit_error}")
        for which in (0, 1):
            if not 0.0 < self.idle_freq(which) <= self.f_max(which):
                raise ValueError(f"idle frequency of q{which} must lie in (0, f_max]")
        for name in ("readout_q0", "readout_q1"):
            mat = np.asarray(getattr(self, name), dtype=float)
            if mat.shape != (3, 3):
                raise ValueError(f"{name} must be 3x3, got shape {mat.shape}")
            if np.any(mat < 0) or not np.allclose(mat.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError(f"{name} rows must be probability vectors")
            object.__setattr__(self, name, tuple(tuple(float(v) for v in row) for row in mat))

    # ── Accessors ───────────────────────────────────────────────── #
    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    def f_max(self, which: int) -> float:
        return (self.f_max_q0, self.f_max_q1)[which]

    def idle_freq(self, which: int) -> float:
        return (self.idle_f_q0, self.idle_f_q1)[which]

    def idle_bias(self, which: int) -> float:
        return freq_to_bias(self.idle_freq(which), self, which)

    def readout(self, which: int) -> npt.NDArray[np.float64]:
        return np.array((self.readout_q0, self.readout_q1)[which])

    def settling(self, channel: str) -> Optional[SettlingModel]:
        return {"q0": self.settling_q0, "q1": self.settling_q1,
                "coupler": self.settling_coupler}[channel]

    def relaxation_rate(self, freq: float) -> float:
        """Relaxation rate of the 0-1 transition at *freq*, in 1/µs."""
        rate = 1.0 / self.t1
        if self.tls is not None:
            rate += self.tls.rate(freq)
        return rate

    def without_distortion(self) -> "DeviceModel":
        """Copy with ideal flux lines and an unquantised DAC."""
        return replace(self, settling_q0=None, settling_q1=None,
                       settling_coupler=None, dac_bits=None)

    # ── Serialisation ───────────────────────────────────────────── #
    def to_dict(self) -> dict:
        def settle(m: Optional[SettlingModel]) -> Optional[dict]:
            return None if m is None else m.to_dict()

        return {
            "eta": self.eta,
            "f_max_q0": self.f_max_q0,
            "f_max_q1": self.f_max_q1,
            "idle_f_q0": self.idle_f_q0,
            "idle_f_q1": self.idle_f_q1,
            "coupler": self.coupler.to_dict(),
            "t1": self.t1,
            "t_phi": self.t_phi,
            "tls": None if self.tls is None else
            {"center": self.tls.center, "width": self.tls.width, "t1_dip": self.tls.t1_dip},
            "single_qubit_error": self.single_qubit_error,
            "readout_q0": [list(r) for r in self.readout_q0],
            "readout_q1": [list(r) for r in self.readout_q1],
            "dac_bits": self.dac_bits,
            "sample_rate": self.sample_rate,
            "settling_q0": settle(self.settling_q0),
            "settling_q1": settle(self.settling_q1),
            "settling_coupler": settle(self.settling_coupler),
            "predistort": self.predistort,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DeviceModel":
        kwargs = dict(d)
        if "coupler" in kwargs:
            kwargs["coupler"] = CouplerModel.from_dict(kwargs["coupler"])
        if kwargs.get("tls") is not None:
            kwargs["tls"] = TlsDip(**kwargs["tls"])
        for name in ("settling_q0", "settling_q1", "settling_coupler"):
            if kwargs.get(name) is not None:
                kwargs[name] = SettlingModel.from_dict(kwargs[name])
        for name in ("readout_q0", "readout_q1"):
            if name in kwargs:
                kwargs[name] = tuple(tuple(r) for r in kwargs[name])
        unknown = set(kwargs) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown device fields: {sorted(unknown)}")
        return cls(**kwargs)


# ── Transfer functions ─────────────────────────────────────────── #

def qubit_freq(bias: npt.ArrayLike, model: DeviceModel, which: int) -> float | npt.NDArray[np.float64]:
    """Transmon frequency (GHz) at flux *bias*."""
    b = np.asarray(bias, dtype=float)
    if np.any(np.abs(b) >= 0.5):
        raise ValueError(f"qubit bias must satisfy |bias| < 0.5, got {np.max(np.abs(b)):.4f}")
    e = model.eta * 1e-3
    f = (model.f_max(which) + e) * np.sqrt(np.abs(np.cos(np.pi * b))) - e
    return float(f) if f.ndim == 0 else f


def freq_to_bias(freq: float, model: DeviceModel, which: int) -> float:
    """Non-negative bias at which qubit *which* sits at *freq* GHz."""
    e = model.eta * 1e-3
    ratio = ((freq + e) / (model.f_max(which) + e)) ** 2
    if not 0.0 < ratio <= 1.0 or freq + e <= 0:
        raise ValueError(f"frequency {freq} GHz is not reachable by q{which}")
    return math.acos(ratio) / math.pi


def coupler_g(bias: npt.ArrayLike, model: DeviceModel) -> float | npt.NDArray[np.float64]:
    """Qubit-qubit coupling (MHz) at coupler *bias*."""
    return model.coupler.g(bias)


def detuning_to_amplitude(delta: float, model: DeviceModel) -> float:
    """q0 flux amplitude placing it *delta* MHz from an idling q1."""
    target = model.idle_f_q1 + delta * 1e-3
    return freq_to_bias(target, model, 0) - model.idle_bias(0)


def coupler_amplitude_for_g(g: float, model: DeviceModel) -> float:
    """Coupler amplitude (relative to the off bias) giving coupling *g* MHz."""
    return model.coupler.bias_for_g(g) - model.coupler.off_bias


def idle_phase_difference(model: DeviceModel, t_gate: float) -> float:
    """Phase (rad) accumulated between the two idle frames over *t_gate* ns."""
    return 2.0 * math.pi * (model.idle_f_q1 - model.idle_f_q0) * t_gate


# ── Hamiltonians ───────────────────────────────────────────────── #

@dataclass(frozen=True, eq=False)
class HamiltonianBlock:
    """Excitation-preserving 5x5 Hamiltonian (MHz)."""

    matrix: npt.NDArray[np.float64]
    g: float
    delta: float
    eta: float


def _block_matrices(delta: npt.NDArray, g: npt.NDArray, eta: float) -> npt.NDArray[np.float64]:
    n = len(delta)
    h = np.zeros((n, 5, 5))
    s2g = math.sqrt(2.0) * g
    h[:, 0, 1] = h[:, 1, 0] = g
    h[:, 1, 1] = delta
    h[:, 2, 2] = delta
    h[:, 3, 3] = 2.0 * delta + eta
    h[:, 4, 4] = eta
    h[:, 2, 3] = h[:, 3, 2] = s2g
    h[:, 2, 4] = h[:, 4, 2] = s2g
    return h


def hamiltonian_block(g: float, delta: float, eta: float) -> HamiltonianBlock:
    """Block Hamiltonian in the basis ``|01>, |10>, |11>, |20>, |02>``."""
    for name, v in (("g", g), ("delta", delta), ("eta", eta)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v}")
    h = _block_matrices(np.array([delta], float), np.array([g], float), eta)[0]
    return HamiltonianBlock(h, g, delta, eta)


_LOWER = np.diag([1.0, math.sqrt(2.0)], k=1)
_EYE3 = np.eye(3)
_A0 = np.kron(_LOWER, _EYE3)
_A1 = np.kron(_EYE3, _LOWER)
_HOP = _A0.T @ _A1 + _A1.T @ _A0


def _qutrit_matrices(delta: npt.NDArray, g: npt.NDArray, eta: float) -> npt.NDArray[np.float64]:
    a, b = _LEVEL_A, _LEVEL_B
    anharm = 0.5 * eta * (a * (a - 1) + b * (b - 1))
    h = np.zeros((len(delta), DIM, DIM))
    idx = np.arange(DIM)
    h[:, idx, idx] = delta[:, None] * a[None, :] + anharm[None, :]
    h += g[:, None, None] * _HOP[None, :, :]
    return h


# ── Propagation ────────────────────────────────────────────────── #

def _runs(*arrays: npt.NDArray) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.int64]]:
    """Start indices and lengths of runs where all *arrays* are constant."""
    n = len(arrays[0])
    change = np.zeros(n, dtype=bool)
    change[0] = True
    for arr in arrays:
        change[1:] |= arr[1:] != arr[:-1]
    starts = np.flatnonzero(change)
    return starts, np.diff(np.append(starts, n))


def _ordered_product(stack: npt.NDArray[np.complex128]) -> npt.NDArray[np.complex128]:
    total = np.eye(stack.shape[-1], dtype=complex)
    for u in stack:
        total = u @ total
    return total


def _propagators(h: npt.NDArray[np.float64], durations: npt.NDArray) -> npt.NDArray[np.complex128]:
    w, v = np.linalg.eigh(h)
    phases = np.exp(-1j * _TWO_PI_MHZ_NS * w * durations[:, None])
    return (v * phases[:, None, :]) @ v.conj().transpose(0, 2, 1)


def block_propagator(delta: npt.ArrayLike, g: npt.ArrayLike, eta: float, dt: float) -> npt.NDArray[np.complex128]:
    """Time-ordered 5x5 propagator for per-sample ``delta`` and ``g`` (MHz)."""
    delta, g = (np.atleast_1d(np.asarray(x, dtype=float)) for x in np.broadcast_arrays(delta, g))
    starts, lengths = _runs(delta, g)
    stack = _propagators(_block_matrices(delta[starts], g[starts], eta), lengths * dt)
    return _ordered_product(stack)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Per-sample qubit frequencies (GHz), detuning and coupling (MHz)."""

    f0: npt.NDArray[np.float64]
    f1: npt.NDArray[np.float64]
    g: npt.NDArray[np.float64]
    dt: float

    @property
    def delta(self) -> npt.NDArray[np.float64]:
        return 1e3 * (self.f0 - self.f1)

    @property
    def duration(self) -> float:
        return len(self.f0) * self.dt


def trajectory(program: "PulseProgram", model: DeviceModel) -> Trajectory:
    """Convert flux waveforms into frequencies and coupling."""
    f0 = qubit_freq(model.idle_bias(0) + program.q0, model, 0)
    f1 = qubit_freq(model.idle_bias(1) + program.q1, model, 1)
    g = coupler_g(model.coupler.off_bias + program.coupler, model)
    return Trajectory(np.atleast_1d(f0), np.atleast_1d(f1), np.atleast_1d(g), 1.0 / program.sample_rate)


def _frame_phases(traj: Trajectory, model: DeviceModel,
                  levels: Sequence[tuple[int, int]]) -> npt.NDArray[np.complex128]:
    """Diagonal taking shared-frame amplitudes on *levels* into the idle frame."""
    t = traj.duration
    idle_detuning = model.idle_f_q0 - model.idle_f_q1
    phi1 = float(np.sum(traj.f1 - model.idle_f_q1) * traj.dt)
    a = np.array([lv[0] for lv in levels], dtype=float)
    b = np.array([lv[1] for lv in levels], dtype=float)
    return np.exp(2j * math.pi * (a * idle_detuning * t - (a + b) * phi1))


def _check_frame(frame: str) -> None:
    if frame not in FRAMES:
        raise ValueError(f"frame must be one of {FRAMES}, got {frame!r}")


def evolve_block(program: "PulseProgram", model: DeviceModel, *, frame: str = "shared") -> npt.NDArray[np.complex128]:
    """5x5 propagator of *program* (already realised through the flux lines)."""
    _check_frame(frame)
    traj = trajectory(program, model)
    u = block_propagator(traj.delta, traj.g, model.eta, traj.dt)
    if frame == "idle":
        u = _frame_phases(traj, model, BLOCK_LEVELS)[:, None] * u
    return u


def block_to_computational(u_block: npt.NDArray[np.complex128]) -> npt.NDArray[np.complex128]:
    """Embed the block propagator's computational part into a 4x4 matrix."""
    u = np.zeros((4, 4), dtype=complex)
    u[0, 0] = 1.0
    u[1:3, 1:3] = u_block[:2, :2]
    u[3, 3] = u_block[2, 2]
    return u


def evolve_unitary(program: "PulseProgram", model: DeviceModel, *, frame: str = "shared") -> npt.NDArray[np.complex128]:
    """9x9 noiseless propagator of *program*."""
    _check_frame(frame)
    traj = trajectory(program, model)
    delta = traj.delta
    starts, lengths = _runs(delta, traj.g)
    stack = _propagators(_qutrit_matrices(delta[starts], traj.g[starts], model.eta), lengths * traj.dt)
    u = _ordered_product(stack)
    if frame == "idle":
        u = _frame_phases(traj, model, list(zip(_LEVEL_A, _LEVEL_B)))[:, None] * u
    return u


# ── Superoperators ─────────────────────────────────────────────── #

_EYE9 = np.eye(DIM)


def unitary_superoperator(u: npt.NDArray[np.complex128]) -> npt.NDArray[np.complex128]:
    """Row-major superoperator of ``rho -> U rho U^dag``."""
    return np.kron(u, u.conj())


def _kraus_superoperator(kraus: Sequence[npt.NDArray[np.complex128]]) -> npt.NDArray[np.complex128]:
    return sum(np.kron(k, k.conj()) for k in kraus)


def _lindblad(h: npt.NDArray[np.float64], jumps: Sequence[npt.NDArray[np.float64]]) -> npt.NDArray[np.complex128]:
    gen = -1j * _TWO_PI_MHZ_NS * (np.kron(h, _EYE9) - np.kron(_EYE9, h.T))
    for op in jumps:
        ldl = op.conj().T @ op
        gen = gen + np.kron(op, op.conj()) - 0.5 * (np.kron(ldl, _EYE9) + np.kron(_EYE9, ldl.T))
    return gen


def _noisy_superoperator(traj: Trajectory, model: DeviceModel) -> npt.NDArray[np.complex128]:
    delta = traj.delta
    starts, lengths = _runs(traj.f0, traj.f1, traj.g)
    dephase = [] if model.t_phi is None else [
        math.sqrt(2.0 / (model.t_phi * 1e3)) * (_A0.T @ _A0),
        math.sqrt(2.0 / (model.t_phi * 1e3)) * (_A1.T @ _A1),
    ]
    cache: dict[tuple[float, float, float, int], npt.NDArray[np.complex128]] = {}
    total = np.eye(DIM * DIM, dtype=complex)
    for s, n in zip(starts, lengths):
        key = (float(traj.f0[s]), float(traj.f1[s]), float(traj.g[s]), int(n))
        step = cache.get(key)
        if step is None:
            h = _qutrit_matrices(delta[s:s + 1], traj.g[s:s + 1], model.eta)[0]
            jumps = [
                math.sqrt(model.relaxation_rate(traj.f0[s]) * 1e-3) * _A0,
                math.sqrt(model.relaxation_rate(traj.f1[s]) * 1e-3) * _A1,
                *dephase,
            ]
            step = expm(_lindblad(h, jumps) * (n * traj.dt))
            cache[key] = step
        total = step @ total
    return total


@dataclass(frozen=True, eq=False)
class GateChannel:
    """Completely positive map on the two-qutrit density matrix.

    ``matrix`` acts on row-major vectorised 9x9 density matrices.
    """

    matrix: npt.NDArray[np.complex128]
    label: str = ""

    def apply(self, rho: npt.NDArray[np.complex128]) -> npt.NDArray[np.complex128]:
        return (self.matrix @ np.asarray(rho).reshape(-1)).reshape(DIM, DIM)

    def then(self, other: "GateChannel") -> "GateChannel":
        """This channel followed by *other*."""
        return GateChannel(other.matrix @ self.matrix, f"{self.label}>{other.label}")

    def computational_block(self) -> npt.NDArray[np.complex128]:
        idx = [i * DIM + j for i in COMPUTATIONAL for j in COMPUTATIONAL]
        return self.matrix[np.ix_(idx, idx)]

    def pauli_error(self, target: npt.NDArray[np.complex128]) -> float:
        """Process infidelity against the 4x4 unitary *target*."""
        s_target = unitary_superoperator(np.asarray(target, dtype=complex))
        fidelity = np.real(np.trace(s_target.conj().T @ self.computational_block())) / 16.0
        return float(1.0 - fidelity)

    def leakage(self) -> float:
        """Average population leaving the computational subspace."""
        out = 0.0
        for i in COMPUTATIONAL:
            rho = np.zeros((DIM, DIM), dtype=complex)
            rho[i, i] = 1.0
            pops = np.real(np.diag(self.apply(rho)))
            out += 1.0 - float(np.sum(pops[list(COMPUTATIONAL)]))
        return out / 4.0


def gate_channel(program: "PulseProgram", model: DeviceModel, *, noise: bool = True,
                 frame: str = "idle") -> GateChannel:
    """Channel implemented by *program* (already realised through the lines)."""
    _check_frame(frame)
    if not noise:
        return GateChannel(unitary_superoperator(evolve_unitary(program, model, frame=frame)), "pulse")
    traj = trajectory(program, model)
    sup = _noisy_superoperator(traj, model)
    if frame == "idle":
        f = _frame_phases(traj, model, list(zip(_LEVEL_A, _LEVEL_B)))
        sup = np.kron(np.diag(f), np.diag(f.conj())) @ sup
    return GateChannel(sup, "pulse")


def embed_unitary(u4: npt.NDArray[np.complex128]) -> npt.NDArray[np.complex128]:
    """Extend a computational unitary by the identity on leaked levels."""
    u = np.eye(DIM, dtype=complex)
    u[np.ix_(COMPUTATIONAL, COMPUTATIONAL)] = u4
    return u


def unitary_channel(u4: npt.NDArray[np.complex128], label: str = "unitary") -> GateChannel:
    return GateChannel(unitary_superoperator(embed_unitary(np.asarray(u4, dtype=complex))), label)


# ── Single-qubit gates ─────────────────────────────────────────── #

_PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
_PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _rotation(axis: Sequence[float], angle: float) -> npt.NDArray[np.complex128]:
    nx, ny, nz = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    return (math.cos(angle / 2) * np.eye(2)
            - 1j * math.sin(angle / 2) * (nx * _PAULI_X + ny * _PAULI_Y + nz * _PAULI_Z))


_HALF = math.pi / 2
GATES: dict[str, npt.NDArray[np.complex128]] = {
    "I": np.eye(2, dtype=complex),
    "X": _rotation((1, 0, 0), math.pi),
    "Y": _rotation((0, 1, 0), math.pi),
    "X/2": _rotation((1, 0, 0), _HALF),
    "-X/2": _rotation((1, 0, 0), -_HALF),
    "Y/2": _rotation((0, 1, 0), _HALF),
    "-Y/2": _rotation((0, 1, 0), -_HALF),
    "X/2+Y/2": _rotation((1, 1, 0), _HALF),
    "X/2-Y/2": _rotation((1, -1, 0), _HALF),
    "-X/2+Y/2": _rotation((-1, 1, 0), _HALF),
    "-X/2-Y/2": _rotation((-1, -1, 0), _HALF),
}
#: Single-qubit gate set drawn from in random circuits.
XEB_GATES = ("X/2", "Y/2", "X/2+Y/2", "X/2-Y/2", "-X/2+Y/2", "-X/2-Y/2")


def phase_gate(z: float) -> npt.NDArray[np.complex128]:
    """Diagonal ``diag(1, exp(iz))``."""
    return np.diag([1.0, np.exp(1j * z)])


def gate_matrix(gate: str | npt.NDArray[np.complex128]) -> npt.NDArray[np.complex128]:
    if isinstance(gate, str):
        try:
            return GATES[gate]
        except KeyError:
            raise ValueError(f"unknown gate {gate!r}; expected one of {sorted(GATES)}") from None
    mat = np.asarray(gate, dtype=complex)
    if mat.shape != (2, 2):
        raise ValueError(f"single-qubit gate must be 2x2, got shape {mat.shape}")
    return mat


def _embed_qutrit(u2: npt.NDArray[np.complex128]) -> npt.NDArray[np.complex128]:
    u = np.eye(3, dtype=complex)
    u[:2, :2] = u2
    return u


def _on_qubit(op3: npt.NDArray[np.complex128], which: int) -> npt.NDArray[np.complex128]:
    if which not in (0, 1):
        raise ValueError(f"qubit index must be 0 or 1, got {which}")
    return np.kron(op3, _EYE3) if which == 0 else np.kron(_EYE3, op3)


def _single_qubit_kraus(gate: str | npt.NDArray, which: int, pauli_error: float) -> list[npt.NDArray[np.complex128]]:
    u = _on_qubit(_embed_qutrit(gate_matrix(gate)), which)
    if pauli_error <= 0:
        return [u]
    kraus = [math.sqrt(1.0 - pauli_error) * u]
    for p in (_PAULI_X, _PAULI_Y, _PAULI_Z):
        kraus.append(math.sqrt(pauli_error / 3.0) * _on_qubit(_embed_qutrit(p), which) @ u)
    return kraus


def apply_single_qubit_gate(
    rho: npt.NDArray[np.complex128],
    which: int,
    gate: str | npt.NDArray[np.complex128],
    *,
    pauli_error: float = DEFAULT_SINGLE_QUBIT_ERROR,
) -> npt.NDArray[np.complex128]:
    """Apply an ideal qubit rotation (identity on ``|2>``) and its error channel."""
    if not 0.0 <= pauli_error <= 1.0:
        raise ValueError(f"pauli_error must lie in [0, 1], got {pauli_error}")
    return sum(k @ rho @ k.conj().T for k in _single_qubit_kraus(gate, which, pauli_error))


def single_qubit_channel(gate: str | npt.NDArray, which: int,
                         pauli_error: float = DEFAULT_SINGLE_QUBIT_ERROR) -> GateChannel:
    label = gate if isinstance(gate, str) else "u"
    return GateChannel(_kraus_superoperator(_single_qubit_kraus(gate, which, pauli_error)),
                       f"{label}@q{which}")


_TWO_QUBIT_PAULIS = [
    np.kron(_embed_qutrit(p), _embed_qutrit(q))
    for p in (np.eye(2), _PAULI_X, _PAULI_Y, _PAULI_Z)
    for q in (np.eye(2), _PAULI_X, _PAULI_Y, _PAULI_Z)
]


def depolarizing_channel(pauli_error: float) -> GateChannel:
    """Two-qubit depolarizing channel with the given Pauli error."""
    if not 0.0 <= pauli_error <= 1.0:
        raise ValueError(f"pauli_error must lie in [0, 1], got {pauli_error}")
    kraus = [math.sqrt(1.0 - pauli_error) * _TWO_QUBIT_PAULIS[0]]
    kraus += [math.sqrt(pauli_error / 15.0) * p for p in _TWO_QUBIT_PAULIS[1:]]
    return GateChannel(_kraus_superoperator(kraus), f"depol({pauli_error:g})")


# ── States and measurement ─────────────────────────────────────── #

def basis_state(label: str) -> npt.NDArray[np.complex128]:
    """Density matrix of ``|ab>`` for a label such as ``"01"``."""
    if len(label) != 2 or any(c not in "012" for c in label):
        raise ValueError(f"state label must be two levels from 0-2, got {label!r}")
    rho = np.zeros((DIM, DIM), dtype=complex)
    i = 3 * int(label[0]) + int(label[1])
    rho[i, i] = 1.0
    return rho


def validate_density(rho: npt.NDArray[np.complex128], tol: float = 1e-10) -> None:
    """Raise ``ValueError`` unless *rho* is a 9x9 density matrix."""
    rho = np.asarray(rho)
    if rho.shape != (DIM, DIM):
        raise ValueError(f"density matrix must be 9x9, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > tol:
        raise ValueError(f"density matrix trace is {np.trace(rho).real:.12f}")
    if np.min(np.linalg.eigvalsh(rho)) < -tol:
        raise ValueError("density matrix is not positive semidefinite")


def evolve_density(
    rho: npt.NDArray[np.complex128],
    program: "PulseProgram",
    model: DeviceModel,
    *,
    noise: bool = False,
    frame: str = "shared",
) -> npt.NDArray[np.complex128]:
    """Evolve a two-qutrit density matrix under *program*."""
    validate_density(rho)
    if not noise:
        u = evolve_unitary(program, model, frame=frame)
        return u @ rho @ u.conj().T
    return gate_channel(program, model, noise=True, frame=frame).apply(rho)


_FOLD_TWO = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])


def outcome_labels(discriminate_2: bool = False) -> list[str]:
    levels = "012" if discriminate_2 else "01"
    return [a + b for a in levels for b in levels]


def measured_distribution(rho: npt.NDArray[np.complex128], model: DeviceModel, *,
                          discriminate_2: bool = False) -> npt.NDArray[np.float64]:
    """Exact probabilities of the reported outcomes (see :func:`outcome_labels`)."""
    pops = np.clip(np.real(np.diag(rho)), 0.0, None)
    pops = (pops / pops.sum()).reshape(3, 3)
    joint = model.readout(0).T @ pops @ model.readout(1)
    if not discriminate_2:
        joint = _FOLD_TWO.T @ joint @ _FOLD_TWO
    return joint.reshape(-1)


def sample_measurement(
    rho: npt.NDArray[np.complex128],
    shots: int,
    *,
    model: DeviceModel,
    discriminate_2: bool = False,
    rng: Optional[np.random.Generator | int] = None,
) -> dict[str, int]:
    """Draw *shots* readout outcomes; returns counts keyed by outcome label."""
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    probs = measured_distribution(rho, model, discriminate_2=discriminate_2)
    counts = rng.multinomial(shots, probs / probs.sum())
    return dict(zip(outcome_labels(discriminate_2), (int(c) for c in counts)))


# ── Pulses ─────────────────────────────────────────────────────── #

@dataclass(frozen=True, eq=False)
class PulseProgram:
    """Three synchronised flux waveforms.

    Attributes
    ----------
    q0, q1, coupler : ndarray
        Amplitudes relative to the idle biases, in flux quanta.
    duration : float
        Nominal gate length in ns (excluding pads).
    pad : float
        Idle time on either side, ns.
    shape : str
        ``rectangular``, ``smoothed``, ``cosine`` or ``composite``.
    """

    q0: npt.NDArray[np.float64]
    q1: npt.NDArray[np.float64]
    coupler: npt.NDArray[np.float64]
    duration: float
    pad: float = 0.0
    shape: str = "rectangular"
    sample_rate: float = 1.0

    def __post_init__(self) -> None:
        arrays = [np.atleast_1d(np.asarray(a, dtype=float)) for a in (self.q0, self.q1, self.coupler)]
        if len({len(a) for a in arrays}) != 1 or len(arrays[0]) == 0:
            raise ValueError("q0, q1 and coupler waveforms must share a non-zero sample count")
        for name, a in zip(("q0", "q1", "coupler"), arrays):
            if np.any(np.abs(a) > 1.0 + 1e-12):
                raise ValueError(f"{name} waveform exceeds DAC full scale [-1, 1]")
            object.__setattr__(self, name, a)

    @property
    def n_samples(self) -> int:
        return len(self.q0)

    @property
    def total_duration(self) -> float:
        return self.n_samples / self.sample_rate

    def channels(self) -> dict[str, npt.NDArray[np.float64]]:
        return {"q0": self.q0, "q1": self.q1, "coupler": self.coupler}

    def with_channels(self, **channels: npt.NDArray[np.float64]) -> "PulseProgram":
        return replace(self, **channels)

    def then(self, other: "PulseProgram", gap: float = 0.0) -> "PulseProgram":
        """Play *other* after this program, separated by *gap* ns."""
        if other.sample_rate != self.sample_rate:
            raise ValueError("cannot join programs with different sample rates")
        zeros = np.zeros(int(round(gap * self.sample_rate)))
        joined = {k: np.concatenate([v, zeros, other.channels()[k]]) for k, v in self.channels().items()}
        return PulseProgram(duration=self.duration + other.duration, pad=self.pad,
                            shape="composite", sample_rate=self.sample_rate, **joined)


def make_pulse(
    duration: float,
    pad: float,
    amplitudes: tuple[float, float, float],
    shape: str = "rectangular",
    *,
    rise: float = 3.0,
    sample_rate: float = 1.0,
) -> PulseProgram:
    """Build a three-channel pulse of the given *shape*.

    Samples sit at the midpoints of ``1/sample_rate`` bins.  *shape* acts
    on the coupler channel only; the qubit detuning channels stay
    rectangular over ``[pad, pad + duration)``.  ``cosine`` peaks at the
    coupler amplitude mid-pulse.  ``smoothed`` convolves the rectangle
    with a unit-area Gaussian of standard deviation *rise* ns, which
    keeps the pulse area, and widens the pads to hold the tails.
    """
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if pad < 0:
        raise ValueError(f"pad must be non-negative, got {pad}")
    if shape not in SHAPES:
        raise ValueError(f"shape must be one of {SHAPES}, got {shape!r}")
    n = int(round((duration + 2 * pad) * sample_rate))
    t = (np.arange(n) + 0.5) / sample_rate
    window = ((t >= pad) & (t < pad + duration)).astype(float)
    if shape == "cosine":
        envelope = window * 0.5 * (1.0 - np.cos(2.0 * np.pi * (t - pad) / duration))
    else:
        envelope = window
    if shape == "smoothed":
        if rise <= 0:
            raise ValueError(f"rise must be positive for smoothed pulses, got {rise}")
        sigma = rise * sample_rate
        half = int(math.ceil(4 * sigma))
        kernel = gaussian(2 * half + 1, sigma)
        envelope = np.convolve(envelope, kernel / kernel.sum())
        window = np.pad(window, half)
        pad = pad + half / sample_rate
    q0, q1 = (a * window for a in amplitudes[:2])
    cp = amplitudes[2] * envelope
    return PulseProgram(q0, q1, cp, duration=duration, pad=pad, shape=shape, sample_rate=sample_rate)


def realize_program(program: PulseProgram, model: DeviceModel) -> PulseProgram:
    """Pass *program* through the control chain: predistort, DAC, flux line."""
    out = {}
    for name, samples in program.channels().items():
        settle = model.settling(name)
        w = Waveform(samples, program.sample_rate)
        if model.predistort and settle is not None:
            w = predistort(w, settle)
        if model.dac_bits is not None:
            w = quantize(w, model.dac_bits)
        if settle is not None:
            w = apply_settling(w, settle)
        out[name] = np.clip(w.samples, -1.0, 1.0)
    return program.with_channels(**out)
