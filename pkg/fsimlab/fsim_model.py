"""
fsim_model.py
=============
Algebra of the fSim two-qubit gate family.

An fSim gate is an excitation-preserving two-qubit unitary.  In the
``|00>, |01>, |10>, |11>`` basis (``|q0 q1>``) it is fixed by five angles:

* ``theta``            swap angle in the ``|01> <-> |10>`` subspace
* ``phi``              conditional phase on ``|11>``
* ``delta_plus``       common single-qubit phase
* ``delta_minus``      differential single-qubit phase on the diagonal
* ``delta_minus_off``  differential single-qubit phase on the off-diagonal

Everything in this module is a pure function of its arguments.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import numpy.typing as npt

from fsimlab.errors import DegenerateTomographyError, NonUnitaryError

logger = logging.getLogger(__name__)

#: Magnitude below which a tomography element carries no usable phase.
SIGNAL_FLOOR = 1e-6

#: Default tolerance on element magnitudes (shot noise, SPAM).
DEFAULT_MAGNITUDE_TOLERANCE = 0.05

UNITARY_TOLERANCE = 1e-9


# ── Angle helpers ──────────────────────────────────────────────── #

def wrap_angle(x: npt.ArrayLike) -> float | npt.NDArray[np.float64]:
    """Wrap into ``(-pi, pi]``; ``-pi`` maps to ``+pi``."""
    y = math.pi - np.mod(math.pi - np.asarray(x, dtype=float), 2 * math.pi)
    return float(y) if y.ndim == 0 else y


def _wrap_half(x: float) -> tuple[float, int]:
    """Wrap into ``(-pi/2, pi/2]`` and return the number of pi shifts removed."""
    k = math.ceil((x - math.pi / 2) / math.pi)
    return x - k * math.pi, k


def angle_distance(a: float, b: float) -> float:
    """Absolute difference of two angles on the circle."""
    return abs(float(wrap_angle(a - b)))


# ── Domain types ───────────────────────────────────────────────── #

@dataclass(frozen=True)
class FsimParams:
    """The five fSim angles, in radians.

    Attributes
    ----------
    theta : float
        Swap angle.
    phi : float
        Conditional phase (``|11>`` entry is ``exp(i(2*delta_plus + phi))``).
    delta_plus, delta_minus, delta_minus_off : float
        Single-qubit phases.
    """

    theta: float
    phi: float
    delta_plus: float = 0.0
    delta_minus: float = 0.0
    delta_minus_off: float = 0.0

    def __post_init__(self) -> None:
        for name in ("theta", "phi", "delta_plus", "delta_minus", "delta_minus_off"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"FsimParams.{name} must be finite, got {getattr(self, name)!r}")

    @classmethod
    def from_degrees(cls, theta: float, phi: float, delta_plus: float = 0.0,
                     delta_minus: float = 0.0, delta_minus_off: float = 0.0) -> "FsimParams":
        return cls(*(math.radians(v) for v in (theta, phi, delta_plus, delta_minus, delta_minus_off)))

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.theta, self.phi, self.delta_plus, self.delta_minus, self.delta_minus_off)

    def degrees(self) -> tuple[float, float, float, float, float]:
        return tuple(math.degrees(v) for v in self.as_tuple())  # type: ignore[return-value]

    def to_dict(self) -> dict[str, float]:
        return {
            "theta": self.theta,
            "phi": self.phi,
            "delta_plus": self.delta_plus,
            "delta_minus": self.delta_minus,
            "delta_minus_off": self.delta_minus_off,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FsimParams":
        return cls(**{k: float(d[k]) for k in
                      ("theta", "phi", "delta_plus", "delta_minus", "delta_minus_off")})


@dataclass(frozen=True)
class TomographyElements:
    """Complex matrix elements from the six tomography circuits.

    ``u_nm = <e_n|U|e_m>`` with ``e_1 = |01>`` and ``e_2 = |10>``.  The two
    ``*_excited`` entries are measured with the spectator qubit in ``|1>``
    and equal ``u_33 * conj(u_21)`` and ``u_33 * conj(u_11)`` respectively.

    Attributes
    ----------
    psi10 : float
        Phase accumulated between the two qubit frames over the gate
        (0 when the elements are read out in the idle frame).
    flagged : bool
        Set when the magnitudes are inconsistent with an excitation
        preserving unitary beyond ``tolerance``.
    """

    u11: complex
    u12: complex
    u21: complex
    u22: complex
    u12_excited: complex
    u22_excited: complex
    psi10: float = 0.0
    tolerance: float = DEFAULT_MAGNITUDE_TOLERANCE
    flagged: bool = False

    @property
    def u21_excited(self) -> complex:
        """Alias matching the row label of the circuit table."""
        return self.u12_excited

    def with_consistency_check(self) -> "TomographyElements":
        """Return a copy with :attr:`flagged` set from the magnitudes."""
        mags = np.abs([self.u11, self.u12, self.u21, self.u22,
                       self.u12_excited, self.u22_excited])
        tol = self.tolerance
        flagged = bool(
            np.any(mags > 1.0 + tol)
            or abs(abs(self.u11) ** 2 + abs(self.u21) ** 2 - 1.0) > 2 * tol
            or abs(abs(self.u12) ** 2 + abs(self.u22) ** 2 - 1.0) > 2 * tol
        )
        if flagged:
            logger.warning("Tomography magnitudes inconsistent with a unitary: %s",
                           np.round(mags, 4).tolist())
        return replace(self, flagged=flagged)


@dataclass(frozen=True)
class ErrorRates:
    """Decay constant and the matching Pauli error for an n-qubit gate."""

    e_r: float
    e_p: float
    n_qubits: int

    @classmethod
    def from_decay(cls, e_r: float, n_qubits: int) -> "ErrorRates":
        return cls(e_r=e_r, e_p=pauli_from_decay(e_r, n_qubits), n_qubits=n_qubits)


@dataclass(frozen=True)
class SubtractedError:
    """Two-qubit error left after removing single-qubit contributions."""

    value: float
    clamped: bool = False

    def __float__(self) -> float:
        return self.value


# ── Construction ───────────────────────────────────────────────── #

def build_fsim(params: FsimParams) -> npt.NDArray[np.complex128]:
    """Return the 4x4 fSim unitary for *params*."""
    th, ph, dp, dm, doff = params.as_tuple()
    c, s = math.cos(th), math.sin(th)
    u = np.zeros((4, 4), dtype=complex)
    u[0, 0] = 1.0
    u[1, 1] = np.exp(1j * (dp + dm)) * c
    u[1, 2] = -1j * np.exp(1j * (dp - doff)) * s
    u[2, 1] = -1j * np.exp(1j * (dp + doff)) * s
    u[2, 2] = np.exp(1j * (dp - dm)) * c
    u[3, 3] = np.exp(1j * (2 * dp + ph))
    return u


def fsim_unitary(theta: float, phi: float) -> npt.NDArray[np.complex128]:
    """Two-angle fSim with the ``|11>`` entry ``exp(-i phi)``.

    This is the common ``fSim(theta, phi)`` notation (as in Cirq's
    ``FSimGate``); it is :func:`build_fsim` with ``phi`` negated.
    """
    return build_fsim(FsimParams(theta, -phi))


def normalize(params: FsimParams) -> FsimParams:
    """Map *params* onto canonical ranges without changing the unitary.

    ``theta`` in ``[0, pi/2]``, ``delta_plus`` in ``(-pi/2, pi/2]``, all
    other angles in ``(-pi, pi]``.
    """
    th, ph, dp, dm, doff = params.as_tuple()
    th = float(wrap_angle(th))
    if math.sin(th) < 0:
        th = -th
        doff += math.pi
    if math.cos(th) < 0:
        th = math.pi - th
        dm += math.pi
    dp, k = _wrap_half(dp)
    dm -= k * math.pi
    doff -= k * math.pi
    return FsimParams(
        theta=th,
        phi=float(wrap_angle(ph)),
        delta_plus=dp,
        delta_minus=float(wrap_angle(dm)),
        delta_minus_off=float(wrap_angle(doff)),
    )


# ── Metrics ────────────────────────────────────────────────────── #

def _check_unitary(u: npt.NDArray[np.complex128], name: str) -> None:
    u = np.asarray(u)
    if u.shape != (4, 4):
        raise ValueError(f"{name} must be 4x4, got shape {u.shape}")
    dev = np.max(np.abs(u.conj().T @ u - np.eye(4)))
    if dev > UNITARY_TOLERANCE:
        raise NonUnitaryError(f"{name} is not unitary (max |U^dag U - I| = {dev:.3e})")


def unitary_overlap_error(target: npt.NDArray[np.complex128],
                          actual: npt.NDArray[np.complex128]) -> float:
    """Pauli error ``1 - |Tr(target^dag actual) / 4|^2`` of a coherent deviation."""
    _check_unitary(target, "target")
    _check_unitary(actual, "actual")
    overlap = np.trace(np.asarray(target).conj().T @ np.asarray(actual)) / 4.0
    return float(max(0.0, 1.0 - abs(overlap) ** 2))


def pauli_from_decay(e_r: float, n_qubits: int) -> float:
    """Convert a per-cycle decay constant into a Pauli error, ``e_r (1 + 1/2^n)``."""
    if not 0.0 <= e_r <= 1.0:
        raise ValueError(f"e_r must lie in [0, 1], got {e_r}")
    if n_qubits < 1:
        raise ValueError(f"n_qubits must be >= 1, got {n_qubits}")
    return e_r * (1.0 + 1.0 / 2 ** n_qubits)


def two_qubit_error_from_cycle(e_p_cycle: float, e_p_q1: float, e_p_q2: float) -> SubtractedError:
    """Remove the two single-qubit Pauli errors from a cycle error.

    Negative results are clamped to zero and reported through
    :attr:`SubtractedError.clamped`.
    """
    for name, v in (("e_p_cycle", e_p_cycle), ("e_p_q1", e_p_q1), ("e_p_q2", e_p_q2)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    value = e_p_cycle - (e_p_q1 + e_p_q2)
    if value < 0.0:
        logger.warning("Cycle error %.3e is below the single-qubit sum %.3e; clamping to 0",
                       e_p_cycle, e_p_q1 + e_p_q2)
        return SubtractedError(0.0, clamped=True)
    return SubtractedError(value)


def coherence_limit(t_gate: float, t1: float) -> float:
    """Incoherent Pauli error per qubit from energy relaxation.

    Parameters
    ----------
    t_gate : float
        Gate duration in ns.
    t1 : float
        Relaxation time in µs.
    """
    if t_gate < 0:
        raise ValueError(f"t_gate must be non-negative, got {t_gate}")
    if t1 <= 0:
        raise ValueError(f"t1 must be positive, got {t1}")
    return 1.5 * t_gate / (3.0 * t1 * 1e3)


# ── Tomography ─────────────────────────────────────────────────── #

def simulate_tomography(u: npt.NDArray[np.complex128], *, psi10: float = 0.0) -> TomographyElements:
    """Noiseless outcome of the six tomography circuits on *u*.

    *u* may be the computational block of a leaky gate; it need not be
    unitary.
    """
    u = np.asarray(u, dtype=complex)
    u33 = u[3, 3]
    return TomographyElements(
        u11=complex(u[1, 1]),
        u12=complex(u[1, 2]),
        u21=complex(u[2, 1]),
        u22=complex(u[2, 2]),
        u12_excited=complex(u33 * np.conj(u[2, 1])),
        u22_excited=complex(u33 * np.conj(u[1, 1])),
        psi10=psi10,
    )


def conditional_phase(elems: TomographyElements) -> float:
    """Conditional phase from the two-branch Ramsey pair, in ``(-pi, pi]``."""
    return float(np.angle(elems.u22_excited * np.conj(elems.u22)))


def extract_fsim_params(elems: TomographyElements) -> FsimParams:
    """Recover the five fSim angles from tomography elements.

    The branch on ``|u21| > |u11|`` picks the better-conditioned circuit
    pair for ``delta_plus`` and ``phi``.  Phases that multiply a vanishing
    element (``delta_minus`` at ``theta = pi/2``, ``delta_minus_off`` at
    ``theta = 0``) are unobservable and returned as 0.

    When both ``|u11|`` and ``|u21|`` are below :data:`SIGNAL_FLOOR` the
    gate is taken as a full swap: ``theta = pi/2`` and ``phi = 0``, with
    ``delta_plus`` read from ``u12`` alone.

    Raises
    ------
    DegenerateTomographyError
        If any element is not finite.
    """
    values = (elems.u11, elems.u12, elems.u21, elems.u22, elems.u12_excited, elems.u22_excited)
    if not all(np.isfinite(v) for v in values):
        raise DegenerateTomographyError("tomography elements must be finite")
    a11, a12, a21 = abs(elems.u11), abs(elems.u12), abs(elems.u21)
    if a11 < SIGNAL_FLOOR and a21 < SIGNAL_FLOOR:
        logger.warning("|u11| = %.2e and |u21| = %.2e are below %g; assuming a full swap "
                       "(theta = 90 deg, phi unobservable)", a11, a21, SIGNAL_FLOOR)
        delta_plus = 0.0
        if a12 >= SIGNAL_FLOOR:
            delta_plus = float(np.angle(-elems.u12 / 1j)) + elems.psi10 / 2.0
        return normalize(FsimParams(math.pi / 2.0, 0.0, delta_plus, 0.0, 0.0))

    theta = math.atan2(a12, a11)

    if a21 > a11:
        two_dp = -elems.u12 * elems.u21
        phi = float(np.angle(elems.u12_excited * elems.u21 * np.conj(two_dp)))
    else:
        two_dp = elems.u11 * elems.u22
        phi = float(np.angle(elems.u22_excited * np.conj(elems.u22)))
    delta_plus = float(np.angle(two_dp)) / 2.0

    delta_minus = 0.0
    if a11 >= SIGNAL_FLOOR:
        delta_minus = float(np.angle(elems.u11)) - delta_plus

    delta_minus_off = 0.0
    if a12 >= SIGNAL_FLOOR:
        delta_minus_off = delta_plus - float(np.angle(-elems.u12 / 1j)) - elems.psi10 / 2.0

    return normalize(FsimParams(theta, phi, delta_plus, delta_minus, delta_minus_off))
