"""
benchmarking.py
===============
Cross-entropy and purity benchmarking, single-qubit Clifford RB, decay
fitting, ex-situ phase optimisation and error budgeting.

Sequences are simulated on the two-qutrit channel level: every cycle is
one random single-qubit gate on each qubit (with the device's
single-qubit error channel) followed by the two-qubit gate channel.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy.optimize import curve_fit, minimize

from fsimlab.device_sim import (
    COMPUTATIONAL,
    DIM,
    GATES,
    XEB_GATES,
    DeviceModel,
    GateChannel,
    apply_single_qubit_gate,
    basis_state,
    gate_matrix,
    measured_distribution,
    single_qubit_channel,
)
from fsimlab.errors import FitError
from fsimlab.fsim_model import FsimParams, SubtractedError, build_fsim, pauli_from_decay, two_qubit_error_from_cycle
from fsimlab.parallel import derive_rng, map_ordered

logger = logging.getLogger(__name__)

#: Log-spaced sequence depths from 5 to 700.
DEFAULT_DEPTHS = tuple(int(round(x)) for x in np.geomspace(5, 700, 12))
DEFAULT_CIRCUITS_PER_DEPTH = 20
DEFAULT_RB_DEPTHS = (1, 5, 10, 25, 50, 100, 200, 400)
#: Floor on ideal probabilities inside the logarithm.
PROBABILITY_FLOOR = 1e-12
PURITY_TOLERANCE = 1e-6
#: Asymptotic survival probability of single-qubit RB.
RB_OFFSET = 0.5
#: Free-offset fits whose decay over the depth range stays above this are
#: poorly constrained.
SHALLOW_DECAY = 0.9
REPORT_SCHEMA = "fsimlab.benchmark/1"
PHASE_PARAMETERS = ("delta_plus", "delta_minus", "delta_minus_off")


# ── Types ──────────────────────────────────────────────────────── #

@dataclass(frozen=True)
class XebCircuit:
    """Random cycle sequence.

    Attributes
    ----------
    gates : tuple[tuple[str, str], ...]
        One ``(q0 tag, q1 tag)`` pair per cycle, drawn from
        :data:`~fsimlab.device_sim.XEB_GATES`.  May be empty.
    index : int
        Base sequence this circuit was truncated from.
    """

    gates: tuple[tuple[str, str], ...]
    index: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "gates", tuple((str(a), str(b)) for a, b in self.gates))
        bad = {t for pair in self.gates for t in pair} - set(XEB_GATES)
        if bad:
            raise ValueError(f"invalid gate tags {sorted(bad)}")

    @property
    def depth(self) -> int:
        return len(self.gates)


@dataclass(frozen=True)
class DecayFit:
    """Fit of ``F(m) = A p^m + B``.

    Attributes
    ----------
    amplitude, offset : float
        ``A`` and ``B``.
    decay : float
        ``p``, the per-cycle depolarizing parameter.
    e_r : float
        ``1 - p``.
    exponent : float
        ``-ln p``, the equivalent exponential-form rate.
    covariance : ndarray
        Parameter covariance (order ``A, p[, B]``).
    residual : float
        Root-mean-square fit residual.
    negative_rate : bool
        Set when the fitted decay grows with depth.
    """

    amplitude: float
    offset: float
    decay: float
    e_r: float
    exponent: float
    covariance: npt.NDArray[np.float64]
    residual: float
    negative_rate: bool = False

    def pauli_error(self, n_qubits: int) -> float:
        """Pauli error per cycle for an *n_qubits* system."""
        d = 2 ** n_qubits
        return pauli_from_decay((1.0 - 1.0 / d) * min(max(self.e_r, 0.0), 1.0), n_qubits)

    def to_dict(self) -> dict:
        return {"A": self.amplitude, "B": self.offset, "p": self.decay, "e_r": self.e_r,
                "exponent": self.exponent, "residual": self.residual,
                "negative_rate": self.negative_rate}


@dataclass
class XebResult:
    depths: npt.NDArray[np.int64]
    fidelities: npt.NDArray[np.float64]
    stderr: npt.NDArray[np.float64]
    fit: DecayFit
    cycle_error: float
    two_qubit_error: SubtractedError
    circuits: list[XebCircuit] = field(repr=False)
    measured: npt.NDArray[np.float64] = field(repr=False)
    expected: npt.NDArray[np.float64] = field(repr=False)


@dataclass
class PurityResult:
    depths: npt.NDArray[np.int64]
    purities: npt.NDArray[np.float64]
    fit: DecayFit
    cycle_error: float
    two_qubit_error: SubtractedError
    unphysical: int = 0


@dataclass
class RbResult:
    depths: npt.NDArray[np.int64]
    survival: npt.NDArray[np.float64]
    fit: DecayFit
    pauli_error: float
    interleaved_fit: Optional[DecayFit] = None
    interleaved_error: Optional[float] = None


@dataclass
class OptimizationResult:
    params: FsimParams
    cost: float
    initial_cost: float
    improved: bool
    evaluations: int


@dataclass(frozen=True)
class ErrorBudget:
    """Per-cycle two-qubit error split into incoherent and coherent parts."""

    total: float
    incoherent: float
    coherent: float
    leakage: float = 0.0

    def to_dict(self) -> dict:
        return {"total": self.total, "incoherent": self.incoherent,
                "coherent": self.coherent, "leakage": self.leakage}


# ── Circuits ───────────────────────────────────────────────────── #

def generate_xeb_circuits(
    depths: Sequence[int] = DEFAULT_DEPTHS,
    n_per_depth: int = DEFAULT_CIRCUITS_PER_DEPTH,
    seed: Optional[int] = None,
) -> list[XebCircuit]:
    """Draw *n_per_depth* random sequences and truncate each to every depth.

    Returned in depth-major order.
    """
    depths = sorted(int(d) for d in depths)
    if not depths:
        raise ValueError("depths must be non-empty")
    if depths[0] < 1:
        raise ValueError(f"depths must be >= 1, got {depths[0]}")
    if n_per_depth < 1:
        raise ValueError(f"n_per_depth must be >= 1, got {n_per_depth}")
    base = []
    for k in range(n_per_depth):
        draws = derive_rng(seed, k).integers(0, len(XEB_GATES), size=(depths[-1], 2))
        base.append(tuple((XEB_GATES[a], XEB_GATES[b]) for a, b in draws))
    return [XebCircuit(base[k][:d], index=k) for d in depths for k in range(n_per_depth)]


def _target_unitary(gate_model: FsimParams | npt.NDArray[np.complex128]) -> npt.NDArray[np.complex128]:
    if isinstance(gate_model, FsimParams):
        return build_fsim(gate_model)
    return np.asarray(gate_model, dtype=complex)


def expected_probs(circuit: XebCircuit, gate_model: FsimParams | npt.NDArray[np.complex128]) -> npt.NDArray[np.float64]:
    """Ideal outcome distribution of *circuit* with the modelled two-qubit gate."""
    u = _target_unitary(gate_model)
    psi = np.zeros(4, dtype=complex)
    psi[0] = 1.0
    for a, b in circuit.gates:
        psi = u @ (np.kron(GATES[a], GATES[b]) @ psi)
    probs = np.abs(psi) ** 2
    return probs / probs.sum()


# ── Sequence simulation ────────────────────────────────────────── #

def _cycle_matrices(gate: GateChannel, single_qubit_error: float) -> dict[tuple[str, str], npt.NDArray]:
    q0 = {t: single_qubit_channel(t, 0, single_qubit_error) for t in XEB_GATES}
    q1 = {t: single_qubit_channel(t, 1, single_qubit_error) for t in XEB_GATES}
    return {(a, b): q0[a].then(q1[b]).then(gate).matrix for a in XEB_GATES for b in XEB_GATES}


def simulate_sequences(
    circuits: Sequence[XebCircuit],
    gate: GateChannel,
    *,
    single_qubit_error: float,
    workers: int = 1,
) -> list[npt.NDArray[np.complex128]]:
    """Final 9x9 density matrix of every circuit.

    Circuits sharing an ``index`` are evolved incrementally when one is a
    prefix of the next.
    """
    cycles = _cycle_matrices(gate, single_qubit_error)
    groups: dict[int, list[int]] = {}
    for k, c in enumerate(circuits):
        groups.setdefault(c.index, []).append(k)

    def run(members: list[int]) -> list[tuple[int, npt.NDArray]]:
        members = sorted(members, key=lambda k: circuits[k].depth)
        start = basis_state("00").reshape(-1)
        vec, done = start, ()
        out = []
        for k in members:
            gates = circuits[k].gates
            if gates[:len(done)] != done:
                vec, done = start, ()
            for pair in gates[len(done):]:
                vec = cycles[pair] @ vec
            done = gates
            out.append((k, vec.reshape(DIM, DIM)))
        return out

    final: list[Optional[npt.NDArray]] = [None] * len(circuits)
    for chunk in map_ordered(run, list(groups.values()), workers):
        for k, rho in chunk:
            final[k] = rho
    return final  # type: ignore[return-value]


def _measure(rhos: Sequence[npt.NDArray], model: DeviceModel, shots: Optional[int],
             seed: Optional[int]) -> npt.NDArray[np.float64]:
    probs = np.array([measured_distribution(rho, model) for rho in rhos])
    if shots is None:
        return probs
    counts = np.array([derive_rng(seed, k).multinomial(shots, p / p.sum()) for k, p in enumerate(probs)])
    return counts / shots


# ── XEB ────────────────────────────────────────────────────────── #

def _cross_entropy_terms(p_measured: npt.NDArray, p_expected: npt.NDArray) -> tuple[npt.NDArray, npt.NDArray]:
    pm = np.atleast_2d(np.asarray(p_measured, dtype=float))
    pe = np.atleast_2d(np.asarray(p_expected, dtype=float))
    if pm.shape != pe.shape:
        raise ValueError(f"shape mismatch {pm.shape} vs {pe.shape}")
    log_q = np.log(np.maximum(pe, PROBABILITY_FLOOR))
    uniform = 1.0 / pe.shape[-1]
    # S(P, Q) = -sum p ln q
    s_inc = -uniform * log_q.sum(axis=-1)
    s_meas = -(pm * log_q).sum(axis=-1)
    s_exp = -(pe * log_q).sum(axis=-1)
    return s_inc - s_meas, s_inc - s_exp


def xeb_fidelity(p_measured: npt.ArrayLike, p_expected: npt.ArrayLike) -> float:
    """Cross-entropy fidelity, pooled over the circuits along axis 0.

    Sampling noise can push the estimate slightly outside [0, 1]; it is
    not clipped.
    """
    num, den = _cross_entropy_terms(np.asarray(p_measured), np.asarray(p_expected))
    total = float(den.sum())
    if abs(total) < 1e-12:
        raise ValueError("ideal distributions are uniform; cross-entropy fidelity is undefined")
    return float(num.sum()) / total


def _group_by_depth(circuits: Sequence[XebCircuit]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for k, c in enumerate(circuits):
        groups.setdefault(c.depth, []).append(k)
    return dict(sorted(groups.items()))


def _per_depth_fidelity(circuits: Sequence[XebCircuit], measured: npt.NDArray,
                        expected: npt.NDArray) -> tuple[npt.NDArray, npt.NDArray, npt.NDArray]:
    groups = _group_by_depth(circuits)
    depths, fids, errs = [], [], []
    for d, ks in groups.items():
        depths.append(d)
        fids.append(xeb_fidelity(measured[ks], expected[ks]))
        num, den = _cross_entropy_terms(measured[ks], expected[ks])
        per = num / np.where(np.abs(den) < 1e-12, np.nan, den)
        per = per[np.isfinite(per)]
        errs.append(float(np.std(per, ddof=1) / math.sqrt(len(per))) if len(per) > 1 else 0.0)
    return np.array(depths), np.array(fids), np.array(errs)


def xeb_benchmark(
    gate: GateChannel,
    gate_model: FsimParams | npt.NDArray[np.complex128],
    model: DeviceModel,
    *,
    depths: Sequence[int] = DEFAULT_DEPTHS,
    n_circuits: int = DEFAULT_CIRCUITS_PER_DEPTH,
    shots: Optional[int] = 2000,
    seed: Optional[int] = None,
    workers: int = 1,
) -> XebResult:
    """Cross-entropy benchmark of *gate* against the ideal *gate_model*.

    The fidelity decay is fitted with the offset fixed at 0; the cycle
    Pauli error and the two-qubit error (cycle minus two single-qubit
    errors) are both reported.
    """
    circuits = generate_xeb_circuits(depths, n_circuits, seed)
    rhos = simulate_sequences(circuits, gate, single_qubit_error=model.single_qubit_error,
                              workers=workers)
    measured = _measure(rhos, model, shots, seed)
    expected = np.array([expected_probs(c, gate_model) for c in circuits])
    ds, fids, errs = _per_depth_fidelity(circuits, measured, expected)
    fit = fit_decay(ds, fids, offset=0.0)
    cycle = fit.pauli_error(2)
    p1 = model.single_qubit_error
    two_qubit = two_qubit_error_from_cycle(min(cycle, 1.0), p1, p1)
    logger.info("XEB cycle Pauli error %.4e, two-qubit %.4e", cycle, two_qubit.value)
    return XebResult(ds, fids, errs, fit, cycle, two_qubit, circuits, measured, expected)


# ── Fitting ────────────────────────────────────────────────────── #

def _decay_free(m, a, p, b):
    return a * p ** m + b


def fit_decay(
    depths: npt.ArrayLike,
    fidelities: npt.ArrayLike,
    *,
    offset: Optional[float] = None,
) -> DecayFit:
    """Least-squares fit of ``A p^m + B``.

    Parameters
    ----------
    offset : float, optional
        Fix ``B`` instead of fitting it.

    Raises
    ------
    ValueError
        Fewer than 4 points.
    FitError
        The fit did not converge.
    """
    m = np.asarray(depths, dtype=float)
    f = np.asarray(fidelities, dtype=float)
    if len(m) < 4 or len(m) != len(f):
        raise ValueError(f"need at least 4 matching (depth, fidelity) points, got {len(m)}")
    b0 = 0.0 if offset is None else float(offset)

    if np.ptp(f) < 1e-12:
        return DecayFit(float(f[0] - b0), b0, 1.0, 0.0, 0.0, np.zeros((2, 2)), 0.0)

    shifted = np.clip(f - b0, 1e-12, None)
    slope = np.polyfit(m, np.log(shifted), 1)[0]
    p0 = float(np.clip(math.exp(slope), 0.5, 0.999999))
    a0 = float(np.clip(shifted[0] / p0 ** m[0], 1e-3, 2.0))
    try:
        if offset is None:
            popt, pcov = curve_fit(_decay_free, m, f, p0=(a0, p0, 0.0),
                                   bounds=([0.0, 0.0, -1.0], [2.0, 1.5, 1.0]), maxfev=20000)
            a, p, b = popt
        else:
            popt, pcov = curve_fit(lambda x, a, p: a * p ** x + b0, m, f, p0=(a0, p0),
                                   bounds=([0.0, 0.0], [2.0, 1.5]), maxfev=20000)
            (a, p), b = popt, b0
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"decay fit failed: {exc}") from exc

    residual = float(np.sqrt(np.mean((_decay_free(m, a, p, b) - f) ** 2)))
    negative = bool(p > 1.0)
    if negative:
        logger.warning("Decay fit grows with depth (p = %.6f)", p)
    elif offset is None and p ** float(np.ptp(m)) > SHALLOW_DECAY:
        logger.warning("Only %.1f%% decay across depths %g..%g; the free offset is poorly "
                       "constrained, extend the depths or fix the offset",
                       100.0 * (1.0 - p ** float(np.ptp(m))), m.min(), m.max())
    exponent = -math.log(p) if p > 0 else math.inf
    return DecayFit(float(a), float(b), float(p), float(1.0 - p), exponent,
                    np.asarray(pcov), residual, negative)


# ── Purity benchmarking ────────────────────────────────────────── #

_PAULI_2 = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1.0, -1.0]).astype(complex),
}
# Rotation that maps the measured basis onto Z.
_BASIS_ROTATION = {"X": "-Y/2", "Y": "X/2", "Z": "I"}


def _computational_block(rho: npt.NDArray[np.complex128]) -> npt.NDArray[np.complex128]:
    block = rho[np.ix_(COMPUTATIONAL, COMPUTATIONAL)]
    return block / np.real(np.trace(block))


def state_tomography(
    rho: npt.NDArray[np.complex128],
    model: DeviceModel,
    shots: int,
    rng: np.random.Generator,
) -> npt.NDArray[np.complex128]:
    """Linear-inversion estimate of the two-qubit state from 9 Pauli settings."""
    expect: dict[tuple[str, str], list[float]] = {}
    for a in "XYZ":
        for b in "XYZ":
            r = apply_single_qubit_gate(rho, 0, _BASIS_ROTATION[a], pauli_error=0.0)
            r = apply_single_qubit_gate(r, 1, _BASIS_ROTATION[b], pauli_error=0.0)
            p = measured_distribution(r, model)
            freq = rng.multinomial(shots, p / p.sum()).reshape(2, 2) / shots
            z0 = np.array([1.0, -1.0])
            expect.setdefault((a, b), []).append(float(z0 @ freq @ z0))
            expect.setdefault((a, "I"), []).append(float(z0 @ freq.sum(axis=1)))
            expect.setdefault(("I", b), []).append(float(z0 @ freq.sum(axis=0)))
    est = np.kron(_PAULI_2["I"], _PAULI_2["I"]) / 4.0
    for (a, b), vals in expect.items():
        est = est + np.mean(vals) * np.kron(_PAULI_2[a], _PAULI_2[b]) / 4.0
    return est


def purity_benchmark(
    gate: GateChannel,
    model: DeviceModel,
    *,
    depths: Sequence[int] = DEFAULT_DEPTHS,
    n_circuits: int = DEFAULT_CIRCUITS_PER_DEPTH,
    shots: Optional[int] = None,
    seed: Optional[int] = None,
    circuits: Optional[Sequence[XebCircuit]] = None,
    workers: int = 1,
) -> PurityResult:
    """Incoherent error per cycle from the decay of state purity.

    The quantity fitted is ``sqrt((4 Tr(rho^2) - 1) / 3)`` averaged over
    the sequences at each depth.
    """
    if circuits is None:
        circuits = generate_xeb_circuits(depths, n_circuits, seed)
    rhos = simulate_sequences(circuits, gate, single_qubit_error=model.single_qubit_error,
                              workers=workers)
    purities = np.empty(len(rhos))
    for k, rho in enumerate(rhos):
        est = (_computational_block(rho) if shots is None
               else state_tomography(rho, model, shots, derive_rng(seed, k)))
        purities[k] = float(np.real(np.trace(est @ est)))
    unphysical = int(np.sum(purities > 1.0 + PURITY_TOLERANCE))
    if unphysical:
        logger.warning("%d reconstructed state(s) have purity above 1", unphysical)

    groups = _group_by_depth(circuits)
    ds = np.array(list(groups))
    mean_p = np.array([purities[ks].mean() for ks in groups.values()])
    signal = np.sqrt(np.clip((4.0 * mean_p - 1.0) / 3.0, 0.0, None))
    fit = fit_decay(ds, signal, offset=0.0)
    cycle = fit.pauli_error(2)
    p1 = model.single_qubit_error
    two_qubit = two_qubit_error_from_cycle(min(cycle, 1.0), p1, p1)
    logger.info("Purity-limited cycle error %.4e, two-qubit %.4e", cycle, two_qubit.value)
    return PurityResult(ds, mean_p, fit, cycle, two_qubit, unphysical)


# ── Single-qubit randomized benchmarking ───────────────────────── #

def _phase_key(u: npt.NDArray[np.complex128]) -> tuple:
    flat = u.reshape(-1)
    pivot = flat[np.argmax(np.abs(flat) > 1e-6)]
    canon = flat * abs(pivot) / pivot
    return tuple(np.round(np.concatenate([canon.real, canon.imag]), 6) + 0.0)


def _clifford_group() -> list[npt.NDArray[np.complex128]]:
    generators = (GATES["X/2"], GATES["Y/2"])
    found = {_phase_key(np.eye(2)): np.eye(2, dtype=complex)}
    frontier = [np.eye(2, dtype=complex)]
    while frontier:
        nxt = []
        for u in frontier:
            for g in generators:
                v = g @ u
                key = _phase_key(v)
                if key not in found:
                    found[key] = v
                    nxt.append(v)
        frontier = nxt
    return list(found.values())


CLIFFORDS = _clifford_group()
_CLIFFORD_INDEX = {_phase_key(u): i for i, u in enumerate(CLIFFORDS)}


def clifford_index(u: npt.NDArray[np.complex128]) -> Optional[int]:
    """Index of *u* in :data:`CLIFFORDS` up to global phase, else ``None``."""
    return _CLIFFORD_INDEX.get(_phase_key(np.asarray(u, dtype=complex)))


def _depolarize_1q(rho: npt.NDArray, p: float) -> npt.NDArray:
    if p <= 0:
        return rho
    return (1.0 - p) * rho + p / 3.0 * sum(s @ rho @ s.conj().T for s in
                                           (_PAULI_2["X"], _PAULI_2["Y"], _PAULI_2["Z"]))


def _rb_survival(depth: int, rng: np.random.Generator, p_ref: float,
                 interleaved: Optional[npt.NDArray], p_int: float) -> float:
    rho = np.diag([1.0, 0.0]).astype(complex)
    total = np.eye(2, dtype=complex)
    for idx in rng.integers(0, len(CLIFFORDS), size=depth):
        for u, p in ((CLIFFORDS[idx], p_ref), (interleaved, p_int)):
            if u is None:
                continue
            rho = _depolarize_1q(u @ rho @ u.conj().T, p)
            total = u @ total
    inverse = CLIFFORDS[_CLIFFORD_INDEX[_phase_key(total.conj().T)]]
    rho = _depolarize_1q(inverse @ rho @ inverse.conj().T, p_ref)
    return float(np.real(rho[0, 0]))


def single_qubit_rb(
    model: DeviceModel,
    depths: Sequence[int] = DEFAULT_RB_DEPTHS,
    *,
    interleaved: Optional[str | npt.NDArray[np.complex128]] = None,
    pauli_error: Optional[float] = None,
    interleaved_error: Optional[float] = None,
    n_sequences: int = 20,
    shots: Optional[int] = None,
    seed: Optional[int] = None,
) -> RbResult:
    """Clifford randomized benchmarking of one qubit.

    Each Clifford carries one depolarizing channel with *pauli_error*
    (default: the device's single-qubit error).  Survival is fitted with
    ``A p^m + 1/2``.  With *interleaved*, a second set of sequences
    interleaves that Clifford and its error is estimated from the ratio
    of the two decays.
    """
    p_ref = model.single_qubit_error if pauli_error is None else pauli_error
    p_int = p_ref if interleaved_error is None else interleaved_error
    depths = np.asarray(sorted(set(int(d) for d in depths)), dtype=np.int64)
    g_int = None
    if interleaved is not None:
        g_int = gate_matrix(interleaved)
        if clifford_index(g_int) is None:
            raise ValueError("interleaved gate is not a single-qubit Clifford")

    def run(gate: Optional[npt.NDArray], tag: int) -> npt.NDArray[np.float64]:
        out = np.empty(len(depths))
        for i, m in enumerate(depths):
            vals = []
            for s in range(n_sequences):
                rng = derive_rng(seed, (tag, i, s))
                p0 = _rb_survival(int(m), rng, p_ref, gate, p_int)
                vals.append(p0 if shots is None else rng.binomial(shots, min(max(p0, 0.0), 1.0)) / shots)
            out[i] = float(np.mean(vals))
        return out

    survival = run(None, 0)
    fit = fit_decay(depths, survival, offset=RB_OFFSET)
    error = fit.pauli_error(1)
    result = RbResult(depths, survival, fit, error)
    if g_int is not None:
        int_fit = fit_decay(depths, run(g_int, 1), offset=RB_OFFSET)
        r = 0.5 * (1.0 - int_fit.decay / fit.decay)
        result.interleaved_fit = int_fit
        result.interleaved_error = pauli_from_decay(min(max(r, 0.0), 1.0), 1)
    logger.info("Single-qubit RB Pauli error %.4e", error)
    return result


# ── Ex-situ optimisation ───────────────────────────────────────── #

def _mean_depth_fidelity(circuits: Sequence[XebCircuit], measured: npt.NDArray,
                         params: FsimParams) -> float:
    expected = np.array([expected_probs(c, params) for c in circuits])
    fids = [xeb_fidelity(measured[ks], expected[ks]) for ks in _group_by_depth(circuits).values()]
    return float(np.mean(fids))


def ex_situ_optimize(
    initial: FsimParams,
    circuits: Sequence[XebCircuit],
    measured: npt.ArrayLike,
    *,
    free_params: Sequence[str] = PHASE_PARAMETERS,
    fatol: float = 1e-4,
    max_evaluations: int = 500,
    step: float = 0.1,
) -> OptimizationResult:
    """Fit the gate model to measured XEB data with Nelder-Mead.

    The cost is ``1 - mean over depths of F_XEB``.  Parameters not in
    *free_params* stay at their initial values.
    """
    measured = np.asarray(measured, dtype=float)
    names = list(free_params)
    unknown = set(names) - set(initial.to_dict())
    if unknown:
        raise ValueError(f"unknown fSim parameters {sorted(unknown)}")
    base = initial.to_dict()

    def params_at(x: npt.NDArray) -> FsimParams:
        return FsimParams(**{**base, **dict(zip(names, map(float, x)))})

    def cost(x: npt.NDArray) -> float:
        return 1.0 - _mean_depth_fidelity(circuits, measured, params_at(x))

    x0 = np.array([base[n] for n in names])
    c0 = cost(x0)
    if not names:
        return OptimizationResult(initial, c0, c0, False, 1)
    simplex = np.vstack([x0] + [x0 + step * e for e in np.eye(len(names))])
    sol = minimize(cost, x0, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "fatol": fatol, "xatol": 1e-4,
                            "maxfev": max_evaluations})
    logger.debug("Nelder-Mead: %s after %d evaluations", sol.message, sol.nfev)
    if not sol.fun < c0 - 1e-12:
        logger.warning("Ex-situ optimisation did not improve on the initial model")
        return OptimizationResult(initial, c0, c0, False, int(sol.nfev))
    return OptimizationResult(params_at(sol.x), float(sol.fun), c0, True, int(sol.nfev))


# ── Budget ─────────────────────────────────────────────────────── #

def error_budget(
    xeb_cycle_error: float,
    purity_cycle_error: float,
    leakage_rate: float = 0.0,
    *,
    single_qubit_error: float = 7.5e-4,
) -> ErrorBudget:
    """Split the benchmarked cycle error into incoherent and coherent parts."""
    single = 2.0 * single_qubit_error
    total = xeb_cycle_error - single
    incoherent = purity_cycle_error - single
    return ErrorBudget(total, incoherent, total - incoherent, leakage_rate)


# ── Reports ────────────────────────────────────────────────────── #

def benchmark_report(
    kind: str,
    result: XebResult | PurityResult | RbResult,
    csv_path: str | Path,
    json_path: str | Path,
    *,
    extra: Optional[Mapping[str, object]] = None,
    budget: Optional[ErrorBudget] = None,
) -> dict:
    """Write per-depth CSV rows and a JSON summary; returns the summary."""
    extra = dict(extra or {})
    if isinstance(result, XebResult):
        values, errs = result.fidelities, result.stderr
        errors = {"cycle": result.cycle_error, "two_qubit": result.two_qubit_error.value,
                  "clamped": result.two_qubit_error.clamped}
    elif isinstance(result, PurityResult):
        values, errs = result.purities, np.zeros(len(result.depths))
        errors = {"cycle": result.cycle_error, "two_qubit": result.two_qubit_error.value,
                  "clamped": result.two_qubit_error.clamped, "unphysical": result.unphysical}
    else:
        values, errs = result.survival, np.zeros(len(result.depths))
        errors = {"single_qubit": result.pauli_error, "interleaved": result.interleaved_error}

    with Path(csv_path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["depth", "mean_fidelity", "stderr", *extra])
        for d, v, e in zip(result.depths, values, errs):
            writer.writerow([int(d), repr(float(v)), repr(float(e)), *extra.values()])

    summary = {"schema": REPORT_SCHEMA, "kind": kind, "fit": result.fit.to_dict(),
               "pauli_error": errors, **extra}
    if budget is not None:
        summary["budget"] = budget.to_dict()
    Path(json_path).write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary
