"""
pulse_engine.py
===============
Flux-line transfer function: settling tails, pre-distortion and DAC
quantisation.

The line is modelled by its step response

    s(t) = 1 + sum_i alpha_i * exp(-t / tau_i),   t >= 0

Each term is realised as a first-order recursive section discretised
step-invariantly, so a sampled step reproduces ``s(n * dt)`` exactly.
Pre-distortion applies the exact rational inverse of the summed sections.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy.optimize import least_squares
from scipy.signal import lfilter

from fsimlab.errors import FitError

logger = logging.getLogger(__name__)


# ── Types ──────────────────────────────────────────────────────── #

@dataclass(frozen=True)
class SettlingModel:
    """Multi-exponential settling model of one control line.

    Attributes
    ----------
    alphas : tuple[float, ...]
        Fractional amplitudes (``-0.0494`` for -4.94 %).
    taus : tuple[float, ...]
        Time constants in ns.
    """

    alphas: tuple[float, ...] = ()
    taus: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        if len(self.alphas) != len(self.taus):
            raise ValueError(
                f"alphas and taus differ in length ({len(self.alphas)} vs {len(self.taus)})")
        if any(t <= 0 for t in self.taus):
            raise ValueError(f"time constants must be positive, got {self.taus}")
        if any(abs(a) >= 1 for a in self.alphas):
            raise ValueError(f"|alpha| must be < 1, got {self.alphas}")

    @classmethod
    def from_percent(cls, alphas_pct: Sequence[float], taus_ns: Sequence[float]) -> "SettlingModel":
        return cls(tuple(a / 100.0 for a in alphas_pct), tuple(taus_ns))

    def sorted(self) -> "SettlingModel":
        """Components ordered by decreasing time constant."""
        order = np.argsort(self.taus)[::-1]
        return SettlingModel(tuple(self.alphas[i] for i in order),
                             tuple(self.taus[i] for i in order))

    @property
    def is_identity(self) -> bool:
        return all(a == 0.0 for a in self.alphas)

    def to_dict(self) -> dict:
        return {"alphas": list(self.alphas), "taus": list(self.taus)}

    @classmethod
    def from_dict(cls, d: dict) -> "SettlingModel":
        return cls(tuple(d["alphas"]), tuple(d["taus"]))


@dataclass(frozen=True, eq=False)
class Waveform:
    """Uniformly sampled real waveform.

    Attributes
    ----------
    samples : ndarray
        Values in flux units.
    sample_rate : float
        Samples per ns (GS/s).
    clipped : bool
        Set by :func:`quantize` when samples left the DAC range.
    """

    samples: npt.NDArray[np.float64]
    sample_rate: float = 1.0
    clipped: bool = False

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim != 1:
            raise ValueError(f"waveform samples must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("waveform samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", arr)

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    def times(self) -> npt.NDArray[np.float64]:
        return np.arange(len(self.samples)) * self.dt

    def __len__(self) -> int:
        return len(self.samples)


# Measured settling of two neighbouring qubit flux lines.
SETTLING_Q2 = SettlingModel.from_percent((-0.46, -1.00, -4.94), (858.0, 104.0, 10.0))
SETTLING_Q3 = SettlingModel.from_percent((-0.61, -0.82, -5.97), (996.0, 94.0, 9.0))


# ── Filters ────────────────────────────────────────────────────── #

def _sections(m: SettlingModel, dt: float) -> list[tuple[npt.NDArray, npt.NDArray]]:
    out = []
    for alpha, tau in zip(m.alphas, m.taus):
        pole = np.exp(-dt / tau)
        out.append((np.array([alpha, -alpha]), np.array([1.0, -pole])))
    return out


def transfer_polynomials(m: SettlingModel, dt: float) -> tuple[npt.NDArray, npt.NDArray]:
    """Numerator and denominator of the line response in powers of ``z^-1``."""
    poles = [np.array([1.0, -np.exp(-dt / tau)]) for tau in m.taus]
    den = np.array([1.0])
    for p in poles:
        den = np.convolve(den, p)
    num = den.copy()
    for i, alpha in enumerate(m.alphas):
        term = alpha * np.array([1.0, -1.0])
        for j, p in enumerate(poles):
            if j != i:
                term = np.convolve(term, p)
        num[: len(term)] += term
    return num, den


def step_response(m: SettlingModel, times: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Closed-form ``1 + sum alpha_i exp(-t / tau_i)``."""
    t = np.asarray(times, dtype=float)
    out = np.ones_like(t)
    for alpha, tau in zip(m.alphas, m.taus):
        out += alpha * np.exp(-t / tau)
    return out


def apply_settling(w: Waveform, m: SettlingModel) -> Waveform:
    """Pass *w* through the line described by *m*."""
    x = w.samples
    y = x.copy()
    for b, a in _sections(m, w.dt):
        y += lfilter(b, a, x)
    return Waveform(y, w.sample_rate, w.clipped)


def predistort(w: Waveform, m: SettlingModel) -> Waveform:
    """Inverse-filter *w* so that the line reproduces it.

    Raises
    ------
    ValueError
        If ``1 + sum(alphas) == 0`` or the inverse filter is unstable.
    """
    if abs(1.0 + sum(m.alphas)) < 1e-12:
        raise ValueError("settling model is not invertible (1 + sum(alphas) = 0)")
    num, den = transfer_polynomials(m, w.dt)
    if len(num) > 1:
        radius = np.max(np.abs(np.roots(num)))
        if radius >= 1.0:
            raise ValueError(f"inverse settling filter is unstable (pole radius {radius:.6f})")
    return Waveform(lfilter(den, num, w.samples), w.sample_rate, w.clipped)


def average_settling(m1: SettlingModel, m2: SettlingModel) -> SettlingModel:
    """Component-wise mean of two models, matched by time constant."""
    if len(m1.taus) != len(m2.taus):
        raise ValueError("settling models have different numbers of components")
    a, b = m1.sorted(), m2.sorted()
    return SettlingModel(
        tuple((x + y) / 2.0 for x, y in zip(a.alphas, b.alphas)),
        tuple((x + y) / 2.0 for x, y in zip(a.taus, b.taus)),
    )


def lsb(bits: int) -> float:
    """Smallest DAC increment for a bipolar full scale of [-1, 1]."""
    return 2.0 / 2 ** bits


def quantize(w: Waveform, bits: int) -> Waveform:
    """Round to the DAC grid, half away from zero.

    Out-of-range samples are clipped to [-1, 1] and the result is marked
    :attr:`Waveform.clipped`.
    """
    if bits < 2:
        raise ValueError(f"bits must be >= 2, got {bits}")
    x = w.samples
    clipped = w.clipped
    if np.any(np.abs(x) > 1.0):
        logger.warning("%d sample(s) outside DAC range clipped", int(np.sum(np.abs(x) > 1.0)))
        x = np.clip(x, -1.0, 1.0)
        clipped = True
    step = lsb(bits)
    q = np.sign(x) * np.floor(np.abs(x) / step + 0.5) * step
    return Waveform(np.clip(q, -1.0, 1.0), w.sample_rate, clipped)


# ── Fitting ────────────────────────────────────────────────────── #

def fit_settling(
    times: npt.ArrayLike,
    response: npt.ArrayLike,
    initial: Optional[SettlingModel] = None,
    *,
    tol: float = 1e-4,
) -> SettlingModel:
    """Least-squares fit of a measured step response.

    Parameters
    ----------
    times : array_like
        Sample times in ns (t >= 0).
    response : array_like
        Measured step response at *times*.
    initial : SettlingModel, optional
        Starting point; defaults to :data:`SETTLING_Q2`.
    """
    t = np.asarray(times, dtype=float)
    r = np.asarray(response, dtype=float)
    start = (initial or SETTLING_Q2).sorted()
    n = len(start.alphas)
    x0 = np.concatenate([start.alphas, start.taus])

    def residual(x: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        out = np.ones_like(t)
        for alpha, tau in zip(x[:n], x[n:]):
            out += alpha * np.exp(-t / tau)
        return out - r

    lower = np.concatenate([np.full(n, -0.999), np.full(n, 1e-3)])
    upper = np.concatenate([np.full(n, 0.999), np.full(n, np.inf)])
    sol = least_squares(residual, x0, bounds=(lower, upper), x_scale="jac",
                        xtol=1e-12, ftol=1e-12, gtol=1e-12)
    if not sol.success:
        raise FitError(f"settling fit did not converge: {sol.message}")
    rms = float(np.sqrt(np.mean(sol.fun ** 2)))
    if rms > tol:
        logger.warning("Settling fit rms residual %.2e exceeds %.2e", rms, tol)
    logger.debug("Settling fit rms %.3e after %d evaluations", rms, sol.nfev)
    return SettlingModel(tuple(sol.x[:n]), tuple(sol.x[n:])).sorted()


# ── CSV I/O ────────────────────────────────────────────────────── #

def save_waveform_csv(path: str | Path, w: Waveform) -> Path:
    """Write ``time_ns,value`` rows."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_ns", "value"])
        for t, v in zip(w.times(), w.samples):
            writer.writerow([repr(float(t)), repr(float(v))])
    return path


def load_waveform_csv(path: str | Path) -> Waveform:
    """Read a waveform written by :func:`save_waveform_csv`."""
    times, values = [], []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"time_ns", "value"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns time_ns,value")
        for row in reader:
            times.append(float(row["time_ns"]))
            values.append(float(row["value"]))
    rate = 1.0
    if len(times) > 1:
        rate = 1.0 / (times[1] - times[0])
    return Waveform(np.array(values), rate)
