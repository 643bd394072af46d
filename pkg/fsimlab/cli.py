"""
cli.py
======
``fsimlab`` command-line entry point.

Every sub-command loads a device profile, runs one protocol and writes
its CSV/JSON artifacts plus ``manifest.json`` into ``--output-dir``.
Each CSV row carries the run's ``seed`` and ``config_hash`` so a file
can always be matched to the manifest that produced it.

Exit status: 0 on success, 1 when some grid cells or calibration
targets failed (listed in the manifest), 2 on invalid input.

Examples
--------
::

    fsimlab scan --mode theta --config profile.json
    fsimlab xeb --depths 5,10,20,50 --circuits 10 --budget
    fsimlab calibrate fsim --grid 525 --workers 8
    fsimlab report out/*/xeb.json
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
import scipy

from fsimlab import __version__
from fsimlab.benchmarking import (
    DEFAULT_CIRCUITS_PER_DEPTH,
    DEFAULT_DEPTHS,
    DEFAULT_RB_DEPTHS,
    REPORT_SCHEMA,
    benchmark_report,
    error_budget,
    ex_situ_optimize,
    purity_benchmark,
    single_qubit_rb,
    xeb_benchmark,
)
from fsimlab.calibration import (
    COMPOSITE_ORDERS,
    CPHASE_LENGTH,
    GATE_PAD,
    ISWAP_LENGTH,
    CalCurve,
    GateRegistry,
    calibrate_composite_fsim,
    calibrate_cphase_family,
    calibrate_iswap_family,
    convergence_csv,
    entry_program,
    quadratic_fit_r2,
    registry_lookup,
    standard_grid,
)
from fsimlab.config import RunConfig, config_hash, load_device_model, resolve_seed
from fsimlab.device_sim import (
    SHAPES,
    DeviceModel,
    PulseProgram,
    coupler_amplitude_for_g,
    detuning_to_amplitude,
    gate_channel,
    make_pulse,
    realize_program,
)
from fsimlab.errors import FitError, FsimlabError, ReportSchemaError
from fsimlab.experiments import (
    SCAN_MODES,
    landscape_scan,
    leakage_per_cycle,
    measure_fsim,
    swap_spectroscopy,
    unitary_tomography,
)
from fsimlab.fsim_model import extract_fsim_params

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SUMMARY_SCHEMA = "fsimlab.report/1"
EXIT_OK, EXIT_PARTIAL, EXIT_INVALID = 0, 1, 2

# Options shared by every sub-command; everything else is echoed as ``params``.
_COMMON = {"config", "seed", "shots", "expectation", "output_dir", "workers", "noise",
           "verbose", "no_settling", "command", "func", "default_noise"}


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")


def _dump(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_json_default)


# ── Run context ────────────────────────────────────────────────── #

@dataclass
class Run:
    """Per-invocation state shared by the command handlers."""

    config: RunConfig
    model: DeviceModel
    digest: str
    out: Path
    outputs: list[str] = field(default_factory=list)
    failed: list[Any] = field(default_factory=list)

    @property
    def seed(self) -> Optional[int]:
        return self.config.seed

    @property
    def shots(self) -> Optional[int]:
        return self.config.shots

    @property
    def extra(self) -> dict[str, Any]:
        """Columns appended to every CSV row."""
        return {"seed": "" if self.seed is None else self.seed, "config_hash": self.digest}

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def write_json(self, name: str, data: Any) -> Path:
        path = self.path(name)
        path.write_text(_dump(data))
        return path

    def manifest(self, argv: Sequence[str]) -> Path:
        data = {
            "argv": list(argv),
            "config": self.config.to_dict(),
            "device": self.model.to_dict(),
            "seed": self.seed,
            "config_hash": self.digest,
            "versions": {"fsimlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
            "outputs": self.outputs,
            "failed": self.failed,
        }
        path = self.out / MANIFEST
        path.write_text(_dump(data))
        return path


# ── Gate selection ─────────────────────────────────────────────── #

def _gate_program(args: argparse.Namespace, model: DeviceModel) -> PulseProgram:
    """Registry entry for ``--theta/--phi`` or a single resonant pulse."""
    if args.registry:
        registry = GateRegistry.load(args.registry)
        hit = registry_lookup(registry, args.theta, args.phi)
        return entry_program(hit.entry, registry, model)
    g = args.g if args.g is not None else 1e3 / (4.0 * args.duration)
    amps = (detuning_to_amplitude(args.delta, model), 0.0, coupler_amplitude_for_g(-abs(g), model))
    return make_pulse(args.duration, args.pad, amps, args.shape, sample_rate=model.sample_rate)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _targets(text: str) -> list[tuple[float, float]]:
    try:
        pairs = [item.split(":") for item in text.split(",") if item.strip()]
        return [(float(t), float(p)) for t, p in pairs]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected theta:phi pairs, got {text!r}") from None


# ── Commands ───────────────────────────────────────────────────── #

def cmd_scan(run: Run, args: argparse.Namespace) -> None:
    model = run.model
    deltas = np.linspace(args.delta_min, args.delta_max, args.n_delta)
    hi = args.coupler_max if args.coupler_max is not None else model.coupler.guard_bias
    biases = np.linspace(args.coupler_min, hi, args.n_coupler)
    result = landscape_scan(args.mode, deltas, biases, args.duration, model,
                            shape=args.shape, pad=args.pad, rise=args.rise, shots=run.shots,
                            seed=run.seed, noise=run.config.noise, proxy=args.proxy,
                            workers=run.config.workers)
    result.to_csv(run.path(f"scan_{args.mode}.csv"), run.extra)
    run.failed.extend([int(i), int(j)] for i, j in result.failed)
    summary = {"mode": args.mode, "pixels": int(result.values.size), "failed": len(result.failed)}
    if args.mode == "leakage":
        summary["below_threshold"] = result.count_below(args.threshold)
    run.write_json(f"scan_{args.mode}.json", summary)


def cmd_spectroscopy(run: Run, args: argparse.Namespace) -> None:
    model = run.model
    hi = args.bias_max if args.bias_max is not None else model.coupler.guard_bias
    biases = np.linspace(args.bias_min, hi, args.n_bias)
    durations = args.duration_step * np.arange(1, args.n_duration + 1)
    result = swap_spectroscopy(biases, durations, model, shots=run.shots, seed=run.seed,
                               noise=run.config.noise, workers=run.config.workers)
    result.scan.to_csv(run.path("spectroscopy.csv"), run.extra)
    g_model = np.abs(np.asarray(model.coupler.g(biases)))
    with run.path("coupling.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["coupler_bias", "g_extracted_mhz", "g_model_mhz", "below_noise", *run.extra])
        for b, g, gm, low in zip(biases, result.g, g_model, result.below_noise):
            writer.writerow([repr(float(b)), repr(float(g)), repr(float(gm)), int(low),
                             *run.extra.values()])
    run.write_json("spectroscopy.json", {"resolution_mhz": result.resolution,
                                         "below_noise": int(result.below_noise.sum())})


def cmd_tomography(run: Run, args: argparse.Namespace) -> None:
    program = _gate_program(args, run.model)
    elems = unitary_tomography(program, run.model, shots=run.shots, seed=run.seed,
                               noise=run.config.noise)
    params = extract_fsim_params(elems)
    names = ("theta", "phi", "delta_plus", "delta_minus", "delta_minus_off")
    with run.path("tomography.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "value_deg", *run.extra])
        for name, value in zip(names, params.degrees()):
            writer.writerow([name, repr(float(value)), *run.extra.values()])
    elements = {k: [getattr(elems, k).real, getattr(elems, k).imag]
                for k in ("u11", "u12", "u21", "u22", "u12_excited", "u22_excited")}
    run.write_json("tomography.json", {"elements": elements, "flagged": elems.flagged,
                                       "params_deg": dict(zip(names, params.degrees()))})


def _benchmark_gate(run: Run, args: argparse.Namespace):
    program = _gate_program(args, run.model)
    gate = gate_channel(realize_program(program, run.model), run.model,
                        noise=run.config.noise, frame="idle")
    target = measure_fsim(program, run.model.without_distortion())
    return program, gate, target


def cmd_xeb(run: Run, args: argparse.Namespace) -> None:
    model, cfg = run.model, run.config
    program, gate, target = _benchmark_gate(run, args)
    result = xeb_benchmark(gate, target, model, depths=args.depths, n_circuits=args.circuits,
                           shots=run.shots,
                           seed=run.seed, workers=cfg.workers)
    budget = None
    if args.budget:
        purity = purity_benchmark(gate, model, circuits=result.circuits, shots=None,
                                  workers=cfg.workers)
        try:
            leakage = leakage_per_cycle(program, args.depths, model, n_sequences=4,
                                        seed=run.seed, noise=cfg.noise).rate
        except (FitError, ValueError) as exc:
            logger.warning("Leakage estimate skipped: %s", exc)
            leakage = 0.0
        budget = error_budget(result.cycle_error, purity.cycle_error, leakage,
                              single_qubit_error=model.single_qubit_error)
    benchmark_report("xeb", result, run.path("xeb.csv"), run.path("xeb.json"),
                     extra=run.extra, budget=budget)
    if args.optimize:
        opt = ex_situ_optimize(target, result.circuits, result.measured)
        run.write_json("optimization.json", {
            "initial": target.to_dict(), "optimized": opt.params.to_dict(),
            "cost": opt.cost, "initial_cost": opt.initial_cost,
            "improved": opt.improved, "evaluations": opt.evaluations})


def cmd_purity(run: Run, args: argparse.Namespace) -> None:
    _, gate, _ = _benchmark_gate(run, args)
    result = purity_benchmark(gate, run.model, depths=args.depths, n_circuits=args.circuits,
                              shots=run.shots, seed=run.seed, workers=run.config.workers)
    benchmark_report("purity", result, run.path("purity.csv"), run.path("purity.json"),
                     extra=run.extra)


def cmd_rb(run: Run, args: argparse.Namespace) -> None:
    result = single_qubit_rb(run.model, args.depths, interleaved=args.interleaved,
                             pauli_error=args.pauli_error, n_sequences=args.sequences,
                             shots=run.shots, seed=run.seed)
    benchmark_report("rb", result, run.path("rb.csv"), run.path("rb.json"), extra=run.extra)


def cmd_calibrate_cphase(run: Run, args: argparse.Namespace) -> None:
    curve = calibrate_cphase_family(run.model, gate_len=args.gate_len, span=args.span,
                                    n_detunings=args.n_detunings, workers=run.config.workers)
    curve.to_csv(run.path("cphase.csv"), run.extra)
    run.write_json("cphase.json", curve.to_dict())


def cmd_calibrate_iswap(run: Run, args: argparse.Namespace) -> None:
    curve = calibrate_iswap_family(run.model, gate_len=args.gate_len)
    curve.to_csv(run.path("iswap.csv"), run.extra)
    run.write_json("iswap.json", {**curve.to_dict(), "quadratic_r2": quadratic_fit_r2(curve)})
    if not curve.meta["converged"]:
        run.failed.append({"step": "iswap", "transfer": curve.meta["transfer"]})


def _load_curve(path: Optional[str]) -> Optional[CalCurve]:
    if path is None:
        return None
    return CalCurve.from_dict(json.loads(Path(path).read_text()))


def select_targets(n: Optional[int], explicit: Optional[list[tuple[float, float]]]) -> list[tuple[float, float]]:
    """Explicit targets, else *n* evenly spread points of the standard grid."""
    if explicit:
        return explicit
    grid = standard_grid()
    if n is None or n >= len(grid):
        return grid
    if n < 1:
        raise ValueError(f"--grid must be >= 1, got {n}")
    picks = np.unique(np.linspace(0, len(grid) - 1, n).round().astype(int))
    return [grid[k] for k in picks]


def cmd_calibrate_fsim(run: Run, args: argparse.Namespace) -> None:
    cfg = run.config
    cphase = _load_curve(args.cphase_curve)
    iswap = _load_curve(args.iswap_curve)
    if cphase is None:
        cphase = calibrate_cphase_family(run.model, workers=cfg.workers)
        run.write_json("cphase.json", cphase.to_dict())
    if iswap is None:
        iswap = calibrate_iswap_family(run.model)
        run.write_json("iswap.json", iswap.to_dict())
    targets = select_targets(args.grid, args.targets)
    registry = calibrate_composite_fsim(
        targets, run.model, cphase=cphase, iswap=iswap, stride=args.stride,
        max_iterations=args.max_iterations, tolerance=args.tolerance, shots=run.shots,
        seed=run.seed, noise=cfg.noise, timestamp=args.timestamp, order=args.order,
        workers=cfg.workers)
    registry.save(run.path("registry.json"))
    convergence_csv(registry, run.path("convergence.csv"), run.extra)
    run.failed.extend([e.theta_target, e.phi_target] for e in registry.entries if not e.converged)


# ── Report ─────────────────────────────────────────────────────── #

_ERROR_KEY = {"xeb": "two_qubit", "purity": "two_qubit", "rb": "single_qubit"}


def summarize_reports(paths: Sequence[str | Path], bins: int = 20) -> dict:
    """Aggregate benchmark JSON summaries into per-gate tables and histograms.

    Raises
    ------
    ReportSchemaError
        Listing every file that is unreadable or carries another schema.
    """
    loaded, bad = [], []
    for p in paths:
        try:
            data = json.loads(Path(p).read_text())
        except (OSError, json.JSONDecodeError):
            bad.append(str(p))
            continue
        if not isinstance(data, dict) or data.get("schema") != REPORT_SCHEMA \
                or data.get("kind") not in _ERROR_KEY:
            bad.append(str(p))
            continue
        loaded.append((str(p), data))
    if bad:
        raise ReportSchemaError(f"{len(bad)} file(s) are not {REPORT_SCHEMA} summaries: "
                                + ", ".join(bad), bad)

    rows = []
    for name, data in loaded:
        kind = data["kind"]
        value = data["pauli_error"].get(_ERROR_KEY[kind])
        rows.append({"file": name, "kind": kind,
                     "error": None if value is None else float(value),
                     "seed": data.get("seed"), "config_hash": data.get("config_hash")})

    by_kind: dict[str, list[float]] = {}
    for r in rows:
        if r["error"] is not None:
            by_kind.setdefault(r["kind"], []).append(r["error"])
    histograms = {}
    for kind, values in by_kind.items():
        counts, edges = np.histogram(values, bins=bins)
        histograms[kind] = {"edges": edges.tolist(), "counts": counts.tolist()}
    means = {kind: float(np.mean(v)) for kind, v in by_kind.items()}
    return {
        "schema": SUMMARY_SCHEMA,
        "n_files": len(rows),
        "gates": rows,
        "mean_error": means.get("xeb"),
        "mean_purity_error": means.get("purity"),
        "by_kind": means,
        "histograms": histograms,
    }


def cmd_report(run: Run, args: argparse.Namespace) -> None:
    summary = summarize_reports(args.inputs, bins=args.bins)
    run.write_json("report.json", {**summary, "seed": run.seed, "config_hash": run.digest})
    with run.path("report.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "kind", "error", *run.extra])
        for row in summary["gates"]:
            writer.writerow([row["file"], row["kind"],
                             "" if row["error"] is None else repr(row["error"]),
                             *run.extra.values()])


# ── Parser ─────────────────────────────────────────────────────── #

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="device profile JSON (default: packaged profile)")
    p.add_argument("--seed", type=int, default=0, help="master seed (FSIMLAB_SEED overrides)")
    p.add_argument("--shots", type=int, default=2000, help="shots per circuit; 0 for expectation mode")
    p.add_argument("--expectation", action="store_true", help="exact probabilities, no sampling")
    p.add_argument("--output-dir", default="fsimlab-out")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--noise", action=argparse.BooleanOptionalAction, default=None,
                   help="simulate decoherence (default depends on the command)")
    p.add_argument("--no-settling", action="store_true",
                   help="ideal flux lines and an unquantised DAC")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _add_gate(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("gate")
    g.add_argument("--registry", help="gate registry JSON; selects the entry nearest --theta/--phi")
    g.add_argument("--theta", type=float, default=90.0, help="swap angle, degrees")
    g.add_argument("--phi", type=float, default=0.0, help="conditional phase, degrees")
    g.add_argument("--duration", type=float, default=ISWAP_LENGTH, help="single-pulse length, ns")
    g.add_argument("--pad", type=float, default=GATE_PAD)
    g.add_argument("--delta", type=float, default=0.0, help="detuning during the pulse, MHz")
    g.add_argument("--g", type=float, default=None, help="|coupling| during the pulse, MHz")
    g.add_argument("--shape", choices=SHAPES, default="rectangular")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsimlab",
        description="Simulate, benchmark and calibrate fSim gates on a tunable-coupler device.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, func: Callable, summary: str, noise: bool,
                parent: argparse._SubParsersAction = sub) -> argparse.ArgumentParser:
        p = parent.add_parser(name, help=summary, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        _add_common(p)
        p.set_defaults(func=func, default_noise=noise)
        return p

    p = command("scan", cmd_scan, "leakage / swap angle / conditional phase landscape", False)
    p.add_argument("--mode", choices=SCAN_MODES, default="leakage")
    p.add_argument("--duration", type=float, default=15.0)
    p.add_argument("--pad", type=float, default=0.0)
    p.add_argument("--shape", choices=SHAPES, default="rectangular")
    p.add_argument("--rise", type=float, default=3.0, help="edge width of smoothed pulses, ns")
    p.add_argument("--delta-min", type=float, default=-100.0)
    p.add_argument("--delta-max", type=float, default=340.0)
    p.add_argument("--n-delta", type=int, default=41)
    p.add_argument("--coupler-min", type=float, default=0.0)
    p.add_argument("--coupler-max", type=float, default=None)
    p.add_argument("--n-coupler", type=int, default=41)
    p.add_argument("--proxy", action="store_true", help="leakage read as P(q0 = 0) without |2> discrimination")
    p.add_argument("--threshold", type=float, default=0.01)

    p = command("spectroscopy", cmd_spectroscopy, "swap spectroscopy of the coupling", False)
    p.add_argument("--bias-min", type=float, default=0.0)
    p.add_argument("--bias-max", type=float, default=None)
    p.add_argument("--n-bias", type=int, default=31)
    p.add_argument("--duration-step", type=float, default=1.0)
    p.add_argument("--n-duration", type=int, default=200)

    p = command("tomography", cmd_tomography, "six-circuit unitary tomography", False)
    _add_gate(p)

    p = command("xeb", cmd_xeb, "cross-entropy benchmarking", True)
    _add_gate(p)
    p.add_argument("--depths", type=_int_list, default=list(DEFAULT_DEPTHS))
    p.add_argument("--circuits", type=int, default=DEFAULT_CIRCUITS_PER_DEPTH)
    p.add_argument("--budget", action="store_true", help="also run purity and leakage for an error budget")
    p.add_argument("--optimize", action="store_true", help="fit the gate model to the XEB data")

    p = command("purity", cmd_purity, "purity benchmarking", True)
    _add_gate(p)
    p.add_argument("--depths", type=_int_list, default=list(DEFAULT_DEPTHS))
    p.add_argument("--circuits", type=int, default=DEFAULT_CIRCUITS_PER_DEPTH)

    p = command("rb", cmd_rb, "single-qubit randomized benchmarking", True)
    p.add_argument("--depths", type=_int_list, default=list(DEFAULT_RB_DEPTHS))
    p.add_argument("--sequences", type=int, default=20)
    p.add_argument("--interleaved", default=None, help="Clifford gate tag to interleave, e.g. X/2")
    p.add_argument("--pauli-error", type=float, default=None)

    cal = sub.add_parser("calibrate", help="calibrate gate families")
    cal_sub = cal.add_subparsers(dest="target", required=True)
    p = command("cphase", cmd_calibrate_cphase, "CPHASE family", False, cal_sub)
    p.add_argument("--gate-len", type=float, default=CPHASE_LENGTH)
    p.add_argument("--span", type=float, default=None,
                   help="detuning half-width in MHz (default 0.8e3 / gate length)")
    p.add_argument("--n-detunings", type=int, default=31)
    p = command("iswap", cmd_calibrate_iswap, "iSWAP-like family", False, cal_sub)
    p.add_argument("--gate-len", type=float, default=ISWAP_LENGTH)
    p = command("fsim", cmd_calibrate_fsim, "composite fSim registry", False, cal_sub)
    p.add_argument("--grid", type=int, default=None, help="number of standard-grid targets (525 = all)")
    p.add_argument("--targets", type=_targets, default=None, help="explicit theta:phi,... list")
    p.add_argument("--cphase-curve", default=None, help="reuse a cphase.json")
    p.add_argument("--iswap-curve", default=None, help="reuse an iswap.json")
    p.add_argument("--stride", type=float, default=1.0)
    p.add_argument("--max-iterations", type=int, default=15)
    p.add_argument("--tolerance", type=float, default=1.0)
    p.add_argument("--timestamp", default=None,
                   help="ISO-8601 stamp for registry entries (default SOURCE_DATE_EPOCH or the epoch)")
    p.add_argument("--order", choices=COMPOSITE_ORDERS, default="cphase_first")

    p = command("report", cmd_report, "aggregate benchmark summaries", False)
    p.add_argument("inputs", nargs="*", help="benchmark JSON summaries")
    p.add_argument("--bins", type=int, default=20)
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    shots = None if args.expectation or args.shots == 0 else args.shots
    noise = args.default_noise if args.noise is None else args.noise
    params = {k: v for k, v in vars(args).items() if k not in _COMMON}
    return RunConfig(device=args.config, experiment=args.command, params=params,
                     seed=resolve_seed(args.seed), shots=shots, noise=noise,
                     output_dir=args.output_dir, workers=args.workers)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        config = _run_config(args)
        model = load_device_model(config.device)
        if args.no_settling:
            model = model.without_distortion()
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(config, model, config_hash(config, model), out)
        args.func(run, args)
    except (FsimlabError, ValueError) as exc:
        print(f"fsimlab: {exc}", file=sys.stderr)
        return EXIT_INVALID

    run.manifest(argv)
    if run.failed:
        logger.warning("%d cell(s) failed; see %s", len(run.failed), out / MANIFEST)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
