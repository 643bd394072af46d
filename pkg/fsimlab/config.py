"""
config.py
=========
Run configuration and device profile I/O.

A device profile is a JSON file holding :meth:`DeviceModel.to_dict`
fields; anything omitted keeps its default.  The packaged
``profiles/default.json`` reproduces the reference device.

Example
-------
>>> from fsimlab.config import RunConfig, load_device_model
>>> cfg = RunConfig(experiment="xeb", seed=7, shots=None)
>>> model = load_device_model(cfg.device)
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

from fsimlab.device_sim import DeviceModel
from fsimlab.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_PROFILE = Path(__file__).resolve().parent / "profiles" / "default.json"
SEED_ENV = "FSIMLAB_SEED"
#: Run settings that cannot change results; left out of the config hash.
HASH_EXCLUDED = frozenset({"output_dir", "workers"})
EXPERIMENTS = ("scan", "spectroscopy", "tomography", "xeb", "purity", "rb",
               "calibrate", "report")


@dataclass
class RunConfig:
    """Everything needed to reproduce one run.

    All fields have sensible defaults.  Override only what you need.

    Attributes
    ----------
    device : str or None
        Path to a device profile; ``None`` uses the packaged default.
    experiment : str
        Sub-command name (``scan``, ``xeb``, ...).
    params : dict
        Experiment-specific parameters, echoed in the manifest.
    seed : int or None
        Master seed; overridden by ``FSIMLAB_SEED`` when set.
    shots : int or None
        Repetitions per circuit; ``None`` for expectation mode.
    output_dir : str
        Directory receiving CSV/JSON artifacts and ``manifest.json``.
    noise : bool
        Simulate decoherence.
    workers : int
        Thread-pool size for independent cells.
    """

    # ── Inputs ──────────────────────────────────────────────────── #
    device: Optional[str] = None
    experiment: str = "scan"
    params: dict[str, Any] = field(default_factory=dict)

    # ── Sampling ────────────────────────────────────────────────── #
    seed: Optional[int] = 0
    shots: Optional[int] = 2000
    noise: bool = True

    # ── Execution ───────────────────────────────────────────────── #
    output_dir: str = "fsimlab-out"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.shots is not None and self.shots < 1:
            raise ConfigError(f"shots must be >= 1 or None, got {self.shots}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.device is not None and not Path(self.device).is_file():
            raise ConfigError(f"device profile not found: {self.device}")

    @property
    def expectation(self) -> bool:
        return self.shots is None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


# ── Profiles ───────────────────────────────────────────────────── #

def load_device_model(path: Optional[str | Path] = None) -> DeviceModel:
    """Read a device profile; ``None`` loads the packaged default."""
    path = Path(path) if path is not None else DEFAULT_PROFILE
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read device profile {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    data.pop("description", None)
    try:
        model = DeviceModel.from_dict(data)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid device profile {path}: {exc}") from exc
    logger.debug("Loaded device profile %s", path)
    return model


def save_device_model(model: DeviceModel, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model.to_dict(), indent=2))
    return path


def resolve_seed(seed: Optional[int]) -> Optional[int]:
    """``FSIMLAB_SEED`` if set, else *seed*."""
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return seed
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def config_hash(config: RunConfig, model: DeviceModel) -> str:
    """Short SHA-256 of the canonical JSON of run settings and device."""
    payload = {"run": {k: v for k, v in config.to_dict().items() if k not in HASH_EXCLUDED},
               "device": model.to_dict()}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
