"""
errors.py
=========
Exception hierarchy for fsimlab.

Every error derives from :class:`FsimlabError` and from the builtin it
most resembles, so ``except ValueError`` keeps working for callers that
don't know about this module.
"""

from __future__ import annotations

from typing import Sequence


class FsimlabError(Exception):
    """Base class for all fsimlab errors."""


class ConfigError(FsimlabError, ValueError):
    """Invalid device profile or run configuration."""


class NonUnitaryError(FsimlabError, ValueError):
    """A matrix expected to be unitary is not (within tolerance)."""


class DegenerateTomographyError(FsimlabError, ValueError):
    """Tomography elements carry too little signal to extract parameters."""


class FitError(FsimlabError, RuntimeError):
    """A decay or settling fit did not converge."""


class CalibrationError(FsimlabError, RuntimeError):
    """A calibration step could not find its operating point."""


class RegistryError(FsimlabError, LookupError):
    """Gate registry lookup or persistence failure."""


class ReportSchemaError(FsimlabError, ValueError):
    """One or more result files do not match the expected schema."""

    def __init__(self, message: str, files: Sequence[str] = ()) -> None:
        super().__init__(message)
        self.files = list(files)
