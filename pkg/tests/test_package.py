"""
test_package.py
===============
Tests for package-level imports and metadata.
"""

from __future__ import annotations

import logging

import pytest


class TestPackageImports:
    """Verify top-level imports work."""

    def test_import_package(self):
        import fsimlab
        assert hasattr(fsimlab, "__version__")

    @pytest.mark.parametrize("name", [
        "measure_fsim", "xeb_benchmark", "calibrate_composite_fsim", "load_device_model",
    ])
    def test_entry_points_are_callable(self, name):
        import fsimlab
        assert callable(getattr(fsimlab, name))

    def test_version_string(self):
        from fsimlab import __version__
        assert isinstance(__version__, str)
        assert len(__version__.split(".")) >= 2

    def test_all_exports_resolve(self):
        import fsimlab
        missing = [n for n in fsimlab.__all__ if not hasattr(fsimlab, n)]
        assert missing == []

    def test_library_logger_is_silent(self):
        import fsimlab  # noqa: F401
        handlers = logging.getLogger("fsimlab").handlers
        assert any(isinstance(h, logging.NullHandler) for h in handlers)

    def test_errors_share_a_base(self):
        from fsimlab import ConfigError, FitError, FsimlabError, RegistryError
        for exc in (ConfigError, FitError, RegistryError):
            assert issubclass(exc, FsimlabError)


class TestFsimParamsIsDataclass:
    """Verify FsimParams behaves like a value object."""

    def test_is_dataclass(self):
        from dataclasses import is_dataclass
        from fsimlab import FsimParams
        assert is_dataclass(FsimParams)

    def test_equality(self):
        from fsimlab import FsimParams
        assert FsimParams(0.1, 0.2) == FsimParams(0.1, 0.2)

    def test_inequality_on_override(self):
        from fsimlab import FsimParams
        assert FsimParams(0.1, 0.2) != FsimParams(0.1, 0.3)

    def test_repr_contains_class_name(self):
        from fsimlab import FsimParams
        assert "FsimParams" in repr(FsimParams(0.1, 0.2))
