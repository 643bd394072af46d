"""
tests/
======
Test suite for the ``fsimlab`` package.

Run all tests::

    pip install -e ".[dev]"
    pytest tests/ -v
"""
