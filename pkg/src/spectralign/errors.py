"""Error taxonomy shared across the package.

DataError maps to CLI exit code 3, NumericError to exit code 4.
"""


class SpectralignError(Exception):
    """Base class for all package errors."""


class DataError(SpectralignError):
    """Malformed or inconsistent input data (files, labels, shapes)."""


class NumericError(SpectralignError):
    """Numerical failure: non-convergence, degeneracy, divergence."""
