"""Exception hierarchy and process exit codes.

Two broad failure families matter operationally: bad input data (exit
code 2) and numerical routines that cannot produce a usable result
(exit code 3). Anything else that reaches the CLI is a usage error
(exit code 1).
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class CovdescError(Exception):
    """Base class for errors raised by this package."""


class DataError(CovdescError):
    """Malformed or inconsistent input data."""


class NumericalError(CovdescError):
    """A numerical routine failed to produce a usable result."""


class FormatError(DataError):
    """A binary container has a bad magic number, dims, or layout."""


class TruncatedPayloadError(FormatError):
    """A binary container ends before its declared payload."""


class NonFiniteValueError(DataError):
    """NaN or Inf encountered where finite values are required."""


class ManifestError(DataError):
    """A dataset manifest violates its schema or invariants."""


class DegenerateRegionError(DataError):
    """Landmarks do not admit a non-empty region construction."""


class TooFewObservationsError(DataError):
    """Fewer than two observations; sample covariance is undefined."""


class MismatchError(DataError):
    """Operands disagree in dimension, region, or alignment."""


class NotPositiveSemidefiniteError(NumericalError):
    """A matrix expected to be PSD has a significantly negative eigenvalue."""


class EigensolverError(NumericalError):
    """Symmetric eigendecomposition failed to converge."""


class ConvergenceError(NumericalError):
    """Iterative optimization hit its iteration cap before tolerance."""


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code contract."""
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, (DataError, OSError)):
        return EXIT_DATA
    return EXIT_USAGE
