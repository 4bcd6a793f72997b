"""Error taxonomy shared by all modules (mapped to CLI exit codes)."""


class SSNSError(Exception):
    exit_code = 1


class ConfigError(SSNSError, ValueError):
    """Invalid configuration or parameter (exit 2)."""
    exit_code = 2


class DomainError(SSNSError, ValueError):
    """Evaluation outside the domain of definition (exit 2)."""
    exit_code = 2


class FieldIOError(SSNSError, OSError):
    """Missing or malformed files (exit 3)."""
    exit_code = 3


class AccuracyError(SSNSError, ArithmeticError):
    """A quadrature or convergence self-check failed (exit 4)."""
    exit_code = 4


class ResolutionError(AccuracyError):
    """Grid too coarse for the requested operation (exit 4)."""
