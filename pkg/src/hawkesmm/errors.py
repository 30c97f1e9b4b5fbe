"""Exception types shared across the package, mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid or malformed configuration (CLI exit code 2)."""


class InputOutputError(OSError):
    """Missing or unreadable/unwritable input or output path (CLI exit code 3)."""


class NumericalError(RuntimeError):
    """Numerical failure: instability, non-finite values, supercritical growth (exit code 4)."""
