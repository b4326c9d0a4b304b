"""Exception hierarchy shared by the library and the command line.

Each class carries the process exit status the CLI uses for it.
"""


class FefmError(Exception):
    exit_code = 1


class ConfigError(FefmError, ValueError):
    """Invalid configuration, schema or command usage."""

    exit_code = 1


class DataError(FefmError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class NumericError(FefmError, ArithmeticError):
    """A numerical routine failed (non-convergence, non-finite values)."""

    exit_code = 3
