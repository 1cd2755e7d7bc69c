"""Exception types shared across the package.

Shape/size/domain violations raise plain ValueError; the classes below exist
so the CLI can map failures onto distinct exit codes.
"""


class ConfigError(Exception):
    """Invalid configuration, architecture descriptor, or checkpoint mismatch."""


class DataError(Exception):
    """Unreadable, missing, or malformed input data."""


class NumericalError(Exception):
    """Non-finite values encountered where finiteness is required."""
