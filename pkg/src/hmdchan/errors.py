"""Exception hierarchy.  Each class maps onto one CLI exit code."""


class HmdChanError(Exception):
    exit_code = 1


class ConfigurationError(HmdChanError, ValueError):
    """Invalid configuration, scenario or argument."""

    exit_code = 2


class OutOfRangeError(ConfigurationError):
    pass


class DataError(HmdChanError, ValueError):
    """Missing, malformed or dimensionally inconsistent data."""

    exit_code = 3


class ShapeError(DataError):
    pass


class DegenerateError(HmdChanError, ArithmeticError):
    """A quantity is undefined for the given input (zero power, zero variance)."""

    exit_code = 4
