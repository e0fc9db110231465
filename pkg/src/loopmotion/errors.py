"""Exception hierarchy shared across the package."""


class LoopMotionError(Exception):
    """Base class for all errors raised by this package."""


class RepresentationError(LoopMotionError):
    """Motion data inconsistent with the skeleton (width, degenerate bones, ...)."""


class ConfigError(LoopMotionError):
    """Invalid configuration value or unknown configuration key."""


class ShapeError(LoopMotionError):
    """Tensor/array arguments with incompatible shapes."""


class NumericError(LoopMotionError):
    """Non-finite values where finite ones are required."""


class DataError(LoopMotionError):
    """Corrupt or inconsistent data file."""


class SimulationError(LoopMotionError):
    """Simulation state became invalid; the episode must abort."""


class StateError(LoopMotionError):
    """Operation attempted in an invalid state (e.g. missing checkpoint)."""
