"""Exception types shared across the simulator."""


class SimulationError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SimulationError):
    """Tensor or layer dimensions do not line up."""


class UsageError(SimulationError):
    """An operation was called with arguments it cannot work on."""


class ConfigError(SimulationError):
    """Invalid configuration value or combination."""


class ProtocolError(SimulationError):
    """A federation message or update violates the protocol contract."""


class ParseError(SimulationError):
    """A data or config file could not be parsed."""
