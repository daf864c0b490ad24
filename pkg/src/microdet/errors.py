"""Exception types shared across the toolkit."""


class MicrodetError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(MicrodetError):
    """Array shapes are inconsistent; the message names the offending axes."""


class ValidationError(MicrodetError):
    """Invalid argument or input data (CLI exit code 1)."""


class GraphError(MicrodetError):
    """Backward was asked about a value the tape never recorded."""


class StateError(MicrodetError):
    """An operation needs state that has not been populated yet."""


class ConfigError(MicrodetError):
    """A model or run configuration is internally inconsistent."""


class NumericsError(MicrodetError):
    """A primitive produced NaN/Inf or training diverged (CLI exit code 2)."""


class ParseError(MicrodetError):
    """An annotation file could not be parsed; names the file and field."""


class DegenerateBoxError(MicrodetError):
    """Box geometry collapsed to a point where a gradient is undefined."""
