class IPLLError(ValueError):
    """Base class for errors raised by this package."""


class DimensionError(IPLLError):
    pass


class DegenerateInputError(IPLLError):
    pass


class ConfigError(IPLLError):
    pass
