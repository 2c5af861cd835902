"""Incremental partial-label learning with prototype-guided disambiguation and replay."""

from ipll.errors import ConfigError, DegenerateInputError, DimensionError, IPLLError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateInputError",
    "DimensionError",
    "IPLLError",
    "__version__",
]
