"""Market-state identification from sliding-epoch correlation matrices."""

from marketstates.errors import ConfigError, DataError, MarketStatesError, NumericError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "MarketStatesError", "NumericError", "__version__"]
