"""Exception hierarchy; CLI exit codes are keyed off these classes."""


class MarketStatesError(Exception):
    exit_code = 1


class ConfigError(MarketStatesError, ValueError):
    exit_code = 2


class DataError(MarketStatesError, ValueError):
    exit_code = 3


class DegenerateEpochError(DataError):
    """A return series has zero variance inside one epoch."""

    def __init__(self, message, rows=(), tickers=()):
        super().__init__(message)
        self.rows = list(rows)
        self.tickers = list(tickers)


class NumericError(MarketStatesError, ArithmeticError):
    exit_code = 4
