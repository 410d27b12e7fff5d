"""Exception types shared across the package.

The CLI maps ConfigError / DimensionError / ContractError / DataError to
exit code 1 (bad input) and NumericError plus anything unexpected to exit
code 2 (runtime failure).
"""


class WdffuError(Exception):
    """Base class for all package errors."""


class DimensionError(WdffuError):
    """Shapes or axes incompatible with an operation's contract."""


class NumericError(WdffuError):
    """Non-finite values, domain violations, diverging losses."""


class ContractError(WdffuError):
    """API misuse: repeated backward, missing gradients, bad arguments."""


class ConfigError(WdffuError):
    """Invalid configuration file, key, or value."""


class DataError(WdffuError):
    """Dataset layout or file content problems."""
