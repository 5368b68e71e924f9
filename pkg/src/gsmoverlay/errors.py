"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid configuration: bad file syntax, unknown key, out-of-range value."""


class NumericError(RuntimeError):
    """A numeric routine failed to converge or received non-finite input."""
