"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or arguments; maps to CLI exit code 2."""


class DataError(RuntimeError):
    """Malformed dataset, manifest, or embedding file."""
