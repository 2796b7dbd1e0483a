"""Exception types shared across the toolkit."""


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class ConfigError(ValueError):
    """Raised when a configuration value is missing or inconsistent."""
