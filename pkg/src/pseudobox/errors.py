"""Exception types shared across the package."""


class PseudoboxError(Exception):
    pass


class InvalidInputError(PseudoboxError, ValueError):
    """Malformed data: non-finite coordinates, mismatched shapes, bad records."""


class InvalidConfigError(PseudoboxError, ValueError):
    """A configuration value is out of range or unknown."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
