"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A precondition on an operation's arguments was violated."""


class UnsupportedParametersError(ValueError):
    """Arguments are well formed but the construction does not cover them."""


class InvalidConfigError(ValueError):
    """An experiment configuration failed validation.

    ``field`` names the offending configuration key.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class NumericalFailure(RuntimeError):
    """A numerical routine failed to produce a usable result."""
