"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Requested settings are invalid or mutually inconsistent."""


class InputError(ValueError):
    """Runtime data violates an operation's requirements."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values.

    Optional keyword context (e.g. ``epoch=12`` or ``trial=3``) is kept on
    the ``context`` attribute so callers can report where a run failed.
    """

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context
