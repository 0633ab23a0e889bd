"""Exception hierarchy shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates an operation's precondition."""


class ConfigurationError(Exception):
    """A run configuration is internally inconsistent."""


class DataFormatError(ValueError):
    """An input file is malformed.

    Carries the path and 1-based line number when known.
    """

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:"
            if line is not None:
                loc += f"{line}:"
            loc += " "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class TrainingError(RuntimeError):
    """Optimization failed (e.g. the loss became non-finite)."""
