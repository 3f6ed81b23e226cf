"""Exception types shared across the package."""


class GraphFormatError(ValueError):
    """Malformed edge or feature file, or invalid graph contents."""

    def __init__(self, message, path=None, line=None, column=None, row=None):
        self.path = path
        self.line = line
        self.column = column
        self.row = row
        super().__init__(message)


class ConfigError(ValueError):
    """Invalid configuration value or unknown key."""


class NonFiniteError(FloatingPointError):
    """A forward pass or loss produced NaN/Inf."""

    def __init__(self, op, detail=""):
        self.op = op
        msg = f"non-finite value produced by {op}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ConvergenceError(RuntimeError):
    def __init__(self, message, last_iterate=None):
        self.last_iterate = last_iterate
        super().__init__(message)


class NotTrainedError(RuntimeError):
    pass
